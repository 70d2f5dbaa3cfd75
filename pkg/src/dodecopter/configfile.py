"""Reading and writing configuration files.

Canonical layout (one module per line, stable key order)::

    {
      "module_scale": 0.3,
      "modules": [
        {"pos": [0, 0, 0], "orient": 0, "spin": 1},
        ...
      ],
      "meta": {...}
    }

``meta`` is optional and carried through untouched.
"""

from __future__ import annotations

import json
from pathlib import Path

from .geometry import Configuration, GeometryError, ModulePlacement, make_configuration


class ParseError(ValueError):
    pass


class ValidationError(ValueError):
    pass


def _fail(where: str, msg: str) -> ParseError:
    return ParseError(f"{where}: {msg}")


def configuration_from_dict(d: dict) -> Configuration:
    if not isinstance(d, dict):
        raise _fail("<root>", "expected a JSON object")
    extra = set(d) - {"module_scale", "modules", "meta"}
    if extra:
        raise _fail("<root>", f"unknown fields {sorted(extra)}")
    scale = d.get("module_scale", 1.0)
    if isinstance(scale, bool) or not isinstance(scale, (int, float)) or scale <= 0:
        raise _fail("module_scale", "must be a positive number")
    mods = d.get("modules")
    if not isinstance(mods, list) or not mods:
        raise _fail("modules", "must be a nonempty list")
    placements = []
    for i, m in enumerate(mods):
        where = f"modules[{i}]"
        if not isinstance(m, dict):
            raise _fail(where, "expected an object")
        pos = m.get("pos")
        if not (isinstance(pos, list) and len(pos) == 3 and all(isinstance(a, int) and not isinstance(a, bool) for a in pos)):
            raise _fail(where + ".pos", "must be three integers")
        orient = m.get("orient", 0)
        if not isinstance(orient, int) or isinstance(orient, bool) or not 0 <= orient < 20:
            raise _fail(where + ".orient", f"orientation index must be in [0, 20), got {orient!r}")
        spin = m.get("spin", 1)
        if spin not in (-1, 1) or isinstance(spin, bool):
            raise _fail(where + ".spin", f"spin must be 1 or -1, got {spin!r}")
        extra = set(m) - {"pos", "orient", "spin"}
        if extra:
            raise _fail(where, f"unknown fields {sorted(extra)}")
        placements.append(ModulePlacement(tuple(pos), orient, spin))
    meta = d.get("meta", {})
    if not isinstance(meta, dict):
        raise _fail("meta", "must be an object")
    try:
        return make_configuration(placements, float(scale), meta)
    except GeometryError as e:
        raise ValidationError(str(e)) from e


def configuration_to_text(c: Configuration) -> str:
    scale = c.module_scale
    scale_txt = json.dumps(int(scale) if float(scale).is_integer() else scale)
    lines = ["{", f'  "module_scale": {scale_txt},', '  "modules": [']
    rows = [
        json.dumps({"pos": list(p.lattice_pos), "orient": p.orientation, "spin": p.spin})
        for p in c.placements
    ]
    lines += ["    " + r + ("," if k < len(rows) - 1 else "") for k, r in enumerate(rows)]
    if c.meta:
        lines.append("  ],")
        lines.append('  "meta": ' + json.dumps(c.meta, sort_keys=True))
    else:
        lines.append("  ]")
    lines.append("}")
    return "\n".join(lines) + "\n"


def load_configuration(path) -> Configuration:
    text = Path(path).read_text(encoding="utf-8")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"line {e.lineno}: {e.msg}") from e
    return configuration_from_dict(d)


def save_configuration(c: Configuration, path) -> None:
    Path(path).write_text(configuration_to_text(c), encoding="utf-8")
