"""Shipped module configurations.

Lattice coordinates of the flown vehicles are reconstructions from their
pictured shapes (triangles and tetrahedra on the connection lattice); the
metadata of every fixture says so.
"""

from __future__ import annotations

from importlib import resources

from .configfile import configuration_to_text, load_configuration
from .geometry import Configuration, ModulePlacement, make_configuration

FIXTURE_SCALE = 0.3

# Horizontal lattice steps (layer index a+b+c unchanged), 60 degrees apart.
_U = (1, -1, 0)
_V = (1, 0, -1)
_TETRA = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)]

RECONSTRUCTED = "reconstructed lattice coordinates"


def _add(*vs):
    return tuple(sum(c) for c in zip(*vs))


def _scaled(k, v):
    return tuple(k * a for a in v)


def _patch(rows: int, cols: int) -> list[tuple[int, int, int]]:
    return [_add(_scaled(i, _U), _scaled(j, _V)) for i in range(rows) for j in range(cols)]


def _checker(rows: int, cols: int) -> list[int]:
    return [1 if (i + j) % 2 == 0 else -1 for i in range(rows) for j in range(cols)]


def _build(name, positions, orients, spins, note) -> Configuration:
    placements = [ModulePlacement(p, o, s) for p, o, s in zip(positions, orients, spins)]
    return make_configuration(placements, FIXTURE_SCALE, {"name": name, "note": note})


# Ring of the six horizontal neighbours of an empty centre, in angular order.
_RING = [_U, _V, (0, 1, -1), (-1, 1, 0), (-1, 0, 1), (0, -1, 1)]


def _tetra_layers(k: int) -> list[tuple[int, int, int]]:
    """Positions x + k*y for x, y in the unit tetrahedron."""
    return sorted({_add(x, _scaled(k, y)) for x in _TETRA for y in _TETRA}, key=lambda p: (sum(p), p))


def _layered_spins(positions) -> list[int]:
    # alternate within each layer so every layer is spin-balanced where possible
    out, seen = [], {}
    for p in positions:
        layer = sum(p)
        k = seen.get(layer, 0)
        seen[layer] = k + 1
        out.append(1 if (k + layer) % 2 == 0 else -1)
    return out


def _definitions() -> dict[str, Configuration]:
    quad_pos = [(0, 0, 0), _U, _V, _add(_U, _V)]
    deca = sorted({_add(x, y) for x in _TETRA for y in _TETRA}, key=lambda p: (sum(p), p))
    hexadeca = _tetra_layers(2)
    octo = _patch(2, 4)
    arr = _patch(4, 4)
    d12 = _patch(3, 4)
    return {
        "quadrotor": _build("quadrotor", quad_pos, [0] * 4, [1, -1, -1, 1], RECONSTRUCTED + "; 2x2 rhombus, diagonal pairs share spin"),
        "hexarotor": _build("hexarotor", _RING, [0] * 6, [1, -1] * 3, RECONSTRUCTED + "; ring of six"),
        "hexarotor_6dof": _build(
            "hexarotor_6dof", _RING, [1, 3, 2, 1, 3, 2], [1, -1] * 3,
            RECONSTRUCTED + "; ring of six, rotors tilted 41.81 deg",
        ),
        "tetra_quad": _build("tetra_quad", _TETRA, [0] * 4, [1, -1, 1, -1], RECONSTRUCTED + "; unit tetrahedron"),
        "tetra_deca": _build("tetra_deca", deca, [0] * 10, _layered_spins(deca), RECONSTRUCTED + "; three-layer tetrahedron"),
        "tetra_hexadeca": _build(
            "tetra_hexadeca", hexadeca, [0] * 16, _layered_spins(hexadeca), RECONSTRUCTED + "; x + 2y tetrahedron, four layers"
        ),
        "flat_array_4x4": _build("flat_array_4x4", arr, [0] * 16, _checker(4, 4), RECONSTRUCTED + "; flat 4x4 rhombic array"),
        "octo_coplanar": _build("octo_coplanar", octo, [0] * 8, _checker(2, 4), "synthetic overactuated test vehicle"),
        "dodeca12_6dof": _build(
            "dodeca12_6dof", d12, [7, 9, 3, 1, 2, 0, 2, 1, 1, 2, 3, 1], _checker(3, 4),
            "stand-in, not a reproduction: 12 modules, mixed tilts, dof 6, wake-free",
        ),
    }


FIXTURE_NAMES = (
    "quadrotor",
    "hexarotor",
    "hexarotor_6dof",
    "tetra_quad",
    "tetra_deca",
    "tetra_hexadeca",
    "flat_array_4x4",
    "octo_coplanar",
    "dodeca12_6dof",
)

# The seven vehicles that are exercised by every analysis report.
FLOWN_AND_TABLE = FIXTURE_NAMES[:7]


def build_fixture(name: str) -> Configuration:
    defs = _definitions()
    if name not in defs:
        raise KeyError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURE_NAMES)}")
    return defs[name]


def fixture_text(name: str) -> str:
    return configuration_to_text(build_fixture(name))


def fixture_path(name: str):
    return resources.files("dodecopter") / "fixtures" / f"{name}.json"


def load_fixture(name: str) -> Configuration:
    with resources.as_file(fixture_path(name)) as p:
        return load_configuration(p)
