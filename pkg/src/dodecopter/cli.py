"""Command-line front end.

Every command prints one report (JSON by default, ``--text`` for a plain
listing) and writes its artifacts into ``--out``.  Floats in reports are
rounded to 9 significant digits and every report carries a ``provenance``
block with the seed, the parameters in force and checksums of the inputs.

Exit codes: 0 success, 2 usage error, 3 validation error, 4 solver failure.
Failures print ``{"error": ..., "message": ..., "exit_code": ...}`` on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, allocation, configopt, frame
from .configfile import load_configuration, save_configuration
from .dynamics import ModuleParams, assemble_vehicle, hover_vector
from .fixtures import FIXTURE_NAMES, build_fixture, fixture_text

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_SOLVER = 0, 2, 3, 4
SIG_DIGITS = 9


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _round(obj):
    if isinstance(obj, dict):
        return {str(k): _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _round(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
        return float(f"{x:.{SIG_DIGITS}g}")
    return obj


def _text(obj, prefix: str = "") -> list[str]:
    if isinstance(obj, dict):
        out = []
        for k, v in obj.items():
            out += _text(v, f"{prefix}{k}.")
        return out
    if isinstance(obj, list) and obj and isinstance(obj[0], (dict, list)):
        out = []
        for i, v in enumerate(obj):
            out += _text(v, f"{prefix}{i}.")
        return out
    return [f"{prefix[:-1]}: {json.dumps(obj)}"]


def _read_json(path: str):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"file not found: {path}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc


def _sha256(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _matrix6(data, what: str) -> np.ndarray:
    if isinstance(data, dict):
        data = data.get(what, data.get("matrix"))
    M = np.asarray(data, dtype=float)
    if M.shape == (6,):
        M = np.diag(M)
    if M.shape != (6, 6):
        raise ValueError(f"{what} must be a 6x6 matrix or a diagonal of length 6")
    return M


class Context:
    """Parsed common flags: parameters, section, output directory and provenance."""

    def __init__(self, args: argparse.Namespace, argv: list[str]):
        self.args = args
        self.inputs: dict[str, str] = {}
        self.params = ModuleParams.from_dict(self._load("params")) if args.params else ModuleParams()
        self.section = frame.BeamSection.from_dict(self._load("section")) if args.section else frame.BeamSection()
        self.out = Path(args.out)
        self.argv = argv

    def _load(self, flag: str):
        path = getattr(self.args, flag)
        data = _read_json(path)
        self.inputs[path] = _sha256(path)
        return data

    def load(self, path: str):
        data = _read_json(path)
        self.inputs[path] = _sha256(path)
        return data

    def configuration(self):
        path = self.args.config
        if not Path(path).is_file():
            raise UsageError(f"file not found: {path}")
        self.inputs[path] = _sha256(path)
        return load_configuration(path)

    def write(self, name: str, text: str) -> str:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        path.write_text(text, encoding="utf-8")
        return str(path)

    def provenance(self) -> dict:
        return {
            "tool": "dodecopter",
            "version": __version__,
            "argv": self.argv,
            "seed": self.args.seed,
            "threads": self.args.threads,
            "params": self.params.to_dict(),
            "params_source": self.args.params or "default",
            "section": self.section.to_dict(),
            "section_source": self.args.section or "default",
            "inputs": dict(self.inputs),
        }


def _stem(c, path: str) -> str:
    return str(c.meta.get("name") or Path(path).stem)


_REFERENCE: dict = {}


def _quadrotor_indicators(scale: float, section: frame.BeamSection) -> tuple[float, float]:
    key = (scale, tuple(sorted(section.to_dict().items())))
    if key not in _REFERENCE:
        sys_ = frame.assemble_stiffness(frame.build_frame(build_fixture("quadrotor"), scale), section)
        _REFERENCE[key] = (frame.max_compliance(sys_)[0], frame.max_axial_load(sys_)[0])
    return _REFERENCE[key]


def cmd_analyze(ctx: Context) -> dict:
    c = ctx.configuration()
    m = assemble_vehicle(c, ctx.params)
    sys_ = frame.assemble_stiffness(frame.build_frame(c), ctx.section)
    frame.require_connected(sys_)
    s1, _ = frame.max_compliance(sys_)
    s2, member = frame.max_axial_load(sys_)
    q1, q2 = _quadrotor_indicators(c.module_scale, ctx.section)
    return {
        "name": _stem(c, ctx.args.config),
        "n": c.n,
        "dof": m.dof,
        "mass": m.m_total,
        "inertia": m.J,
        "sigma1": s1,
        "sigma2": s2,
        "sigma1_ratio": s1 / q1,
        "sigma2_ratio": s2 / q2,
        "sigma2_member": member,
        "layers": frame.layer_count(c),
        "joints": sys_.frame.n_jt,
        "members": sys_.frame.n_mb,
    }


def _allocation_for(ctx: Context, m, method: str):
    """(allocation, optimal radius or None, command covariance or None)."""
    _, u_h = hover_vector(m)
    if method == "pinv":
        return allocation.pseudo_inverse_allocation(m, u_h), None, None
    if method == "authority":
        Q = _matrix6(ctx.load(ctx.args.Q), "Q") if ctx.args.Q else np.eye(6)
        alloc, r = allocation.max_authority_allocation(m, u_h, allocation.EllipseSpec.from_Q(Q))
        return alloc, r, None
    Sigma = _matrix6(ctx.load(ctx.args.sigma), "Sigma") if ctx.args.sigma else np.eye(6)
    return allocation.min_power_allocation(m, u_h, allocation.PowerModel(Sigma, u_h)), None, Sigma


def cmd_allocate(ctx: Context) -> dict:
    c = ctx.configuration()
    m = assemble_vehicle(c, ctx.params)
    method = ctx.args.method
    alloc, r, Sigma = _allocation_for(ctx, m, method)
    res_range, res_proj = alloc.residuals(m.M_tt)
    if not alloc.is_proper(m.M_tt):
        raise allocation.SolverFailure(f"allocation is not proper: residuals {res_range:.3g}, {res_proj:.3g}")
    radii = {
        axis: allocation.authority_radius(m, alloc, allocation.EllipseSpec.axes(idx))
        for axis, idx in (("forces", (0, 1, 2)), ("torques", (3, 4, 5)))
    }
    radii["all"] = allocation.authority_radius(m, alloc, np.eye(6))
    name = _stem(c, ctx.args.config)
    payload = {"method": alloc.method, "C": alloc.C, "H": alloc.H, "u_h": alloc.u_h, "t_h": alloc.t_h}
    path = ctx.write(f"{name}_allocation_{method}.json", json.dumps(_round(payload), indent=2) + "\n")
    report = {
        "name": name,
        "method": alloc.method,
        "residual_MC_minus_H": res_range,
        "residual_CH_minus_C": res_proj,
        "authority_radius": radii,
        "u_h": alloc.u_h,
        "C": alloc.C,
        "file": path,
    }
    if r is not None:
        report["optimal_radius"] = r
    if Sigma is not None:
        report["module_powers"] = allocation.module_powers(alloc.C, alloc.u_h, Sigma)
    return report


def cmd_reachable(ctx: Context) -> dict:
    c = ctx.configuration()
    m = assemble_vehicle(c, ctx.params)
    name = _stem(c, ctx.args.config)
    report: dict = {"name": name, "global": {}}
    for label, axes in (("forces", (0, 1, 2)), ("torques", (3, 4, 5))):
        poly = allocation.reachable_global(m, axes)
        dim = poly.basis.shape[1]
        entry = {"dimension": dim, "vertices": len(poly.points)}
        if poly.simplices is not None:
            entry["file"] = ctx.write(f"{name}_reachable_{label}.off", poly.to_off())
            entry["facets"] = len(poly.simplices)
        else:
            data = {"points": poly.points, "center": poly.center, "basis": poly.basis}
            entry["file"] = ctx.write(f"{name}_reachable_{label}.json", json.dumps(_round(data), indent=2) + "\n")
        report["global"][label] = entry
    alloc = allocation.pseudo_inverse_allocation(m)
    under = allocation.reachable_under(m, alloc)
    data = {"G": under.G, "h": under.h, "note": "offsets t from hover with A (u_h + C t) <= b"}
    report["pinv_halfspaces"] = {"rows": len(under.h), "file": ctx.write(f"{name}_reachable_pinv.json", json.dumps(_round(data), indent=2) + "\n")}
    return report


def cmd_frame(ctx: Context) -> dict:
    c = ctx.configuration()
    sys_ = frame.assemble_stiffness(frame.build_frame(c), ctx.section)
    frame.require_connected(sys_)
    s1, P1 = frame.max_compliance(sys_)
    v1 = frame.solve_displacements(sys_, P1)
    s2, member = frame.max_axial_load(sys_)
    P2 = frame.worst_axial_forces(sys_, member)
    v2 = frame.solve_displacements(sys_, P2)
    axial = frame.member_loads(sys_, v2)[:, 0]
    name = _stem(c, ctx.args.config)
    shape = {
        "joints": sys_.frame.joints,
        "members": sys_.frame.members,
        "sigma1_load": P1.reshape(-1, 6),
        "sigma1_displacement": v1.reshape(-1, 6),
        "sigma2_load": P2.reshape(-1, 6),
        "sigma2_axial_forces": axial,
    }
    path = ctx.write(f"{name}_frame.json", json.dumps(_round(shape)) + "\n")
    return {
        "name": name,
        "sigma1": s1,
        "sigma2": s2,
        "sigma2_member": member,
        "max_displacement": float(np.abs(v1.reshape(-1, 6)[:, :3]).max()),
        "load_imbalance": float(np.abs(frame.load_imbalance(sys_, P1)).max()),
        "joints": sys_.frame.n_jt,
        "members": sys_.frame.n_mb,
        "file": path,
    }


def _objective(ctx: Context) -> tuple[int, configopt.ObjectiveSpec]:
    if not ctx.args.objective:
        raise UsageError("--objective is required")
    data = ctx.load(ctx.args.objective)
    if not isinstance(data, dict):
        raise ValueError("objective file must hold a JSON object")
    n, spec = configopt.ObjectiveSpec.from_dict(data)
    if ctx.args.params:
        spec.params = ctx.params
    if ctx.args.section:
        spec.section = ctx.section
    return n, spec


def cmd_optimize(ctx: Context) -> dict:
    n, spec = _objective(ctx)
    model = configopt.build_model(configopt.build_graph(n), n, spec)
    limits = configopt.SearchLimits(threads=ctx.args.threads)
    if ctx.args.node_limit is not None:
        limits.node_limit = ctx.args.node_limit
    if ctx.args.time_limit is not None:
        limits.time_limit = ctx.args.time_limit
    if ctx.args.backend == "exhaustive":
        res = configopt.solve_exhaustive(model, limits)
    else:
        res = configopt.solve_branch_and_bound(model, limits)
    report = {"objective": spec.kind, "n": n, "backend": ctx.args.backend, "status": res.status}
    if res.assignment is None:
        raise configopt.ConfigOptError(f"no feasible configuration ({res.status})")
    conf = res.configuration(model)
    path = ctx.out / "optimized.json"
    ctx.out.mkdir(parents=True, exist_ok=True)
    save_configuration(conf, path)
    report.update(
        {
            "lambda": res.objective,
            "evaluations": res.evaluations,
            "nodes": res.nodes,
            "gap": res.gap,
            "verified": bool(res.report and res.report.passed),
            "modules": [{"pos": p.lattice_pos, "orient": p.orientation, "spin": p.spin} for p in conf.placements],
            "file": str(path),
        }
    )
    if spec.uses_allocation:
        report["authority_radius"] = 1.0 / res.objective if res.objective > 0 else math.inf
    return report


def cmd_export_mip(ctx: Context) -> dict:
    n, spec = _objective(ctx)
    model = configopt.build_model(configopt.build_graph(n), n, spec)
    ctx.out.mkdir(parents=True, exist_ok=True)
    path = ctx.out / f"model_n{n}_{spec.kind}.txt"
    counts = configopt.export_model(model, path)
    return {"objective": spec.kind, "n": n, "counts": counts, "file": str(path)}


def cmd_fixtures(ctx: Context) -> dict:
    names = ctx.args.names or list(FIXTURE_NAMES)
    unknown = [nm for nm in names if nm not in FIXTURE_NAMES]
    if unknown:
        raise UsageError(f"unknown fixtures {unknown}; choose from {', '.join(FIXTURE_NAMES)}")
    files = [ctx.write(f"{nm}.json", fixture_text(nm)) for nm in names]
    return {"fixtures": names, "files": files}


COMMANDS = {
    "analyze": cmd_analyze,
    "allocate": cmd_allocate,
    "reachable": cmd_reachable,
    "frame": cmd_frame,
    "optimize": cmd_optimize,
    "export-mip": cmd_export_mip,
    "fixtures": cmd_fixtures,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--params", help="module parameter JSON")
    common.add_argument("--section", help="beam section JSON")
    common.add_argument("--out", default=".", help="directory for written artifacts")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--text", action="store_true", help="plain key: value report instead of JSON")
    p = _Parser(prog="dodecopter", description="Dodecahedral modular multirotor toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("analyze", "reachable", "frame"):
        sub.add_parser(name, parents=[common]).add_argument("config")
    a = sub.add_parser("allocate", parents=[common])
    a.add_argument("config")
    a.add_argument("--method", choices=("pinv", "authority", "power"), default="pinv")
    a.add_argument("--Q", help="6x6 ellipse matrix JSON for --method authority")
    a.add_argument("--sigma", help="6x6 command covariance JSON for --method power")
    for name in ("optimize", "export-mip"):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("--objective", help="objective JSON")
        if name == "optimize":
            s.add_argument("--backend", choices=("exhaustive", "bnb"), default="exhaustive")
            s.add_argument("--node-limit", type=int)
            s.add_argument("--time-limit", type=float)
    f = sub.add_parser("fixtures", parents=[common])
    f.add_argument("names", nargs="*")
    return p


def _fail(code: int, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")
    return code


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        ctx = Context(args, argv)
        report = COMMANDS[args.command](ctx)
        report["provenance"] = ctx.provenance()
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    except (allocation.AllocationError, configopt.ConfigOptError, RuntimeError) as exc:
        return _fail(EXIT_SOLVER, exc)
    except (ValueError, KeyError, TypeError) as exc:
        return _fail(EXIT_VALIDATION, exc)
    report = _round(report)
    if args.text:
        sys.stdout.write("\n".join(_text(report)) + "\n")
    else:
        sys.stdout.write(json.dumps(report, indent=2) + "\n")
    return EXIT_OK


def main() -> None:
    sys.exit(run())
