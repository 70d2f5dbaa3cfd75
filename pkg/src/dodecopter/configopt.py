"""Mixed-integer configuration optimization.

A configuration of ``n`` modules is encoded on a finite piece of the
connection lattice (the admissible graph) by binaries for occupied
positions, rotor orientations and spin directions.  Contiguity uses a flow
to one artificial sink, wake exclusion forbids modules sitting in another
rotor's slipstream cylinder, and every binary-times-continuous product of
the allocation and stiffness equations is replaced by a big-M auxiliary.

Three objectives share the model; all of them minimize a scalar ``lam``:

``torque_authority``
    ``lam = 1/r`` where ``r`` is the radius of the largest ball of pure
    torques that the allocation maps into the control bounds.
``ellipse_authority``
    the same for the ellipse ``t^T Q t <= r^2``.
``structural_bound``
    ``lam >= ||K^+ c||`` for the radial probe load ``c`` (every module
    pushed away from the mass centre), relative to a reference compact
    configuration of the same size.

Two desk-scale backends are provided.  The exhaustive one evaluates every
candidate with the real actuation matrices and frames; branch and bound
works on the linearized model with conic relaxations.  Both return
assignments that pass :func:`verify_assignment`.

Exported model format (``export_model``)::

    \\ free-form comment lines
    NAME <model name>
    SIZES <vars> <rows> <cones>
    MINIMIZE
     obj: <coef> <var> <coef> <var> ...
    VARIABLES
     <var> <B|C> <lb> <ub>
    SUBJECT TO
     <row> <tag>: <coef> <var> ... <=|>=|= <rhs>
    CONES
     <cone> <tag> <dim>
      t: <coef> <var> ... + <d>           ||F x + g|| <= h x + d, this is h, d
      f: <coef> <var> ... + <g_k>         one line per row of F
    END

Coefficients are written with ``repr`` so a file re-reads to identical data.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, milp
from scipy.spatial import cKDTree

from . import socp
from .allocation import EllipseSpec
from .dynamics import ModuleParams, actuation_matrices
from .fixtures import FIXTURE_SCALE
from .frame import BeamSection, assemble_stiffness, frame_from_modules
from .geometry import (
    ModulePlacement,
    build_dodecahedron,
    connection_lattice_offsets,
    lattice_point,
    make_configuration,
    orientation_directions,
)

OBJECTIVES = ("torque_authority", "ellipse_authority", "structural_bound")
INT_TOL = 1e-6
VERIFY_TOL = 1e-6
BIGM_MARGIN = 1e-6
RELAX_MARGIN = 1e-6
DEFAULT_MAX_LEAVES = 10**7


class ConfigOptError(RuntimeError):
    pass


class InfeasibleSkeleton(ConfigOptError):
    pass


class SearchTooLarge(ConfigOptError):
    pass


class BigMBinding(ConfigOptError):
    pass


class ModelFormatError(ValueError):
    pass


# --- admissible graph ----------------------------------------------------------


@dataclass(frozen=True)
class AdmissibleGraph:
    vertices: tuple[tuple[int, int, int], ...]
    edges: tuple[tuple[int, int], ...]
    depth: int

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def index(self, v) -> int:
        return self.vertices.index(tuple(int(a) for a in v))

    def adjacency(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in self.vertices]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return adj

    def canonical_positions(self) -> np.ndarray:
        """Vertex centres in module units (inradius 1)."""
        return np.array([lattice_point(v) for v in self.vertices])


def build_graph(n_modules: int) -> AdmissibleGraph:
    """G_d with d = floor(n/2): breadth-first expansion from the origin."""
    if n_modules < 1:
        raise ValueError("n_modules must be at least 1")
    depth = n_modules // 2
    offs = connection_lattice_offsets()
    order = [(0, 0, 0)]
    seen = {order[0]}
    frontier = [order[0]]
    for _ in range(depth):
        nxt = []
        for v in frontier:
            for o in offs:
                q = (v[0] + o[0], v[1] + o[1], v[2] + o[2])
                if q not in seen:
                    seen.add(q)
                    order.append(q)
                    nxt.append(q)
        frontier = nxt
    index = {v: i for i, v in enumerate(order)}
    edges = set()
    for v, i in index.items():
        for o in offs:
            j = index.get((v[0] + o[0], v[1] + o[1], v[2] + o[2]))
            if j is not None:
                edges.add((min(i, j), max(i, j)))
    return AdmissibleGraph(tuple(order), tuple(sorted(edges)), depth)


def is_connected(adj: list[list[int]], chosen) -> bool:
    chosen = list(chosen)
    if not chosen:
        return False
    inside = set(chosen)
    seen = {chosen[0]}
    queue = deque([chosen[0]])
    while queue:
        i = queue.popleft()
        for j in adj[i]:
            if j in inside and j not in seen:
                seen.add(j)
                queue.append(j)
    return len(seen) == len(inside)


# --- wake ----------------------------------------------------------------------


@dataclass(frozen=True)
class WakeParams:
    """Slipstream cylinder below each rotor, in module units (inradius 1)."""

    enabled: bool = True
    radius: float | None = None
    length: float = math.inf

    @property
    def resolved_radius(self) -> float:
        return build_dodecahedron().circumradius if self.radius is None else float(self.radius)

    @classmethod
    def from_dict(cls, d: dict | None) -> "WakeParams":
        d = dict(d or {})
        extra = set(d) - {"enabled", "radius", "length"}
        if extra:
            raise ValueError(f"unknown wake fields {sorted(extra)}")
        length = d.get("length", math.inf)
        return cls(bool(d.get("enabled", True)), d.get("radius"), math.inf if length is None else float(length))

    def to_dict(self) -> dict:
        return {"enabled": self.enabled, "radius": self.resolved_radius, "length": None if math.isinf(self.length) else self.length}


def wake_predicate(x, y, eta, params: WakeParams | None = None) -> bool:
    """Whether a module centred at ``x`` sits in the wake of the rotor at ``y`` thrusting along ``eta``.

    The wake leaves the rotor along ``-eta``; ``x`` is affected when it is
    downstream, closer to the wake axis than the radius and nearer than the
    wake length.
    """
    p = params or WakeParams()
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    axial = -float(d @ eta)
    if axial <= 0:
        return False
    radial = float(np.linalg.norm(d + axial * eta))
    return radial < p.resolved_radius and axial < p.length


# --- objective -----------------------------------------------------------------


@dataclass(eq=False)
class ObjectiveSpec:
    kind: str
    axes: tuple[int, ...] = (0, 1, 2, 3, 4, 5)
    Q: np.ndarray | None = None
    orientations: tuple[int, ...] = tuple(range(20))
    wake: WakeParams = field(default_factory=WakeParams)
    u_hover: float | None = None
    module_scale: float = FIXTURE_SCALE
    params: ModuleParams = field(default_factory=ModuleParams)
    section: BeamSection = field(default_factory=BeamSection)

    def __post_init__(self) -> None:
        if self.kind not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.kind!r}")
        self.axes = tuple(sorted({int(a) for a in self.axes}))
        if not self.axes or any(not 0 <= a < 6 for a in self.axes):
            raise ValueError("axes must be a nonempty subset of 0..5")
        self.orientations = tuple(int(k) for k in self.orientations)
        if not self.orientations or len(set(self.orientations)) != len(self.orientations):
            raise ValueError("orientations must be a nonempty list without repeats")
        if any(not 0 <= k < 20 for k in self.orientations):
            raise ValueError("orientation indices must lie in [0, 20)")
        if self.kind == "ellipse_authority":
            if self.Q is None:
                raise ValueError("ellipse_authority needs Q")
            self.Q = np.asarray(self.Q, dtype=float)
            EllipseSpec.from_Q(self.Q)
        if self.module_scale <= 0:
            raise ValueError("module_scale must be positive")
        u = self.hover_level
        if not self.params.u_min < u < self.params.u_max:
            raise ValueError("hover level must lie strictly inside the control bounds")

    @property
    def uses_allocation(self) -> bool:
        return self.kind != "structural_bound"

    @property
    def hover_level(self) -> float:
        """Nominal hover input of every module (vertical-rotor hover by default)."""
        if self.u_hover is not None:
            return float(self.u_hover)
        p = self.params
        return p.m_mdl * p.g / p.k_th

    @property
    def slack(self) -> float:
        u = self.hover_level
        return min(self.params.u_max - u, u - self.params.u_min)

    @property
    def H(self) -> np.ndarray:
        H = np.zeros((6, 6))
        H[self.axes, self.axes] = 1.0
        return H

    @property
    def L(self) -> np.ndarray:
        if self.kind == "ellipse_authority":
            return EllipseSpec.from_Q(self.Q).L
        return np.eye(6)[:, 3:]

    @classmethod
    def from_dict(cls, d: dict) -> tuple[int, "ObjectiveSpec"]:
        """Parse ``{"objective": ..., "n": ..., "wake": {...}, "Q": [...], ...}``; returns (n, spec)."""
        d = dict(d)
        known = {"objective", "n", "wake", "Q", "axes", "orientations", "u_hover", "module_scale", "params", "section"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown objective fields {sorted(extra)}")
        if "objective" not in d or "n" not in d:
            raise ValueError("objective spec needs 'objective' and 'n'")
        n = d["n"]
        if isinstance(n, bool) or not isinstance(n, int) or n < 1:
            raise ValueError("n must be a positive integer")
        kw = {"kind": d["objective"], "wake": WakeParams.from_dict(d.get("wake"))}
        if "Q" in d:
            kw["Q"] = np.asarray(d["Q"], dtype=float)
        for key in ("axes", "orientations"):
            if key in d:
                kw[key] = tuple(d[key])
        if d.get("u_hover") is not None:
            kw["u_hover"] = float(d["u_hover"])
        if "module_scale" in d:
            kw["module_scale"] = float(d["module_scale"])
        if "params" in d:
            kw["params"] = ModuleParams.from_dict(d["params"])
        if "section" in d:
            kw["section"] = BeamSection.from_dict(d["section"])
        return n, cls(**kw)

    def to_dict(self) -> dict:
        out = {
            "objective": self.kind,
            "axes": list(self.axes),
            "orientations": list(self.orientations),
            "wake": self.wake.to_dict(),
            "u_hover": self.hover_level,
            "module_scale": self.module_scale,
        }
        if self.Q is not None:
            out["Q"] = np.asarray(self.Q).tolist()
        return out


@dataclass(frozen=True)
class ModelFlags:
    """``anchor`` fixes a module at the graph origin, which removes lattice translations."""

    anchor: bool = True
    valid_cuts: bool = True


# --- model ---------------------------------------------------------------------


class _Builder:
    def __init__(self) -> None:
        self.names: list[str] = []
        self.kinds: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.r: list[int] = []
        self.c: list[int] = []
        self.v: list[float] = []
        self.sense: list[str] = []
        self.rhs: list[float] = []
        self.tags: list[str] = []
        self.row_names: list[str] = []
        self.cones: list[tuple[str, str, socp.SocConstraint]] = []

    def var(self, prefix: str, shape, kind: str, lb: float, ub: float) -> np.ndarray:
        shape = tuple(shape) if isinstance(shape, (tuple, list)) else (shape,)
        count = int(np.prod(shape)) if shape else 1
        start = len(self.names)
        for multi in itertools.product(*[range(s) for s in shape]):
            self.names.append(f"{prefix}[{','.join(map(str, multi))}]" if multi else prefix)
        self.kinds += [kind] * count
        self.lb += [lb] * count
        self.ub += [ub] * count
        return np.arange(start, start + count).reshape(shape)

    def row(self, tag: str, idx, coef, sense: str, rhs: float) -> None:
        k = len(self.rhs)
        idx = np.atleast_1d(np.asarray(idx, dtype=int)).ravel()
        coef = np.broadcast_to(np.asarray(coef, dtype=float), idx.shape).ravel()
        keep = coef != 0
        self.r += [k] * int(keep.sum())
        self.c += idx[keep].tolist()
        self.v += coef[keep].tolist()
        self.sense.append(sense)
        self.rhs.append(float(rhs))
        self.tags.append(tag)
        self.row_names.append(f"r{k}")

    def cone(self, tag: str, F: sparse.spmatrix, g, h, d) -> None:
        n = len(self.names)
        F = sparse.csr_matrix(F, shape=(F.shape[0], n))
        self.cones.append((tag, f"k{len(self.cones)}", socp.SocConstraint(F, np.asarray(g, float), np.asarray(h, float), float(d))))

    def matrix(self) -> sparse.csr_matrix:
        return sparse.csr_matrix((self.v, (self.r, self.c)), shape=(len(self.rhs), len(self.names)))


@dataclass(eq=False)
class ConfigModel:
    graph: AdmissibleGraph
    n: int
    objective: ObjectiveSpec
    flags: ModelFlags
    var_names: list[str]
    var_kinds: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    A: sparse.csr_matrix
    sense: np.ndarray
    rhs: np.ndarray
    row_tags: list[str]
    row_names: list[str]
    cones: list[tuple[str, str, socp.SocConstraint]]
    c: np.ndarray
    blocks: dict[str, np.ndarray]
    meta: dict

    @property
    def num_vars(self) -> int:
        return len(self.var_names)

    @property
    def binaries(self) -> np.ndarray:
        return np.flatnonzero(self.var_kinds == "B")

    def counts(self) -> dict:
        return {
            "variables": self.num_vars,
            "binaries": int(self.binaries.size),
            "rows": int(self.rhs.size),
            "cones": len(self.cones),
        }

    def to_socp(self, lb=None, ub=None) -> socp.SocpProblem:
        return _to_socp(self.A, self.sense, self.rhs, self.cones, self.c, self.lb if lb is None else lb, self.ub if ub is None else ub)

    def tag_residuals(self, x) -> dict[str, float]:
        return tag_residuals(self.A, self.sense, self.rhs, self.row_tags, self.cones, x)


def _to_socp(A, sense, rhs, cones, c, lb, ub) -> socp.SocpProblem:
    eq = sense == "E"
    le = sense == "L"
    ge = sense == "G"
    A_in = sparse.vstack([A[le], -A[ge]]).tocsr()
    b_in = np.concatenate([rhs[le], -rhs[ge]])
    return socp.SocpProblem(A.shape[1], c, A[eq], rhs[eq], A_in, b_in, [k for _, _, k in cones], lb, ub)


def tag_residuals(A, sense, rhs, tags, cones, x) -> dict[str, float]:
    """Largest violation per constraint tag (equalities in absolute value)."""
    x = np.asarray(x, dtype=float)
    ax = A @ x - rhs
    viol = np.where(sense == "E", np.abs(ax), np.where(sense == "L", np.maximum(ax, 0.0), np.maximum(-ax, 0.0)))
    out: dict[str, float] = {}
    for t, v in zip(tags, viol):
        out[t] = max(out.get(t, 0.0), float(v))
    for t, _, k in cones:
        v = float(np.linalg.norm(k.F @ x + k.g) - (k.h @ x + k.d))
        out[t] = max(out.get(t, 0.0), max(v, 0.0))
    return out


def _single_module_columns(spec: ObjectiveSpec) -> np.ndarray:
    D = orientation_directions()[list(spec.orientations)]
    cols = []
    for eps in (1, -1):
        th, to = actuation_matrices(np.zeros((len(D), 3)), D, [eps] * len(D), spec.params)
        cols.append(np.vstack([th, to]))
    return np.hstack(cols)


def _c_max(spec: ObjectiveSpec, n: int) -> float:
    s = np.linalg.svd(_single_module_columns(spec), compute_uv=False)
    s_min = s[s > 1e-8 * s[0]].min()
    return 10.0 * n * spec.params.u_max / s_min


def _metres(graph: AdmissibleGraph, scale: float) -> np.ndarray:
    return graph.canonical_positions() * (scale / build_dodecahedron().edge_length)


def _module_joints(frame, centers: np.ndarray, scale: float) -> np.ndarray:
    """(modules, 20) joint index of every module vertex in ``frame``."""
    model = build_dodecahedron()
    unit = scale / model.edge_length
    raw = (centers[:, None, :] + model.vertices[None, :, :] * unit).reshape(-1, 3)
    dist, idx = cKDTree(frame.joints).query(raw)
    if dist.max() > 1e-6 * scale:
        raise ConfigOptError("module vertices do not match frame joints")
    return idx.reshape(len(centers), 20)


def radial_probe(frame, centers: np.ndarray, scale: float) -> np.ndarray:
    """Balanced load pushing every module centre away from the origin.

    Module ``i`` at ``p_i`` (metres, mass centre at the origin) carries the
    force ``p_i / scale`` spread evenly over its 20 joints.
    """
    jm = _module_joints(frame, centers, scale)
    P = np.zeros((frame.n_jt, 6))
    for i, p in enumerate(centers):
        np.add.at(P[:, :3], jm[i], p / scale / 20.0)
    return P.ravel()


def structural_value_raw(centers: np.ndarray, spec: ObjectiveSpec) -> tuple[float, np.ndarray, object]:
    """||K^+ c|| for the radial probe on modules at ``centers`` (already centred)."""
    frame = frame_from_modules(centers, spec.module_scale)
    sys = assemble_stiffness(frame, spec.section)
    if sys.zero_modes != 6:
        raise ConfigOptError("module frames are not connected")
    c = radial_probe(frame, centers, spec.module_scale)
    w = sys.K_pinv @ c
    return float(np.linalg.norm(w)), w, sys


def _reference_vertices(graph: AdmissibleGraph, n: int) -> list[int]:
    # breadth-first order from the origin, so every prefix is connected
    return list(range(n))


def build_model(g: AdmissibleGraph, n: int, objective: ObjectiveSpec, flags: ModelFlags | None = None) -> ConfigModel:
    flags = flags or ModelFlags()
    spec = objective
    N = g.n_vertices
    if n < 1:
        raise ValueError("n must be at least 1")
    if n > N:
        raise InfeasibleSkeleton(f"{n} modules do not fit in a graph of {N} vertices")
    X = _metres(g, spec.module_scale)
    Xc = g.canonical_positions()
    D = orientation_directions()[list(spec.orientations)]
    nO = len(spec.orientations)
    adj = g.adjacency()
    wake_pairs = _wake_triples(g, spec) if spec.wake.enabled else []
    _check_skeleton(g, n, spec, wake_pairs, flags)

    b = _Builder()
    beta = b.var("b", N, "B", 0.0, 1.0)
    bo = b.var("bo", (N, nO), "B", 0.0, 1.0)
    bs = b.var("bs", (N, 2), "B", 0.0, 1.0)
    gam = b.var("g", N, "B", 0.0, 1.0)
    arcs = [(i, j) for i, j in g.edges] + [(j, i) for i, j in g.edges]
    dlt = b.var("d", len(arcs), "C", 0.0, math.inf)
    z_max = float(np.abs(X).max()) if N > 1 else 0.0
    z = b.var("z", 3, "C", -z_max, z_max)
    lam = b.var("lam", (), "C", 0.0, math.inf)
    blocks = {"beta": beta, "orient": bo, "spin": bs, "sink": gam, "flow": dlt, "z": z, "lam": lam}
    meta: dict = {"arcs": arcs, "positions": X, "z_max": z_max, "wake_pairs": len(wake_pairs)}

    b.row("cardinality", beta, 1.0, "E", n)
    for x in range(N):
        b.row("orientation", np.r_[bo[x], beta[x]], np.r_[np.ones(nO), -1.0], "E", 0.0)
        b.row("spin", np.r_[bs[x], beta[x]], [1.0, 1.0, -1.0], "E", 0.0)
    if flags.anchor:
        b.row("anchor", beta[0], 1.0, "E", 1.0)
    for a in range(3):
        b.row("offset", np.r_[z[a], beta], np.r_[n, X[:, a]], "E", 0.0)

    out_arcs = [[] for _ in range(N)]
    in_arcs = [[] for _ in range(N)]
    for k, (i, j) in enumerate(arcs):
        out_arcs[i].append(k)
        in_arcs[j].append(k)
    for x in range(N):
        o, i_ = dlt[out_arcs[x]], dlt[in_arcs[x]]
        b.row("flow_balance", np.r_[o, i_, beta[x], gam[x]], np.r_[np.ones(len(o)), -np.ones(len(i_)), -1.0, n], "L", 0.0)
        b.row("flow_capacity", np.r_[o, beta[x]], np.r_[np.ones(len(o)), -(n - 1)], "L", 0.0)
        b.row("sink_allocated", [gam[x], beta[x]], [1.0, -1.0], "L", 0.0)
    b.row("sink_unique", gam, 1.0, "E", 1.0)

    for x, y, k in wake_pairs:
        b.row("wake", [beta[x], bo[y, k]], [1.0, 1.0], "L", 1.0)

    if spec.uses_allocation:
        _allocation_block(b, blocks, meta, spec, n, N, X, D, beta, bo, bs, z, lam, flags)
    else:
        _structural_block(b, blocks, meta, spec, g, n, N, X, beta, z, z_max, lam)

    c = np.zeros(len(b.names))
    c[lam] = 1.0
    meta["adjacency"] = adj
    meta["canonical"] = Xc
    return ConfigModel(
        graph=g,
        n=n,
        objective=spec,
        flags=flags,
        var_names=b.names,
        var_kinds=np.array(b.kinds),
        lb=np.array(b.lb, dtype=float),
        ub=np.array(b.ub, dtype=float),
        A=b.matrix(),
        sense=np.array(b.sense),
        rhs=np.array(b.rhs, dtype=float),
        row_tags=b.tags,
        row_names=b.row_names,
        cones=b.cones,
        c=c,
        blocks=blocks,
        meta=meta,
    )


def _wake_triples(g: AdmissibleGraph, spec: ObjectiveSpec) -> list[tuple[int, int, int]]:
    Xc = g.canonical_positions()
    D = orientation_directions()
    out = []
    for y in range(g.n_vertices):
        for k, o in enumerate(spec.orientations):
            for x in range(g.n_vertices):
                if x != y and wake_predicate(Xc[x], Xc[y], D[o], spec.wake):
                    out.append((x, y, k))
    return out


def _check_skeleton(g, n, spec, wake_pairs, flags) -> None:
    if n == 1 or not wake_pairs:
        return
    shadow = set(wake_pairs)
    nO = len(spec.orientations)
    # every configuration of two or more modules contains an edge; it needs compatible orientations
    for i, j in g.edges:
        for ki in range(nO):
            if (j, i, ki) in shadow:
                continue
            if any((i, j, kj) not in shadow for kj in range(nO)):
                return
    raise InfeasibleSkeleton("wake rows exclude every pair of connected modules")


def _bigm(b: _Builder, tag: str, aux: int, var: int, ind: int, M: float) -> None:
    """aux = ind * var for a binary ind and |var| <= M."""
    b.row(tag, [aux, ind], [1.0, -M], "L", 0.0)
    b.row(tag, [aux, ind], [1.0, M], "G", 0.0)
    b.row(tag, [aux, var, ind], [1.0, -1.0, M], "L", M)
    b.row(tag, [aux, var, ind], [1.0, -1.0, -M], "G", -M)


def _bigm_expr(b: _Builder, tag: str, aux: int, idx, coef, ind: int, M: float) -> None:
    """aux = ind * (coef @ x[idx]) for a binary ind and |coef @ x[idx]| <= M."""
    idx = np.asarray(idx)
    coef = np.asarray(coef, dtype=float)
    b.row(tag, [aux, ind], [1.0, -M], "L", 0.0)
    b.row(tag, [aux, ind], [1.0, M], "G", 0.0)
    b.row(tag, np.r_[aux, idx, ind], np.r_[1.0, -coef, M], "L", M)
    b.row(tag, np.r_[aux, idx, ind], np.r_[1.0, -coef, -M], "G", -M)


def _allocation_block(b, blocks, meta, spec, n, N, X, D, beta, bo, bs, z, lam, flags) -> None:
    p = spec.params
    nO = len(D)
    H = spec.H
    L = spec.L
    M = _c_max(spec, n)
    C = b.var("C", (N, 6), "C", -M, M)
    zeta = b.var("zeta", (N, nO, 6), "C", -M, M)
    om = b.var("om", (N, 6, 3), "C", -M, M)
    blocks.update({"C": C, "zeta": zeta, "omega": om})
    meta.update({"C_max": M, "H": H, "L": L, "slack": spec.slack})
    for x in range(N):
        for j in range(6):
            b.row("bigM_C", [C[x, j], beta[x]], [1.0, -M], "L", 0.0)
            b.row("bigM_C", [C[x, j], beta[x]], [1.0, M], "G", 0.0)
            for k in range(nO):
                _bigm(b, "bigM_zeta", zeta[x, k, j], C[x, j], bo[x, k], M)
            if flags.valid_cuts:
                b.row("bigM_zeta_sum", np.r_[zeta[x, :, j], C[x, j]], np.r_[np.ones(nO), -1.0], "E", 0.0)
            for a in range(3):
                # v = sum_k eta_k[a] zeta[x, k, j] is the a-th entry of eta_x * C[x, j]
                _bigm_expr(b, "bigM_omega", om[x, j, a], zeta[x, :, j], D[:, a], bs[x, 0], M)
    Hth = H[0:3]
    for j in range(6):
        for a in range(3):
            b.row("actuation_thrust", zeta[:, :, j].ravel(), np.tile(p.k_th * D[:, a], N), "E", H[a, j])
        zcross = -_skew(Hth[:, j])  # z x h = -h x z
        for a in range(3):
            idx, coef = [], []
            for x in range(N):
                lever = np.cross(X[x], D)[:, a]
                idx += list(zeta[x, :, j]) + [om[x, j, a]]
                coef += list(p.k_th * lever - p.k_to * D[:, a]) + [2.0 * p.k_to]
            idx += list(z)
            coef += list(zcross[a])
            b.row("actuation_torque", idx, coef, "E", H[3 + a, j])
    P = np.eye(6) - H
    for x in range(N):
        for j in range(6):
            if np.any(P[:, j]):
                b.row("allocation_projector", C[x], P[:, j], "E", 0.0)
    q = L.shape[1]
    for x in range(N):
        F = sparse.lil_matrix((q, len(b.names)))
        for r in range(q):
            for j in range(6):
                if L[j, r] != 0:
                    F[r, C[x, j]] = L[j, r]
        h = np.zeros(len(b.names))
        h[lam] = spec.slack
        b.cone("authority_soc", F, np.zeros(q), h, 0.0)


def _skew(w) -> np.ndarray:
    x, y, zz = w
    return np.array([[0.0, -zz, y], [zz, 0.0, -x], [-y, x, 0.0]])


def _structural_block(b, blocks, meta, spec, g, n, N, X, beta, z, z_max, lam) -> None:
    scale = spec.module_scale
    ref = X[_reference_vertices(g, n)]
    lam_ref, _, _ = structural_value_raw(ref - ref.mean(axis=0), spec) if n > 1 else (0.0, None, None)
    if lam_ref <= 0:
        lam_ref = 1.0
    single = assemble_stiffness(frame_from_modules(np.zeros((1, 3)), scale), spec.section).K
    kappa = float(np.abs(single).max())
    kn = single / kappa
    kn[np.abs(kn) < 1e-12] = 0.0
    # Displacements are modelled as w = s * v with one scale for translations
    # and one for rotations; this brings the stiffness diagonal near one.
    diag = np.diag(kn).reshape(20, 6)
    s6 = np.r_[np.full(3, diag[:, :3].mean() ** -0.5), np.full(3, diag[:, 3:].mean() ** -0.5)]
    frame = frame_from_modules(X, scale)
    jm = _module_joints(frame, X, scale)
    ndof = 6 * frame.n_jt
    s_all = np.tile(s6, frame.n_jt)
    W = 10.0
    w = b.var("w", ndof, "C", 0.0, 0.0)
    wm = b.var("wm", (N, 120), "C", 0.0, 0.0)
    for i, v in enumerate(w):
        b.lb[v], b.ub[v] = -W / s_all[i], W / s_all[i]
    s120 = np.tile(s6, 20)
    for x in range(N):
        for k in range(120):
            b.lb[wm[x, k]], b.ub[wm[x, k]] = -W / s120[k], W / s120[k]
    phi = b.var("phi", (N, 3), "C", -z_max, z_max)
    blocks.update({"w": w, "wm": wm, "phi": phi})
    meta.update({"lam_ref": lam_ref, "W_max": W, "kappa": kappa, "frame": frame, "module_joints": jm, "w_scale": s_all})
    dofs = (6 * jm[:, :, None] + np.arange(6)).reshape(N, 120)
    for x in range(N):
        for k in range(120):
            _bigm(b, "bigM_w", wm[x, k], w[dofs[x, k]], beta[x], W / s120[k])
        for a in range(3):
            _bigm(b, "bigM_phi", phi[x, a], z[a], beta[x], z_max)
    ks = kn * s120[:, None] * s120[None, :]
    load = 1.0 / (20.0 * scale * lam_ref * kappa)
    rows: dict[int, list[list]] = {}
    nz_r, nz_c = np.nonzero(ks)
    for x in range(N):
        for rl, cl in zip(nz_r, nz_c):
            e = rows.setdefault(int(dofs[x, rl]), [[], []])
            e[0].append(wm[x, cl])
            e[1].append(ks[rl, cl])
        for jloc in range(20):
            for a in range(3):
                e = rows.setdefault(int(6 * jm[x, jloc] + a), [[], []])
                e[0] += [beta[x], phi[x, a]]
                e[1] += [-load * s6[a] * X[x, a], -load * s6[a]]
    # The probe is balanced: sum phi = n z and sum X x phi = (sum beta X) x z = 0.
    # With these rows the equations of joint 0 follow from the others, and
    # dropping them keeps the equality block free of rigid-body redundancy.
    for a in range(3):
        b.row("balance", np.r_[phi[:, a], z[a]], np.r_[np.ones(N), -float(n)], "E", 0.0)
    for a in range(3):
        u, v = (a + 1) % 3, (a + 2) % 3
        b.row("balance", np.r_[phi[:, v], phi[:, u]], np.r_[X[:, u], -X[:, v]], "E", 0.0)
    for r in range(6, ndof):
        idx, coef = rows.get(r, ([], []))
        if idx:
            b.row("stiffness", idx, coef, "E", 0.0)
    F = sparse.csr_matrix((s_all, (np.arange(ndof), w)), shape=(ndof, len(b.names)))
    h = np.zeros(len(b.names))
    h[lam] = 1.0
    b.cone("structural_soc", F, np.zeros(ndof), h, 0.0)


# --- assignments -----------------------------------------------------------------


@dataclass(eq=False)
class Assignment:
    beta: np.ndarray  # (N,)
    orient: np.ndarray  # (N, |orientations|)
    spin: np.ndarray  # (N, 2), columns are spin +1 and spin -1
    z: np.ndarray  # (3,) metres
    lam: float | None = None
    C: np.ndarray | None = None  # (N, 6)
    w: np.ndarray | None = None  # joint displacements of the graph frame
    sink: int | None = None

    @property
    def vertices(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.beta > 0.5)]


@dataclass
class VerifyReport:
    checks: dict[str, tuple[bool, float]]

    @property
    def passed(self) -> bool:
        return all(ok for ok, _ in self.checks.values())

    def failed(self) -> list[str]:
        return [t for t, (ok, _) in self.checks.items() if not ok]


def placement_assignment(model: ConfigModel, vertices, orientations, spins) -> Assignment:
    """Binary part of an assignment from vertex indices, orientation ids and spins (+1/-1)."""
    N = model.graph.n_vertices
    nO = len(model.objective.orientations)
    beta = np.zeros(N, dtype=int)
    orient = np.zeros((N, nO), dtype=int)
    spin = np.zeros((N, 2), dtype=int)
    for v, o, s in zip(vertices, orientations, spins):
        beta[v] = 1
        orient[v, model.objective.orientations.index(int(o))] = 1
        spin[v, 0 if s > 0 else 1] = 1
    X = model.meta["positions"]
    z = -X[list(vertices)].mean(axis=0)
    return Assignment(beta, orient, spin, z)


def _module_data(model: ConfigModel, a: Assignment):
    verts = a.vertices
    D = orientation_directions()
    ors = [model.objective.orientations[int(np.argmax(a.orient[v]))] for v in verts]
    spins = [1 if a.spin[v, 0] >= a.spin[v, 1] else -1 for v in verts]
    return verts, ors, spins, D[ors]


def to_configuration(model: ConfigModel, a: Assignment, meta: dict | None = None):
    verts, ors, spins, _ = _module_data(model, a)
    placements = [ModulePlacement(model.graph.vertices[v], o, s) for v, o, s in zip(verts, ors, spins)]
    return make_configuration(placements, model.objective.module_scale, meta)


def verify_assignment(model: ConfigModel, a: Assignment, tol: float = VERIFY_TOL) -> VerifyReport:
    """Check an assignment against the original (not linearized) constraints."""
    spec = model.objective
    checks: dict[str, tuple[bool, float]] = {}

    def put(tag, viol, limit=tol):
        checks[tag] = (bool(viol <= limit), float(viol))

    binaries = np.concatenate([np.ravel(a.beta), np.ravel(a.orient), np.ravel(a.spin)]).astype(float)
    put("binary", float(np.max(np.minimum(np.abs(binaries), np.abs(binaries - 1)), initial=0.0)))
    put("cardinality", abs(float(np.sum(a.beta)) - model.n))
    put("orientation", float(np.max(np.abs(a.orient.sum(axis=1) - a.beta))))
    put("spin", float(np.max(np.abs(a.spin.sum(axis=1) - a.beta))))
    if model.flags.anchor:
        put("anchor", abs(1.0 - float(a.beta[0])))
    verts = a.vertices
    put("connectivity", 0.0 if is_connected(model.meta["adjacency"], verts) else 1.0)
    X = model.meta["positions"]
    off = model.n * np.asarray(a.z) + X[verts].sum(axis=0)
    put("offset", float(np.abs(off).max()), tol * max(1.0, float(np.abs(X).max())))
    ok_shape = len(verts) == model.n and checks["orientation"][0] and checks["spin"][0]
    if not ok_shape:
        return VerifyReport(checks)
    _, ors, spins, D = _module_data(model, a)
    if spec.wake.enabled:
        Xc = model.meta["canonical"]
        bad = sum(
            wake_predicate(Xc[x], Xc[y], D[jy], spec.wake)
            for ix, x in enumerate(verts)
            for jy, y in enumerate(verts)
            if x != y
        )
        put("wake", float(bad), 0.0)
    if a.lam is None:
        return VerifyReport(checks)
    P = X[verts] + a.z
    if spec.uses_allocation:
        if a.C is None:
            put("actuation", math.inf)
            return VerifyReport(checks)
        th, to = actuation_matrices(P, D, spins, spec.params)
        Mtt = np.vstack([th, to])
        Cv = a.C[verts]
        H = spec.H
        put("actuation", float(np.abs(Mtt @ Cv - H).max()))
        put("allocation_projector", float(np.abs(Cv @ H - Cv).max()))
        others = np.delete(a.C, verts, axis=0)
        put("unallocated_rows", float(np.abs(others).max(initial=0.0)))
        lhs = np.linalg.norm(Cv @ spec.L, axis=1)
        put("authority_soc", float(np.max(lhs - a.lam * spec.slack)))
        M = model.meta["C_max"]
        put("bigM_slack", float(np.abs(a.C).max() - M * (1 - BIGM_MARGIN)), 0.0)
    else:
        if a.w is None:
            put("stiffness", math.inf)
            return VerifyReport(checks)
        frame = frame_from_modules(P, spec.module_scale)
        sys = assemble_stiffness(frame, spec.section)
        c = radial_probe(frame, P, spec.module_scale) / model.meta["lam_ref"]
        # displacements of the configuration's joints, read from the graph frame
        big = model.meta["frame"]
        _, jidx = cKDTree(big.joints).query(frame.joints - a.z)
        wv = np.asarray(a.w).reshape(-1, 6)[jidx].ravel()
        res = sys.K @ wv - c
        scale = np.abs(sys.K).max() * max(np.abs(wv).max(), 1e-12) + np.abs(c).max()
        put("stiffness", float(np.abs(res).max() / scale))
        put("structural_soc", float(np.linalg.norm(a.w) - a.lam))
        put("bigM_slack", float(np.abs(a.w).max() - model.meta["W_max"] * (1 - BIGM_MARGIN)), 0.0)
    return VerifyReport(checks)


def lift_assignment(model: ConfigModel, a: Assignment) -> np.ndarray:
    """Full variable vector of the linearized model for an assignment (auxiliaries filled in)."""
    bl = model.blocks
    x = np.zeros(model.num_vars)
    x[bl["beta"]] = a.beta
    x[bl["orient"]] = a.orient
    x[bl["spin"]] = a.spin
    x[bl["z"]] = a.z
    verts = a.vertices
    sink = a.sink if a.sink is not None else (verts[0] if verts else 0)
    x[bl["sink"][sink]] = 1.0
    x[bl["flow"]] = _tree_flow(model, verts, sink)
    if a.lam is not None:
        x[bl["lam"]] = a.lam
    if model.objective.uses_allocation and a.C is not None:
        D = orientation_directions()[list(model.objective.orientations)]
        x[bl["C"]] = a.C
        zeta = a.orient[:, :, None] * a.C[:, None, :]
        x[bl["zeta"]] = zeta
        v = np.einsum("xkj,ka->xja", zeta, D)
        x[bl["omega"]] = a.spin[:, 0][:, None, None] * v
    if not model.objective.uses_allocation and a.w is not None:
        jm = model.meta["module_joints"]
        dofs = (6 * jm[:, :, None] + np.arange(6)).reshape(len(jm), 120)
        v = np.asarray(a.w) / model.meta["w_scale"]
        x[bl["w"]] = v
        x[bl["wm"]] = a.beta[:, None] * v[dofs]
        x[bl["phi"]] = a.beta[:, None] * np.asarray(a.z)[None, :]
    return x


def _tree_flow(model: ConfigModel, verts: list[int], sink: int) -> np.ndarray:
    arcs = model.meta["arcs"]
    flow = np.zeros(len(arcs))
    if not verts or sink not in verts:
        return flow
    adj = model.meta["adjacency"]
    inside = set(verts)
    parent = {sink: None}
    order = [sink]
    queue = deque([sink])
    while queue:
        i = queue.popleft()
        for j in adj[i]:
            if j in inside and j not in parent:
                parent[j] = i
                order.append(j)
                queue.append(j)
    arc_index = {arc: k for k, arc in enumerate(arcs)}
    load = {v: 1.0 for v in order}
    for v in reversed(order[1:]):
        flow[arc_index[(v, parent[v])]] = load[v]
        load[parent[v]] += load[v]
    return flow


def assignment_from_vector(model: ConfigModel, x: np.ndarray) -> Assignment:
    bl = model.blocks
    rnd = lambda idx: np.rint(x[idx]).astype(int)  # noqa: E731
    a = Assignment(rnd(bl["beta"]), rnd(bl["orient"]), rnd(bl["spin"]), x[bl["z"]].copy(), float(x[bl["lam"]]))
    a.sink = int(np.argmax(x[bl["sink"]]))
    if model.objective.uses_allocation:
        a.C = x[bl["C"]].copy()
    else:
        a.w = x[bl["w"]] * model.meta["w_scale"]
    return a


# --- flow feasibility ------------------------------------------------------------


def flow_feasible(g: AdmissibleGraph, allocation) -> bool:
    """Feasibility of the contiguity rows with the positions fixed (sink binaries kept integral)."""
    alloc = sorted(set(int(i) for i in allocation))
    n = len(alloc)
    N = g.n_vertices
    beta = np.zeros(N)
    beta[alloc] = 1.0
    arcs = [(i, j) for i, j in g.edges] + [(j, i) for i, j in g.edges]
    m = len(arcs)
    nv = N + m  # gamma then delta
    A = np.zeros((2 * N + 1 + N, nv))
    lo = np.full(A.shape[0], -np.inf)
    hi = np.zeros(A.shape[0])
    for k, (i, j) in enumerate(arcs):
        A[i, N + k] += 1.0
        A[j, N + k] -= 1.0
        A[N + i, N + k] = 1.0
    for x in range(N):
        A[x, x] = n
        hi[x] = beta[x]
        hi[N + x] = (n - 1) * beta[x]
        A[2 * N + 1 + x, x] = 1.0
        hi[2 * N + 1 + x] = beta[x]
    A[2 * N, :N] = 1.0
    lo[2 * N] = hi[2 * N] = 1.0
    integrality = np.r_[np.ones(N), np.zeros(m)]
    bounds = Bounds(np.zeros(nv), np.r_[np.ones(N), np.full(m, np.inf)])
    res = milp(np.zeros(nv), constraints=LinearConstraint(A, lo, hi), integrality=integrality, bounds=bounds)
    return res.status == 0


# --- exhaustive search -----------------------------------------------------------


@dataclass
class SearchLimits:
    max_leaves: int = DEFAULT_MAX_LEAVES
    node_limit: int = 200000
    time_limit: float = math.inf
    threads: int = 1


@dataclass(eq=False)
class SolveResult:
    status: str
    assignment: Assignment | None
    objective: float
    nodes: int = 0
    evaluations: int = 0
    gap: float = 0.0
    bound: float = -math.inf
    report: VerifyReport | None = None
    info: dict = field(default_factory=dict)

    def configuration(self, model: ConfigModel):
        if self.assignment is None:
            return None
        return to_configuration(model, self.assignment, {"objective": self.objective, "kind": model.objective.kind})


def connected_subsets(model: ConfigModel) -> list[tuple[int, ...]]:
    """Connected n-subsets of the graph, one per lattice translation class (anchored at the origin when flagged)."""
    adj = model.meta["adjacency"]
    n = model.n
    roots = [0] if model.flags.anchor else range(model.graph.n_vertices)
    found: set[frozenset] = set()
    for r in roots:
        level = {frozenset([r])}
        for _ in range(n - 1):
            nxt = set()
            for s in level:
                for i in s:
                    for j in adj[i]:
                        if j not in s:
                            nxt.add(s | {j})
            level = nxt
        found |= level
    verts = model.graph.vertices
    seen_shapes = set()
    out = []
    for s in sorted(tuple(sorted(s)) for s in found):
        pts = sorted(verts[i] for i in s)
        base = pts[0]
        key = tuple(tuple(p[k] - base[k] for k in range(3)) for p in pts)
        if key in seen_shapes:
            continue
        seen_shapes.add(key)
        out.append(s)
    return out


def _wake_free_orientations(model: ConfigModel, verts) -> list[tuple[int, ...]]:
    """All orientation index tuples (into the allowed list) with no module in another's wake."""
    spec = model.objective
    nO = len(spec.orientations)
    if not spec.wake.enabled:
        return list(itertools.product(range(nO), repeat=len(verts)))
    Xc = model.meta["canonical"]
    D = orientation_directions()[list(spec.orientations)]
    # shadow[y][k] = set of vertices in the wake of a rotor at y with orientation k
    shadow = {y: [{x for x in verts if x != y and wake_predicate(Xc[x], Xc[y], D[k], spec.wake)} for k in range(nO)] for y in verts}
    out = []

    def rec(i, chosen):
        if i == len(verts):
            out.append(tuple(chosen))
            return
        for k in range(nO):
            if shadow[verts[i]][k]:
                continue
            chosen.append(k)
            rec(i + 1, chosen)
            chosen.pop()

    rec(0, [])
    return out


def authority_value_raw(positions, directions, spins, spec: ObjectiveSpec):
    """min lam over proper allocations of one configuration; None when H is not reachable."""
    th, to = actuation_matrices(positions, directions, spins, spec.params)
    Mtt = np.vstack([th, to])
    n = Mtt.shape[1]
    H, L = spec.H, spec.L
    nv = 6 * n + 1
    eq_rows, eq_rhs = [], []
    for a in range(6):
        for j in range(6):
            r = np.zeros(nv)
            r[np.arange(n) * 6 + j] = Mtt[a]
            eq_rows.append(r)
            eq_rhs.append(H[a, j])
    P = np.eye(6) - H
    for i in range(n):
        for j in range(6):
            if np.any(P[:, j]):
                r = np.zeros(nv)
                r[6 * i : 6 * i + 6] = P[:, j]
                eq_rows.append(r)
                eq_rhs.append(0.0)
    cones = []
    for i in range(n):
        F = np.zeros((L.shape[1], nv))
        F[:, 6 * i : 6 * i + 6] = L.T
        h = np.zeros(nv)
        h[-1] = spec.slack
        cones.append(socp.SocConstraint.make(F, np.zeros(L.shape[1]), h, 0.0))
    c = np.zeros(nv)
    c[-1] = 1.0
    prob = socp.SocpProblem(nv, c, np.array(eq_rows), np.array(eq_rhs), cones=cones)
    sol = socp.solve(prob)
    if sol.status is not socp.Status.OPTIMAL:
        return None
    return float(sol.x[-1]), sol.x[:-1].reshape(n, 6)


def _evaluate(model: ConfigModel, cand):
    verts, ors, spins = cand
    spec = model.objective
    X = model.meta["positions"][list(verts)]
    P = X - X.mean(axis=0)
    if spec.uses_allocation:
        D = orientation_directions()[[spec.orientations[k] for k in ors]]
        res = authority_value_raw(P, D, spins, spec)
        return None if res is None else res
    val, w, _ = structural_value_raw(P, spec)
    ref = model.meta["lam_ref"]
    return val / ref, w / ref


def solve_exhaustive(model: ConfigModel, limits: SearchLimits | None = None) -> SolveResult:
    """Enumerate connected placements, wake-free orientations and spins; evaluate each exactly."""
    limits = limits or SearchLimits()
    t0 = time.perf_counter()
    spec = model.objective
    subsets = connected_subsets(model)
    nO = len(spec.orientations)
    per = nO**model.n * 2**model.n if spec.uses_allocation else 1
    if len(subsets) * per > limits.max_leaves:
        raise SearchTooLarge(f"about {len(subsets) * per} candidates exceed the limit of {limits.max_leaves}")
    cands = []
    for s in subsets:
        orients = _wake_free_orientations(model, s)
        if not orients:
            continue
        if spec.uses_allocation:
            for o in orients:
                for sp in itertools.product((1, -1), repeat=model.n):
                    cands.append((s, o, sp))
        else:
            # the frame does not depend on rotor orientation or spin
            cands.append((s, orients[0], (1,) * model.n))
    if not cands:
        return SolveResult("infeasible", None, math.inf, evaluations=0)
    if limits.threads > 1:
        with ThreadPoolExecutor(limits.threads) as ex:
            values = list(ex.map(lambda c: _evaluate(model, c), cands))
    else:
        values = [_evaluate(model, c) for c in cands]
    best, best_i = math.inf, -1
    for i, v in enumerate(values):
        if v is not None and v[0] < best - 1e-12 * max(1.0, abs(best) if math.isfinite(best) else 1.0):
            best, best_i = v[0], i
    if best_i < 0:
        return SolveResult("infeasible", None, math.inf, evaluations=len(cands))
    a = _leaf_assignment(model, cands[best_i], values[best_i])
    report = verify_assignment(model, a)
    if not report.passed:
        _raise_if_bigm(report)
        raise ConfigOptError(f"exhaustive optimum fails verification: {report.failed()}")
    return SolveResult(
        "optimal", a, best, evaluations=len(cands), bound=best, report=report,
        info={"candidates": len(cands), "placements": len(subsets), "seconds": time.perf_counter() - t0},
    )


def _leaf_assignment(model: ConfigModel, cand, value) -> Assignment:
    s, o, sp = cand
    a = placement_assignment(model, s, [model.objective.orientations[k] for k in o], sp)
    a.lam = value[0]
    if model.objective.uses_allocation:
        C = np.zeros((model.graph.n_vertices, 6))
        C[list(s)] = value[1]
        a.C = C
    else:
        a.w = _graph_displacements(model, s, a.z, value[1])
    return a


def _completions(model: ConfigModel, verts, fixed: dict[int, float]):
    """Wake-free orientation and spin choices for fixed positions that agree with ``fixed``."""
    bl = model.blocks
    n = len(verts)
    for o in _wake_free_orientations(model, verts):
        if any(fixed.get(int(bl["orient"][v, k]), 1.0) == 0.0 for v, k in zip(verts, o)):
            continue
        if not model.objective.uses_allocation:
            yield (verts, o, (1,) * n)
            return
        for sp in itertools.product((1, -1), repeat=n):
            if any(fixed.get(int(bl["spin"][v, 0 if e > 0 else 1]), 1.0) == 0.0 for v, e in zip(verts, sp)):
                continue
            yield (verts, o, sp)


def _raise_if_bigm(report: VerifyReport) -> None:
    if "bigM_slack" in report.failed():
        raise BigMBinding("a big-M bound is active at the optimum; the bound is too small for this instance")


def _graph_displacements(model: ConfigModel, verts, z, w_local) -> np.ndarray:
    X = model.meta["positions"][list(verts)]
    P = X + z
    frame = frame_from_modules(P, model.objective.module_scale)
    big = model.meta["frame"]
    _, jidx = cKDTree(big.joints).query(frame.joints - z)
    out = np.zeros((big.n_jt, 6))
    out[jidx] = np.asarray(w_local).reshape(-1, 6)
    return out.ravel()


# --- branch and bound ------------------------------------------------------------


def _reduced(prob: socp.SocpProblem, fixed: dict[int, float]):
    """Substitute fixed variables and presolve the rest.

    Singleton rows become bounds, variables with equal bounds are fixed, and
    opposite inequality pairs become equalities, so that a node with fixed
    indicators has a strictly feasible interior.  Returns (problem, free
    indices, constant objective, all fixings) or None when infeasibility is
    detected on the way.
    """
    n = prob.num_vars
    fixed = dict(fixed)
    lb, ub = prob.lb.copy(), prob.ub.copy()
    A_eq, A_in = sparse.csr_matrix(prob.A_eq), sparse.csr_matrix(prob.A_in)

    def reduce(A, b, xf, free):
        b2 = b - A @ xf
        Af = A[:, free].tocsr()
        return Af, b2, np.diff(Af.indptr)

    while True:
        fidx = np.array(sorted(fixed), dtype=int)
        xf = np.zeros(n)
        xf[fidx] = [fixed[i] for i in fidx]
        free = np.setdiff1d(np.arange(n), fidx)
        Ae, be, ce = reduce(A_eq, prob.b_eq, xf, free)
        Ai, bi, ci = reduce(A_in, prob.b_in, xf, free)
        if np.any(np.abs(be[ce == 0]) > 1e-9) or np.any(bi[ci == 0] < -1e-9):
            return None
        new: dict[int, float] = {}
        for r in np.flatnonzero(ce == 1):
            j = free[Ae.indices[Ae.indptr[r]]]
            new[int(j)] = be[r] / Ae.data[Ae.indptr[r]]
        for r in np.flatnonzero(ci == 1):
            j = free[Ai.indices[Ai.indptr[r]]]
            a = Ai.data[Ai.indptr[r]]
            if a > 0:
                ub[j] = min(ub[j], bi[r] / a)
            else:
                lb[j] = max(lb[j], bi[r] / a)
        width = ub[free] - lb[free]
        if np.any(width < -1e-9 * (1.0 + np.abs(lb[free]))):
            return None
        for j in free[width <= 1e-12 * (1.0 + np.abs(lb[free]))]:
            new.setdefault(int(j), 0.5 * (lb[j] + ub[j]))
        for j, v in new.items():
            if v < lb[j] - 1e-9 * (1.0 + abs(v)) or v > ub[j] + 1e-9 * (1.0 + abs(v)):
                return None
        if not new:
            break
        fixed.update(new)

    keep_eq = ce > 1
    Ae, be = Ae[keep_eq], be[keep_eq]
    keep_in = ci > 1
    Ai, bi = Ai[keep_in], bi[keep_in]
    # pairs a x <= b and -a x <= -b are equalities
    seen: dict = {}
    pair_eq, drop = [], set()
    for r in range(Ai.shape[0]):
        s, e = Ai.indptr[r], Ai.indptr[r + 1]
        data = Ai.data[s:e]
        scale = np.abs(data).max()
        sign = 1.0 if data[0] > 0 else -1.0
        key = (tuple(Ai.indices[s:e]), tuple(np.round(sign * data / scale, 12)))
        rhs = sign * bi[r] / scale
        other = seen.get((key, -sign))
        if other is not None:
            r2, rhs2 = other
            # sign=+1 row: a x <= rhs; sign=-1 row: a x >= rhs
            upper, lower = (rhs, rhs2) if sign > 0 else (rhs2, rhs)
            if lower > upper + 1e-9 * (1.0 + abs(upper)):
                return None
            if upper - lower <= 1e-12 * (1.0 + abs(upper)):
                pair_eq.append((r, sign))
                drop.update((r, r2))
                del seen[(key, -sign)]
                continue
        seen[(key, sign)] = (r, rhs)
    if pair_eq:
        extra = sparse.vstack([Ai[r] * sg for r, sg in pair_eq])
        Ae = sparse.vstack([Ae, extra]).tocsr()
        be = np.concatenate([be, [bi[r] * sg for r, sg in pair_eq]])
        rest = [r for r in range(Ai.shape[0]) if r not in drop]
        Ai, bi = Ai[rest], bi[rest]
    cones = []
    for k in prob.cones:
        cones.append(socp.SocConstraint(k.F[:, free], k.g + k.F @ xf, k.h[free], k.d + k.h @ xf))
    if free.size == 0:
        return None if any(np.linalg.norm(k.g) > k.d + 1e-9 for k in cones) else (None, free, float(prob.objective @ xf), fixed)
    red = socp.SocpProblem(free.size, prob.objective[free], Ae, be, Ai, bi, cones, lb[free], ub[free])
    return red, free, float(prob.objective @ xf), fixed


def _solve_node(base: socp.SocpProblem, fixed: dict[int, float]):
    r = _reduced(base, fixed)
    if r is None:
        return socp.Status.INFEASIBLE, None, math.inf
    red, free, const, allfix = r
    x = np.zeros(base.num_vars)
    for i, v in allfix.items():
        x[i] = v
    if red is None:
        return socp.Status.OPTIMAL, x, const
    sol = socp.solve(red)
    if sol.status is not socp.Status.OPTIMAL:
        return sol.status, None, math.inf
    x[free] = sol.x
    return socp.Status.OPTIMAL, x, sol.objective_value + const


def solve_branch_and_bound(model: ConfigModel, limits: SearchLimits | None = None, warm_start: Assignment | None = None) -> SolveResult:
    """Best-first branch and bound on the binaries with conic relaxations.

    Positions are branched first.  Once a node has all ``n`` positions fixed
    its few orientation and spin completions are evaluated exactly, so
    incumbents never carry relaxation round-off.  For the structural
    objective the big-M relaxation bound is zero away from placed nodes, so
    only the root relaxation is solved and other nodes inherit their
    parent's bound (a valid, weaker bound).
    """
    limits = limits or SearchLimits()
    t0 = time.perf_counter()
    base = model.to_socp()
    bl = model.blocks
    beta, orient, spin, sink = bl["beta"], bl["orient"], bl["spin"], bl["sink"]
    adj = model.meta["adjacency"]
    N, n = model.graph.n_vertices, model.n
    relax_everywhere = model.objective.uses_allocation

    incumbent: Assignment | None = None
    best = math.inf
    if warm_start is not None:
        rep = verify_assignment(model, warm_start)
        if rep.passed and warm_start.lam is not None:
            incumbent, best = warm_start, float(warm_start.lam)

    def pruned(bound: float) -> bool:
        return math.isfinite(best) and bound >= best - RELAX_MARGIN * max(1.0, abs(best))

    def presolve(fixed: dict[int, float]) -> dict[int, float] | None:
        """Combinatorial checks; also fixes the sink once all positions are fixed."""
        ones = [x for x in range(N) if fixed.get(int(beta[x])) == 1.0]
        zeros = [x for x in range(N) if fixed.get(int(beta[x])) == 0.0]
        if len(ones) > n or N - len(zeros) < n:
            return None
        if len(ones) == n:
            if not is_connected(adj, ones):
                return None
            fixed = dict(fixed)
            for x in range(N):
                fixed.setdefault(int(beta[x]), 1.0 if x in ones else 0.0)
                fixed.setdefault(int(sink[x]), 1.0 if x == ones[0] else 0.0)
        return fixed

    def pick_branch(x: np.ndarray | None, fixed: dict[int, float]) -> int | None:
        open_pos = [int(i) for i in beta if int(i) not in fixed]
        if not open_pos:
            return None
        if x is None:
            return open_pos[0]
        frac = np.abs(x[open_pos] - np.rint(x[open_pos]))
        k = int(np.argmax(frac)) if frac.max() > INT_TOL else int(np.argmax(x[open_pos]))
        return open_pos[k]

    nodes, evals, numerical = 0, 0, 0
    tried: set = set()

    def try_leaf(cand) -> None:
        nonlocal incumbent, best, evals
        if cand in tried:
            return
        tried.add(cand)
        value = _evaluate(model, cand)
        evals += 1
        if value is None or value[0] >= best:
            return
        a = _leaf_assignment(model, cand, value)
        rep = verify_assignment(model, a)
        if rep.passed:
            incumbent, best = a, float(a.lam)
        else:
            _raise_if_bigm(rep)

    def rounded_candidate(x: np.ndarray):
        """Leaf suggested by a relaxation whose positions are integral, if it is wake-free."""
        pos = np.rint(x[beta])
        if pos.sum() != n or np.any(np.abs(x[beta] - pos) > INT_TOL):
            return None
        verts = tuple(int(v) for v in np.flatnonzero(pos > 0.5))
        if not is_connected(adj, verts):
            return None
        if not model.objective.uses_allocation:
            return next(_completions(model, verts, {}), None)
        o = tuple(int(np.argmax(x[orient[v]])) for v in verts)
        if o not in _wake_free_orientations(model, verts):
            return None
        sp = tuple(1 if x[spin[v, 0]] >= x[spin[v, 1]] else -1 for v in verts)
        return (verts, o, sp)

    bounds_log: list[tuple[dict, float]] = []
    heap: list = []
    seq = itertools.count()
    root = presolve({int(beta[0]): 1.0} if model.flags.anchor else {})
    if root is not None:
        heapq.heappush(heap, (-math.inf, 0, next(seq), root))
    root_bound = None
    status = "optimal"
    while heap:
        if nodes >= limits.node_limit:
            status = "node_limit"
            break
        if time.perf_counter() - t0 > limits.time_limit:
            status = "time_limit"
            break
        val, negdepth, _, fixed = heapq.heappop(heap)
        if pruned(val):
            continue
        nodes += 1
        placed = [v for v in range(N) if fixed.get(int(beta[v])) == 1.0]
        if len(placed) == n:
            # few choices remain below a placed node; evaluate each completion exactly
            for cand in _completions(model, tuple(placed), fixed):
                try_leaf(cand)
            continue
        x = None
        if relax_everywhere or root_bound is None:
            st, x, bound = _solve_node(base, fixed)
            if st is socp.Status.INFEASIBLE:
                continue
            if st is socp.Status.OPTIMAL:
                val = max(val, bound)
            else:
                numerical += 1
                x = None
            if root_bound is None:
                root_bound = val
            bounds_log.append((fixed, val))
            if pruned(val):
                continue
            if x is not None:
                cand = rounded_candidate(x)
                if cand is not None:
                    try_leaf(cand)
        j = pick_branch(x, fixed)
        if j is None:
            continue
        for v in (1.0, 0.0):
            child = presolve(fixed | {j: v})
            if child is not None:
                heapq.heappush(heap, (val, negdepth - 1, next(seq), child))
    bound = min([best] + [b for b, *_ in heap]) if status != "optimal" else best
    gap = best - bound if math.isfinite(best) else math.inf
    info = {"root_bound": root_bound, "bounds": bounds_log, "numerical_failures": numerical, "seconds": time.perf_counter() - t0}
    if incumbent is None:
        return SolveResult("infeasible" if status == "optimal" else status, None, math.inf, nodes, evals, gap, bound, info=info)
    report = verify_assignment(model, incumbent)
    return SolveResult(status, incumbent, best, nodes, evals, gap, bound, report, info)


# --- export ----------------------------------------------------------------------


@dataclass(eq=False)
class ExportedModel:
    name: str
    var_names: list[str]
    var_kinds: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    A: sparse.csr_matrix
    sense: np.ndarray
    rhs: np.ndarray
    row_names: list[str]
    row_tags: list[str]
    cones: list[tuple[str, str, socp.SocConstraint]]
    c: np.ndarray

    def counts(self) -> dict:
        return {
            "variables": len(self.var_names),
            "binaries": int(np.sum(self.var_kinds == "B")),
            "rows": int(self.rhs.size),
            "cones": len(self.cones),
        }

    def tag_residuals(self, x) -> dict[str, float]:
        return tag_residuals(self.A, self.sense, self.rhs, self.row_tags, self.cones, x)


_SENSE_TXT = {"E": "=", "L": "<=", "G": ">="}
_TXT_SENSE = {v: k for k, v in _SENSE_TXT.items()}


def _num(v: float) -> str:
    return repr(float(v))


def _terms(names, idx, vals) -> str:
    return " ".join(f"{_num(v)} {names[i]}" for i, v in zip(idx, vals))


def model_to_text(model) -> str:
    name = getattr(model, "name", None) or f"dodecopter_n{model.n}_{model.objective.kind}"
    names = model.var_names
    lines = [
        "\\ dodecopter configuration model",
        "\\ cones read ||F x + g|| <= h x + d",
        f"NAME {name}",
        f"SIZES {len(names)} {model.rhs.size} {len(model.cones)}",
        "MINIMIZE",
        " obj: " + _terms(names, np.flatnonzero(model.c), model.c[np.flatnonzero(model.c)]),
        "VARIABLES",
    ]
    lines += [f" {nm} {k} {_num(lo)} {_num(hi)}" for nm, k, lo, hi in zip(names, model.var_kinds, model.lb, model.ub)]
    lines.append("SUBJECT TO")
    A = model.A.tocsr()
    for r in range(A.shape[0]):
        s, e = A.indptr[r], A.indptr[r + 1]
        lines.append(f" {model.row_names[r]} {model.row_tags[r]}: {_terms(names, A.indices[s:e], A.data[s:e])} {_SENSE_TXT[model.sense[r]]} {_num(model.rhs[r])}")
    lines.append("CONES")
    for tag, cname, k in model.cones:
        lines.append(f" {cname} {tag} {k.g.size}")
        h = np.flatnonzero(k.h)
        lines.append(f"  t: {_terms(names, h, k.h[h])} + {_num(k.d)}".replace(":  +", ": +"))
        F = k.F.tocsr()
        for r in range(F.shape[0]):
            s, e = F.indptr[r], F.indptr[r + 1]
            lines.append(f"  f: {_terms(names, F.indices[s:e], F.data[s:e])} + {_num(k.g[r])}".replace(":  +", ": +"))
    lines.append("END")
    return "\n".join(lines) + "\n"


def export_model(model, path) -> dict:
    Path(path).write_text(model_to_text(model), encoding="utf-8")
    return model.counts()


def _parse_terms(tokens: list[str], index: dict[str, int], where: str):
    if len(tokens) % 2:
        raise ModelFormatError(f"{where}: odd number of coefficient tokens")
    idx, vals = [], []
    for k in range(0, len(tokens), 2):
        name = tokens[k + 1]
        if name not in index:
            raise ModelFormatError(f"{where}: unknown variable {name}")
        vals.append(float(tokens[k]))
        idx.append(index[name])
    return idx, vals


def model_from_text(text: str) -> ExportedModel:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("\\")]
    pos = 0

    def expect(word):
        nonlocal pos
        if pos >= len(lines) or lines[pos].split()[0] != word:
            raise ModelFormatError(f"line {pos + 1}: expected {word}")
        pos += 1
        return lines[pos - 1]

    name = expect("NAME").split(maxsplit=1)[1]
    nv, nr, nc = (int(t) for t in expect("SIZES").split()[1:4])
    expect("MINIMIZE")
    obj_line = lines[pos].split()
    pos += 1
    expect("VARIABLES")
    names, kinds, lb, ub = [], [], [], []
    for _ in range(nv):
        nm, k, lo, hi = lines[pos].split()
        pos += 1
        names.append(nm)
        kinds.append(k)
        lb.append(float(lo))
        ub.append(float(hi))
    index = {nm: i for i, nm in enumerate(names)}
    c = np.zeros(nv)
    oi, ov = _parse_terms(obj_line[1:], index, "objective")
    c[oi] = ov
    expect("SUBJECT")
    rr, cc, vv, sense, rhs, rnames, rtags = [], [], [], [], [], [], []
    for r in range(nr):
        head, body = lines[pos].split(":", 1)
        pos += 1
        rn, tag = head.split()
        toks = body.split()
        idx, vals = _parse_terms(toks[:-2], index, f"row {rn}")
        rr += [r] * len(idx)
        cc += idx
        vv += vals
        sense.append(_TXT_SENSE[toks[-2]])
        rhs.append(float(toks[-1]))
        rnames.append(rn)
        rtags.append(tag)
    expect("CONES")
    cones = []
    for _ in range(nc):
        cn, tag, dim = lines[pos].split()
        pos += 1
        body = lines[pos].split(":", 1)[1].split()
        pos += 1
        hi_, hv = _parse_terms(body[:-2], index, f"cone {cn}")
        h = np.zeros(nv)
        h[hi_] = hv
        d = float(body[-1])
        Fr, Fc, Fv, g = [], [], [], []
        for r in range(int(dim)):
            body = lines[pos].split(":", 1)[1].split()
            pos += 1
            fi, fv = _parse_terms(body[:-2], index, f"cone {cn}")
            Fr += [r] * len(fi)
            Fc += fi
            Fv += fv
            g.append(float(body[-1]))
        F = sparse.csr_matrix((Fv, (Fr, Fc)), shape=(int(dim), nv))
        cones.append((tag, cn, socp.SocConstraint(F, np.array(g), h, d)))
    expect("END")
    A = sparse.csr_matrix((vv, (rr, cc)), shape=(nr, nv))
    return ExportedModel(name, names, np.array(kinds), np.array(lb), np.array(ub), A, np.array(sense), np.array(rhs), rnames, rtags, cones, c)


def read_model(path) -> ExportedModel:
    return model_from_text(Path(path).read_text(encoding="utf-8"))
