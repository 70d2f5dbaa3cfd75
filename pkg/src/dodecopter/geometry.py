"""Dodecahedron module geometry, its rotation group and the position lattice.

The canonical module is a regular dodecahedron of inradius 1 whose top vertex
sits on +z.  Modules connect along face diagonals; restricting connections to
the 12 edges of one inscribed cube makes every module share the same
orientation, and the induced relative positions generate an FCC lattice.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.spatial import ConvexHull

PHI = (1.0 + np.sqrt(5.0)) / 2.0
GEOM_TOL = 1e-9
LATTICE_TOL = 1e-6

# Lattice basis in cube-aligned coordinates (cube vertices at (+-1/2, +-1/2, +-1/2)).
CUBE_BASIS = np.array([[1, 1, 0], [1, 0, 1], [0, 1, 1]], dtype=float)


class GeometryError(ValueError):
    pass


class NotInLattice(GeometryError):
    pass


class DuplicatePosition(GeometryError):
    pass


class Disconnected(GeometryError):
    pass


@dataclass(frozen=True, eq=False)
class DodecahedronModel:
    vertices: np.ndarray  # (20, 3)
    edges: tuple[tuple[int, int], ...]
    faces: tuple[tuple[int, ...], ...]
    face_normals: np.ndarray  # (12, 3) outward unit normals
    cube_vertices: tuple[int, ...]
    cube_edges: tuple[tuple[int, int], ...]
    # rotation taking textbook coordinates to canonical ones (before scaling)
    frame: np.ndarray
    scale: float

    @property
    def circumradius(self) -> float:
        return float(np.linalg.norm(self.vertices[0]))

    @property
    def inradius(self) -> float:
        return float(min(n @ self.vertices[f[0]] for n, f in zip(self.face_normals, self.faces)))

    @property
    def edge_length(self) -> float:
        i, j = self.edges[0]
        return float(np.linalg.norm(self.vertices[i] - self.vertices[j]))

    def to_cube_coords(self, v: np.ndarray) -> np.ndarray:
        """Map canonical coordinates to the frame where the cube is (+-1/2)^3."""
        return (np.asarray(v, dtype=float) @ self.frame) / (2.0 * self.scale)

    def from_cube_coords(self, c: np.ndarray) -> np.ndarray:
        return (2.0 * self.scale) * (np.asarray(c, dtype=float) @ self.frame.T)


@dataclass(frozen=True)
class RotationGroup:
    rotations: tuple[np.ndarray, ...]
    # perms[k][i] = index of R_k v_i
    perms: tuple[tuple[int, ...], ...]

    def __len__(self) -> int:
        return len(self.rotations)

    def index_of(self, R: np.ndarray, tol: float = GEOM_TOL) -> int:
        for k, S in enumerate(self.rotations):
            if np.max(np.abs(S - R)) < tol:
                return k
        return -1


@dataclass(frozen=True)
class ConnectionSet:
    translations: np.ndarray  # (12, 3), canonical units
    generating_pairs: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class LatticeBasis:
    b1: np.ndarray
    b2: np.ndarray
    b3: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        """Columns are b1, b2, b3."""
        return np.column_stack([self.b1, self.b2, self.b3])


@dataclass(frozen=True)
class RotorOrientation:
    index: int
    direction: np.ndarray
    tilt_class: int
    tilt_deg: float


@dataclass(frozen=True)
class ModulePlacement:
    lattice_pos: tuple[int, int, int]
    orientation: int = 0
    spin: int = 1

    def __post_init__(self) -> None:
        if self.spin not in (-1, 1):
            raise GeometryError(f"spin must be +1 or -1, got {self.spin}")
        if not 0 <= self.orientation < 20:
            raise GeometryError(f"orientation index {self.orientation} outside [0, 20)")
        object.__setattr__(self, "lattice_pos", tuple(int(a) for a in self.lattice_pos))


@dataclass(frozen=True, eq=False)
class Configuration:
    placements: tuple[ModulePlacement, ...]
    centered_positions: np.ndarray  # (n, 3), metres
    offset: np.ndarray  # z, metres
    module_scale: float = 1.0  # physical edge length
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.placements)

    @property
    def lattice_positions(self) -> list[tuple[int, int, int]]:
        return [p.lattice_pos for p in self.placements]

    @property
    def directions(self) -> np.ndarray:
        dirs = orientation_directions()
        return np.array([dirs[p.orientation] for p in self.placements])

    @property
    def spins(self) -> np.ndarray:
        return np.array([p.spin for p in self.placements], dtype=float)

    @property
    def length_scale(self) -> float:
        """Metres per canonical (inradius 1) unit."""
        return self.module_scale / build_dodecahedron().edge_length


def _textbook_vertices() -> np.ndarray:
    pts = [list(s) for s in itertools.product((-1.0, 1.0), repeat=3)]
    a, b = 1.0 / PHI, PHI
    for s1, s2 in itertools.product((-1.0, 1.0), repeat=2):
        pts.append([0.0, s1 * a, s2 * b])
        pts.append([s1 * a, s2 * b, 0.0])
        pts.append([s1 * b, 0.0, s2 * a])
    return np.array(pts)


def _faces_from_hull(v: np.ndarray) -> tuple[list[tuple[int, ...]], np.ndarray]:
    hull = ConvexHull(v)
    groups: dict[tuple, set[int]] = {}
    normals: dict[tuple, np.ndarray] = {}
    for simplex, eq in zip(hull.simplices, hull.equations):
        key = tuple(np.round(eq[:3], 6))
        groups.setdefault(key, set()).update(int(i) for i in simplex)
        normals[key] = eq[:3]
    faces, ns = [], []
    for key in sorted(groups, reverse=True):
        idx = sorted(groups[key])
        n = normals[key] / np.linalg.norm(normals[key])
        # order the pentagon cyclically around its normal
        c = v[idx].mean(axis=0)
        e1 = v[idx[0]] - c
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(n, e1)
        ang = [np.arctan2((v[i] - c) @ e2, (v[i] - c) @ e1) for i in idx]
        faces.append(tuple(int(i) for _, i in sorted(zip(ang, idx))))
        ns.append(n)
    return faces, np.array(ns)


@lru_cache(maxsize=None)
def build_dodecahedron() -> DodecahedronModel:
    """Canonical dodecahedron: inradius 1, top vertex on +z, vertices sorted by (z, x, y) descending."""
    raw = _textbook_vertices()
    ez = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)
    ex = np.array([1.0, -1.0, 0.0]) / np.sqrt(2.0)
    ey = np.cross(ez, ex)
    frame = np.vstack([ex, ey, ez])  # rows: canonical axes in textbook coordinates
    rot = raw @ frame.T

    _, normals = _faces_from_hull(rot)
    scale = 1.0 / float(np.min(np.abs(normals @ rot.T).max(axis=1)))
    verts = rot * scale

    keys = np.round(verts, 9)
    order = sorted(range(20), key=lambda i: (keys[i, 2], keys[i, 0], keys[i, 1]), reverse=True)
    verts = verts[order]
    cube_mask = [bool(np.all(np.isclose(np.abs(raw[i]), 1.0))) for i in order]
    verts[np.abs(verts) < 1e-14] = 0.0

    faces, normals = _faces_from_hull(verts)
    d = np.linalg.norm(verts[:, None] - verts[None], axis=-1)
    e_len = np.min(d[d > 1e-9])
    edges = tuple((i, j) for i in range(20) for j in range(i + 1, 20) if abs(d[i, j] - e_len) < 1e-9)

    cube = tuple(i for i in range(20) if cube_mask[i])
    c_len = np.min([d[i, j] for i in cube for j in cube if i != j])
    cube_edges = tuple(
        (i, j) for i in cube for j in cube if i < j and abs(d[i, j] - c_len) < 1e-9
    )
    return DodecahedronModel(
        vertices=verts,
        edges=edges,
        faces=tuple(faces),
        face_normals=normals,
        cube_vertices=cube,
        cube_edges=cube_edges,
        frame=frame,
        scale=scale,
    )


def match_vertices(model: DodecahedronModel, pts: np.ndarray, tol: float = GEOM_TOL) -> list[int] | None:
    """Index of the model vertex matching each point, or None if any point misses."""
    out = []
    for p in np.atleast_2d(pts):
        dist = np.linalg.norm(model.vertices - p, axis=1)
        k = int(np.argmin(dist))
        if dist[k] > tol:
            return None
        out.append(k)
    return out


def _frame_from(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    e1 = a / np.linalg.norm(a)
    e2 = b - (b @ e1) * e1
    e2 /= np.linalg.norm(e2)
    return np.column_stack([e1, e2, np.cross(e1, e2)])


def rotation_group(model: DodecahedronModel | None = None) -> RotationGroup:
    """All proper rotations mapping the vertex set onto itself."""
    model = model or build_dodecahedron()
    return _rotation_group(model)


@lru_cache(maxsize=4)
def _rotation_group(model: DodecahedronModel) -> RotationGroup:
    v = model.vertices
    nbrs = {i: [j for e in model.edges for j in e if i in e and j != i] for i in range(20)}
    ref = _frame_from(v[0], v[nbrs[0][0]])
    rots, perms = [], []
    for i in range(20):
        for j in nbrs[i]:
            R = _frame_from(v[i], v[j]) @ ref.T
            perm = match_vertices(model, v @ R.T)
            if perm is not None and sorted(perm) == list(range(20)):
                R[np.abs(R) < 1e-15] = 0.0
                rots.append(R)
                perms.append(tuple(perm))
    return RotationGroup(tuple(rots), tuple(perms))


def connection_set(model: DodecahedronModel | None = None) -> ConnectionSet:
    model = model or build_dodecahedron()
    t = np.array([model.vertices[g] + model.vertices[h] for g, h in model.cube_edges])
    return ConnectionSet(translations=t, generating_pairs=model.cube_edges)


def face_diagonals(model: DodecahedronModel) -> list[tuple[int, int]]:
    """The 60 non-adjacent vertex pairs lying on a common face."""
    out = []
    e = model.edge_length
    for f in model.faces:
        for a, b in itertools.combinations(f, 2):
            if np.linalg.norm(model.vertices[a] - model.vertices[b]) > e + 1e-9:
                out.append((min(a, b), max(a, b)))
    return out


def count_full_connections(model: DodecahedronModel | None = None) -> int:
    """Enumerate (rotation of the second module, face, face diagonal) triples."""
    model = model or build_dodecahedron()
    group = rotation_group(model)
    diags = face_diagonals(model)
    seen = set()
    for k in range(len(group)):
        for fi, f in enumerate(model.faces):
            for d in diags:
                if d[0] in f and d[1] in f:
                    seen.add((k, fi, d))
    return len(seen)


def lattice_basis(model: DodecahedronModel | None = None) -> LatticeBasis:
    model = model or build_dodecahedron()
    b = [model.from_cube_coords(row) for row in CUBE_BASIS]
    return LatticeBasis(*b)


def lattice_decompose(v, basis: LatticeBasis | None = None, tol: float = LATTICE_TOL) -> tuple[int, int, int]:
    basis = basis or lattice_basis()
    coef = np.linalg.solve(basis.matrix, np.asarray(v, dtype=float))
    rounded = np.round(coef)
    if np.linalg.norm(basis.matrix @ rounded - v) > tol:
        raise NotInLattice(f"{np.asarray(v).tolist()} is not a lattice point")
    return tuple(int(a) for a in rounded)


def lattice_point(pos, basis: LatticeBasis | None = None) -> np.ndarray:
    basis = basis or lattice_basis()
    return basis.matrix @ np.asarray(pos, dtype=float)


@lru_cache(maxsize=None)
def connection_lattice_offsets() -> tuple[tuple[int, int, int], ...]:
    """The 12 connection translations expressed in lattice coordinates."""
    basis = lattice_basis()
    return tuple(sorted(lattice_decompose(t, basis) for t in connection_set().translations))


def layer_index(pos) -> int:
    """Height class of a lattice point; all basis vectors rise by one layer."""
    return int(sum(pos))


def canonical_orientations(model: DodecahedronModel | None = None) -> list[RotorOrientation]:
    model = model or build_dodecahedron()
    dirs = model.vertices / np.linalg.norm(model.vertices, axis=1, keepdims=True)
    tilts = np.degrees(np.arccos(np.clip(dirs[:, 2], -1.0, 1.0)))
    classes = sorted({round(t, 6) for t in tilts})
    out = []
    for i in range(20):
        cls = classes.index(round(tilts[i], 6))
        out.append(RotorOrientation(i, dirs[i], cls, float(tilts[i])))
    return out


@lru_cache(maxsize=None)
def orientation_directions() -> np.ndarray:
    return np.array([o.direction for o in canonical_orientations()])


def tilt_classes() -> list[float]:
    return sorted({round(o.tilt_deg, 6) for o in canonical_orientations()})


def _is_connection(d: tuple[int, int, int]) -> bool:
    return tuple(d) in set(connection_lattice_offsets())


def connectivity_components(positions: list[tuple[int, int, int]]) -> list[list[int]]:
    offs = set(connection_lattice_offsets())
    index = {p: i for i, p in enumerate(positions)}
    seen = [False] * len(positions)
    comps = []
    for s in range(len(positions)):
        if seen[s]:
            continue
        comp, queue = [], deque([s])
        seen[s] = True
        while queue:
            i = queue.popleft()
            comp.append(i)
            for o in offs:
                q = tuple(a + b for a, b in zip(positions[i], o))
                j = index.get(q)
                if j is not None and not seen[j]:
                    seen[j] = True
                    queue.append(j)
        comps.append(sorted(comp))
    return comps


def _duplicates(positions) -> list[tuple[int, int]]:
    first: dict = {}
    dups = []
    for i, p in enumerate(positions):
        if p in first:
            dups.append((first[p], i))
        else:
            first[p] = i
    return dups


def make_configuration(placements, module_scale: float = 1.0, meta: dict | None = None) -> Configuration:
    placements = tuple(placements)
    if not placements:
        raise GeometryError("a configuration needs at least one module")
    positions = [p.lattice_pos for p in placements]
    dups = _duplicates(positions)
    if dups:
        raise DuplicatePosition(f"modules {dups[0][0]} and {dups[0][1]} share lattice position {positions[dups[0][1]]}")
    comps = connectivity_components(positions)
    if len(comps) > 1:
        raise Disconnected(f"placement graph has {len(comps)} components: {comps}")
    model = build_dodecahedron()
    unit = module_scale / model.edge_length
    pts = np.array([lattice_point(p) for p in positions]) * unit
    z = -pts.mean(axis=0)
    return Configuration(placements, pts + z, z, float(module_scale), dict(meta or {}))


def is_valid_configuration(c: Configuration) -> tuple[bool, str]:
    positions = c.lattice_positions
    dups = _duplicates(positions)
    if dups:
        return False, "duplicate positions: " + ", ".join(f"{i}={j}" for i, j in dups)
    comps = connectivity_components(positions)
    if len(comps) > 1:
        return False, f"disconnected components: {comps}"
    return True, "ok"


def frames_overlap(d: np.ndarray, model: DodecahedronModel | None = None, tol: float = 1e-9) -> bool:
    """Whether two equally oriented module frames with centre offset d (canonical units) overlap.

    The module is centrally symmetric, so the difference body P - P equals 2P and
    the interiors meet iff d lies strictly inside 2P.
    """
    model = model or build_dodecahedron()
    d = np.asarray(d, dtype=float)
    if np.linalg.norm(d) >= 2.0 * model.circumradius:
        return False
    return bool(np.max(model.face_normals @ d) < 2.0 - tol)


def check_no_overlap(c: Configuration) -> bool:
    unit = c.length_scale
    pts = np.asarray(c.centered_positions) / unit
    for i, j in itertools.combinations(range(len(pts)), 2):
        if frames_overlap(pts[j] - pts[i]):
            return False
    return True
