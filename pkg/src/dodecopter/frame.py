"""Space-frame model of a configuration and its structural indicators.

Every module edge is a slender tube modelled as a two-node Euler-Bernoulli
beam; joints shared by connected modules are merged and treated as rigid.
Generalized joint vectors are ordered (s_x, s_y, s_z, r_x, r_y, r_z) per joint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import null_space
from scipy.spatial import cKDTree

from .geometry import Configuration, build_dodecahedron, is_valid_configuration

PINV_RTOL = 1e-9
BALANCE_TOL = 1e-9


class FrameError(ValueError):
    pass


class ZeroLengthMember(FrameError):
    pass


class UnbalancedLoad(FrameError):
    pass


class InvalidConfiguration(FrameError):
    pass


@dataclass(frozen=True)
class BeamSection:
    E: float = 70e9
    nu: float = 0.3
    r_out: float = 5e-3
    r_in: float = 4e-3

    def __post_init__(self) -> None:
        if self.E <= 0:
            raise ValueError("E must be positive")
        if not 0 <= self.nu < 0.5:
            raise ValueError("nu must lie in [0, 0.5)")
        if not 0 <= self.r_in < self.r_out:
            raise ValueError("need 0 <= r_in < r_out")

    @property
    def G(self) -> float:
        return self.E / (2.0 * (1.0 + self.nu))

    @property
    def area(self) -> float:
        return np.pi * (self.r_out**2 - self.r_in**2)

    @property
    def I(self) -> float:
        return np.pi / 4.0 * (self.r_out**4 - self.r_in**4)

    @property
    def J_t(self) -> float:
        return 2.0 * self.I

    @classmethod
    def from_dict(cls, d: dict) -> "BeamSection":
        extra = set(d) - {"E", "nu", "r_out", "r_in"}
        if extra:
            raise ValueError(f"unknown section fields: {sorted(extra)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return {"E": self.E, "nu": self.nu, "r_out": self.r_out, "r_in": self.r_in}


@dataclass(eq=False)
class SpaceFrame:
    joints: np.ndarray  # (n_jt, 3)
    members: np.ndarray  # (n_mb, 2)
    member_module: np.ndarray  # (n_mb,)

    @property
    def n_jt(self) -> int:
        return len(self.joints)

    @property
    def n_mb(self) -> int:
        return len(self.members)


@dataclass(eq=False)
class StiffnessSystem:
    frame: SpaceFrame
    section: BeamSection
    K: np.ndarray
    K_mb: sparse.csr_matrix
    H_rb: np.ndarray
    K_pinv: np.ndarray
    zero_modes: int
    member_frames: np.ndarray = field(repr=False)  # (n_mb, 3, 3) rows = local axes
    member_local_k: np.ndarray = field(repr=False)  # (n_mb, 12, 12)


def build_frame(c: Configuration, module_scale: float | None = None) -> SpaceFrame:
    ok, why = is_valid_configuration(c)
    if not ok:
        raise InvalidConfiguration(why)
    scale = c.module_scale if module_scale is None else float(module_scale)
    model = build_dodecahedron()
    unit = scale / model.edge_length
    centers = np.asarray(c.centered_positions) / c.length_scale * unit
    raw = (centers[:, None, :] + model.vertices[None, :, :] * unit).reshape(-1, 3)
    return _merge(raw, model.edges, c.n, 1e-6 * scale)


def frame_from_modules(centers, module_scale: float) -> SpaceFrame:
    """Frame of modules placed at the given centres (metres), without validity checks."""
    model = build_dodecahedron()
    unit = module_scale / model.edge_length
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    raw = (centers[:, None, :] + model.vertices[None, :, :] * unit).reshape(-1, 3)
    return _merge(raw, model.edges, len(centers), 1e-6 * module_scale)


def _merge(raw: np.ndarray, edges, n: int, tol: float) -> SpaceFrame:
    tree = cKDTree(raw)
    parent = list(range(len(raw)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in sorted(tree.query_pairs(tol)):
        a, b = find(i), find(j)
        if a != b:
            parent[max(a, b)] = min(a, b)
    roots = sorted({find(i) for i in range(len(raw))})
    index = {r: k for k, r in enumerate(roots)}
    joint_of = np.array([index[find(i)] for i in range(len(raw))])
    joints = raw[roots]
    members, owner = [], []
    for mod in range(n):
        for a, b in edges:
            members.append((joint_of[20 * mod + a], joint_of[20 * mod + b]))
            owner.append(mod)
    return SpaceFrame(joints, np.array(members, dtype=int), np.array(owner, dtype=int))


def member_axes(p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """Rows: local x (along the member), y, z."""
    d = p2 - p1
    L = np.linalg.norm(d)
    if L <= 0:
        raise ZeroLengthMember("member endpoints coincide")
    x = d / L
    y = np.cross([0.0, 0.0, 1.0], x)
    if np.linalg.norm(y) < 1e-6:
        y = np.cross(x, np.cross([1.0, 0.0, 0.0], x))
    y /= np.linalg.norm(y)
    return np.vstack([x, y, np.cross(x, y)])


def local_beam_stiffness(L: float, s: BeamSection) -> np.ndarray:
    """12x12 local stiffness, dof order (u, v, w, tx, ty, tz) at node 1 then node 2."""
    E, G, A, I, J = s.E, s.G, s.area, s.I, s.J_t
    k = np.zeros((12, 12))
    ea, gj = E * A / L, G * J / L
    b1, b2, b3, b4 = 12 * E * I / L**3, 6 * E * I / L**2, 4 * E * I / L, 2 * E * I / L
    k[np.ix_([0, 6], [0, 6])] = ea * np.array([[1, -1], [-1, 1]])
    k[np.ix_([3, 9], [3, 9])] = gj * np.array([[1, -1], [-1, 1]])
    # bending in the local x-y plane: v, tz
    idx = [1, 5, 7, 11]
    k[np.ix_(idx, idx)] = np.array(
        [[b1, b2, -b1, b2], [b2, b3, -b2, b4], [-b1, -b2, b1, -b2], [b2, b4, -b2, b3]]
    )
    # bending in the local x-z plane: w, ty
    idx = [2, 4, 8, 10]
    k[np.ix_(idx, idx)] = np.array(
        [[b1, -b2, -b1, -b2], [-b2, b3, b2, b4], [-b1, b2, b1, b2], [-b2, b4, b2, b3]]
    )
    return k


def _rigid_body_rows(joints: np.ndarray) -> np.ndarray:
    n = len(joints)
    H = np.zeros((6, 6 * n))
    for i, j in enumerate(joints):
        H[0:3, 6 * i : 6 * i + 3] = np.eye(3)
        # moment of a joint force about the origin: j x f
        H[3:6, 6 * i : 6 * i + 3] = _skew(j)
        H[3:6, 6 * i + 3 : 6 * i + 6] = np.eye(3)
    return H


def _skew(w) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def assemble_stiffness(f: SpaceFrame, s: BeamSection | None = None) -> StiffnessSystem:
    s = s or BeamSection()
    n = f.n_jt
    ndof = 6 * n
    K = np.zeros((ndof, ndof))
    frames = np.zeros((f.n_mb, 3, 3))
    locals_ = np.zeros((f.n_mb, 12, 12))
    rows, cols, vals = [], [], []
    for e, (a, b) in enumerate(f.members):
        lam = member_axes(f.joints[a], f.joints[b])
        L = float(np.linalg.norm(f.joints[b] - f.joints[a]))
        k = local_beam_stiffness(L, s)
        T = np.kron(np.eye(4), lam)
        kg = T.T @ k @ T
        dofs = np.r_[6 * a : 6 * a + 6, 6 * b : 6 * b + 6]
        K[np.ix_(dofs, dofs)] += kg
        frames[e] = lam
        locals_[e] = k
        # member load at the start node, axial force reported tension-positive
        block = (k @ T)[:6].copy()
        block[0] *= -1.0
        r, cc = np.nonzero(np.abs(block) > 0)
        rows.extend(6 * e + r)
        cols.extend(dofs[cc])
        vals.extend(block[r, cc])
    K = 0.5 * (K + K.T)
    K_mb = sparse.csr_matrix((vals, (rows, cols)), shape=(6 * f.n_mb, ndof))
    lam, V = np.linalg.eigh(K)
    cut = PINV_RTOL * lam.max()
    keep = lam > cut
    zero = int(np.sum(~keep))
    K_pinv = (V[:, keep] / lam[keep]) @ V[:, keep].T
    return StiffnessSystem(f, s, K, K_mb, _rigid_body_rows(f.joints), K_pinv, zero, frames, locals_)


def require_connected(sys: StiffnessSystem) -> None:
    if sys.zero_modes != 6:
        raise FrameError(f"expected 6 rigid-body modes, found {sys.zero_modes}")


def load_imbalance(sys: StiffnessSystem, P) -> np.ndarray:
    """(sum of forces, sum of moments about the origin)."""
    return sys.H_rb @ np.asarray(P, dtype=float)


def solve_displacements(sys: StiffnessSystem, P, tol: float = BALANCE_TOL) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    imb = load_imbalance(sys, P)
    if np.linalg.norm(imb) > tol * max(1.0, np.linalg.norm(P)):
        raise UnbalancedLoad(f"load is not self-equilibrated (imbalance {np.linalg.norm(imb):.3e})")
    return sys.K_pinv @ P


def member_loads(sys: StiffnessSystem, v) -> np.ndarray:
    """(n_mb, 6) rows (N, V_y, V_z, T, M_y, M_z) at each member's start node; N > 0 in tension."""
    return (sys.K_mb @ np.asarray(v, dtype=float)).reshape(-1, 6)


def member_end_forces(sys: StiffnessSystem, v) -> np.ndarray:
    """(n_mb, 12) local end forces of every member (both nodes), element sign convention."""
    v = np.asarray(v, dtype=float)
    out = np.zeros((sys.frame.n_mb, 12))
    for e, (a, b) in enumerate(sys.frame.members):
        T = np.kron(np.eye(4), sys.member_frames[e])
        d = np.r_[v[6 * a : 6 * a + 6], v[6 * b : 6 * b + 6]]
        out[e] = sys.member_local_k[e] @ T @ d
    return out


def _translational_index(n_jt: int) -> np.ndarray:
    return (6 * np.arange(n_jt)[:, None] + np.arange(3)[None, :]).ravel()


def compliance_matrix(sys: StiffnessSystem) -> np.ndarray:
    """M_tr K^+ M_tr^T."""
    idx = _translational_index(sys.frame.n_jt)
    return sys.K_pinv[np.ix_(idx, idx)]


def balanced_force_basis(sys: StiffnessSystem) -> np.ndarray:
    """Orthonormal basis (3 n_jt, 3 n_jt - 6) of force-only loads with zero net force and moment."""
    E = sys.H_rb[:, _translational_index(sys.frame.n_jt)]
    return null_space(E, rcond=PINV_RTOL)


def lift_forces(f: np.ndarray) -> np.ndarray:
    """Force-only generalized load vector from stacked joint forces."""
    f = np.asarray(f, dtype=float).reshape(-1, 3)
    P = np.zeros((len(f), 6))
    P[:, :3] = f
    return P.ravel()


def max_compliance(sys: StiffnessSystem) -> tuple[float, np.ndarray]:
    """Largest translational displacement norm over unit balanced force-only loads.

    Returns sigma_1 and the maximizing load as a 6 n_jt vector.  The top
    eigenvector of the full compliance matrix can carry a net moment on
    frames without enough symmetry, so the maximization is restricted to
    the balanced subspace; see ``max_compliance_unrestricted``.
    """
    require_connected(sys)
    B = balanced_force_basis(sys)
    _, s, Vt = np.linalg.svd(compliance_matrix(sys) @ B, full_matrices=False)
    f = B @ Vt[0]
    return float(s[0]), lift_forces(f)


def max_compliance_unrestricted(sys: StiffnessSystem) -> float:
    """Largest eigenvalue of M_tr K^+ M_tr^T over all force-only loads."""
    require_connected(sys)
    G = compliance_matrix(sys)
    return float(np.linalg.eigvalsh(0.5 * (G + G.T))[-1])


def axial_influence(sys: StiffnessSystem) -> np.ndarray:
    """(n_mb, 3 n_jt): axial load of each member per unit joint force."""
    idx = _translational_index(sys.frame.n_jt)
    ax_rows = sys.K_mb[np.arange(sys.frame.n_mb) * 6]
    return np.asarray(ax_rows @ sys.K_pinv[:, idx])


def max_axial_load(sys: StiffnessSystem) -> tuple[float, int]:
    """Largest member axial load over unit balanced force-only loads."""
    require_connected(sys)
    RB = axial_influence(sys) @ balanced_force_basis(sys)
    norms = np.linalg.norm(RB, axis=1)
    i = int(np.argmax(norms))
    return float(norms[i]), i


def max_axial_load_unrestricted(sys: StiffnessSystem) -> float:
    require_connected(sys)
    return float(np.max(np.linalg.norm(axial_influence(sys), axis=1)))


def worst_axial_forces(sys: StiffnessSystem, member: int) -> np.ndarray:
    """Unit balanced force-only load maximizing the axial load of one member."""
    B = balanced_force_basis(sys)
    y = axial_influence(sys)[member] @ B
    return lift_forces(B @ (y / np.linalg.norm(y)))


def layer_count(c: Configuration, tol: float = 1e-6) -> int:
    z = np.sort(np.asarray(c.centered_positions)[:, 2])
    scale = max(1.0, float(np.max(np.abs(z)))) if z.size else 1.0
    return int(1 + np.sum(np.diff(z) > tol * scale))


def rigid_motion(joints: np.ndarray, translation=(0.0, 0.0, 0.0), rotation=(0.0, 0.0, 0.0), about=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Generalized displacement of an infinitesimal rigid motion."""
    t = np.asarray(translation, dtype=float)
    w = np.asarray(rotation, dtype=float)
    c = np.asarray(about, dtype=float)
    out = np.zeros((len(joints), 6))
    out[:, :3] = t + np.cross(w, joints - c)
    out[:, 3:] = w
    return out.ravel()


def indicators(c: Configuration, section: BeamSection | None = None) -> dict:
    sys = assemble_stiffness(build_frame(c), section)
    s1, _ = max_compliance(sys)
    s2, i = max_axial_load(sys)
    return {
        "sigma1": s1,
        "sigma2": s2,
        "sigma1_unrestricted": max_compliance_unrestricted(sys),
        "sigma2_unrestricted": max_axial_load_unrestricted(sys),
        "argmax_member": i,
        "n_jt": sys.frame.n_jt,
        "n_mb": sys.frame.n_mb,
    }
