"""Control allocation matrices, reachable actuation sets and the rotor power model.

Allocation matrices are n x 6 and *proper*: ``M_tt C = H`` and ``C H = C``
where H is the orthogonal projector onto range(M_tt).  Every proper matrix can
be written ``C = M_tt^+ + N Z U_r^T`` with N a nullspace basis of M_tt and U_r
a range basis, which is how the optimization-based methods parameterize it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import ConvexHull
from scipy.special import gamma, logsumexp

from . import socp
from .dynamics import RANK_RTOL, VehicleModel, hover_vector

ALLOC_TOL = 1e-8
# E|N(mu, v)|^{3/2} = POWER_CONST * v^{3/4} * 1F1(-3/4, 1/2, -mu^2 / (2 v))
POWER_CONST = 2.0 ** 0.75 * math.gamma(1.25) / math.sqrt(math.pi)
# Above this argument magnitude the power model uses the large-argument expansion.
_ASYMPTOTIC_X = 60.0


class AllocationError(RuntimeError):
    pass


class HoverNotInterior(AllocationError):
    pass


class SolverFailure(AllocationError):
    pass


class NonConvergence(AllocationError):
    pass


class DegenerateEllipse(ValueError):
    pass


class DomainError(ValueError):
    pass


class TooManyModules(ValueError):
    pass


@dataclass(eq=False)
class AllocationMatrix:
    C: np.ndarray
    H: np.ndarray
    method: str
    u_h: np.ndarray
    t_h: np.ndarray
    info: dict = field(default_factory=dict)

    def residuals(self, M_tt: np.ndarray) -> tuple[float, float]:
        """(||M C - H||, ||C H - C||) in the max-abs norm."""
        return (
            float(np.max(np.abs(M_tt @ self.C - self.H))),
            float(np.max(np.abs(self.C @ self.H - self.C))),
        )

    def is_proper(self, M_tt: np.ndarray, tol: float = ALLOC_TOL) -> bool:
        a, b = self.residuals(M_tt)
        scale = max(1.0, float(np.max(np.abs(self.C))))
        return a <= tol and b <= tol * scale


@dataclass(eq=False)
class EllipseSpec:
    Q: np.ndarray
    S: np.ndarray
    L: np.ndarray  # Q^+ = L L^T

    @classmethod
    def from_Q(cls, Q) -> "EllipseSpec":
        Q = np.asarray(Q, dtype=float)
        if Q.shape != (6, 6) or not np.allclose(Q, Q.T, atol=1e-12):
            raise DegenerateEllipse("Q must be a symmetric 6x6 matrix")
        lam, U = np.linalg.eigh((Q + Q.T) / 2)
        if lam.size == 0 or lam.max() <= 0:
            raise DegenerateEllipse("Q has no positive eigenvalue")
        if lam.min() < -1e-10 * lam.max():
            raise DegenerateEllipse("Q is not positive semidefinite")
        keep = lam > 1e-12 * lam.max()
        Ur = U[:, keep]
        return cls(Q=Q, S=Ur @ Ur.T, L=Ur / np.sqrt(lam[keep]))

    @classmethod
    def identity(cls) -> "EllipseSpec":
        return cls.from_Q(np.eye(6))

    @classmethod
    def thrust_torque(cls, s: float) -> "EllipseSpec":
        """Q_s = diag(I/s, s I): torques weighted against thrusts by the ratio s."""
        return cls.from_Q(np.diag([1 / s] * 3 + [s] * 3))

    @classmethod
    def axes(cls, idx) -> "EllipseSpec":
        """Projector onto the selected actuation axes (0-2 forces, 3-5 torques)."""
        Q = np.zeros((6, 6))
        for i in idx:
            Q[i, i] = 1.0
        return cls.from_Q(Q)


@dataclass(eq=False)
class PowerModel:
    Sigma: np.ndarray
    u_h: np.ndarray
    exponent: float = 1.5

    def __post_init__(self) -> None:
        self.Sigma = np.asarray(self.Sigma, dtype=float)
        self.u_h = np.asarray(self.u_h, dtype=float)
        if self.Sigma.shape != (6, 6) or not np.allclose(self.Sigma, self.Sigma.T, atol=1e-12):
            raise ValueError("Sigma must be a symmetric 6x6 matrix")
        if np.linalg.eigvalsh(self.Sigma).min() < -1e-12 * max(1.0, np.abs(self.Sigma).max()):
            raise ValueError("Sigma must be positive semidefinite")
        if self.exponent != 1.5:
            raise ValueError("only the 3/2 power law is modelled")


def projector(M: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Orthogonal projector onto range(M)."""
    return _range_basis(M, rtol) @ _range_basis(M, rtol).T


def _range_basis(M: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    U, s, _ = np.linalg.svd(np.atleast_2d(M))
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((M.shape[0], 0))
    return U[:, : int(np.sum(s > rtol * s[0]))]


def _null_basis(M: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    _, s, Vt = np.linalg.svd(M)
    r = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
    return Vt[r:].T


def _pinv(M: np.ndarray) -> np.ndarray:
    return np.linalg.pinv(M, rcond=RANK_RTOL)


def pseudo_inverse_allocation(m: VehicleModel, u_h=None) -> AllocationMatrix:
    t_h, uh = hover_vector(m)
    if u_h is not None:
        uh = np.asarray(u_h, dtype=float)
    C = _pinv(m.M_tt)
    return AllocationMatrix(C, projector(m.M_tt), "PseudoInverse", uh, t_h)


def _bound_rows(m: VehicleModel):
    return m.A, m.b


def _check_interior(m: VehicleModel, u_h) -> np.ndarray:
    A, b = _bound_rows(m)
    slack = b - A @ u_h
    if np.any(slack <= 0):
        raise HoverNotInterior("hover control must lie strictly inside the control bounds")
    return slack


def _proper_parameterization(M: np.ndarray):
    """C(Z) = P + N Z U_r^T with P = M^+."""
    return _pinv(M), _null_basis(M), _range_basis(M)


def _authority_norm_rows(C: np.ndarray, A: np.ndarray, L: np.ndarray) -> np.ndarray:
    return np.linalg.norm(A @ C @ L, axis=1)


def max_authority_allocation(m: VehicleModel, u_h, e: EllipseSpec | None = None, tol: float = socp.DEFAULT_TOL):
    """Largest Q-ellipse around hover contained in the reachable set; returns (alloc, r).

    Variables are ordered (vec(Z) row-major, s).
    """
    e = e or EllipseSpec.identity()
    u_h = np.asarray(u_h, dtype=float)
    slack = _check_interior(m, u_h)
    A, _ = _bound_rows(m)
    P, N, Ur = _proper_parameterization(m.M_tt)
    k, r_dim = N.shape[1], Ur.shape[1]
    nz = k * r_dim
    nv = nz + 1
    L = e.L
    q = L.shape[1]

    # row i of A C L is (A P L)_i + sum_{ab} (A N)_{ia} Z_ab (U_r^T L)_{b,:}
    APL = A @ P @ L
    AN = A @ N
    UL = Ur.T @ L
    cones = []
    for i in range(A.shape[0]):
        F = np.zeros((q, nv))
        for a in range(k):
            for bb in range(r_dim):
                F[:, a * r_dim + bb] = AN[i, a] * UL[bb]
        h = np.zeros(nv)
        h[-1] = slack[i]
        cones.append(socp.SocConstraint.make(F, APL[i], h, 0.0))
    c = np.zeros(nv)
    c[-1] = 1.0
    prob = socp.SocpProblem(nv, c, cones=cones)
    sol = socp.solve(prob, tol=tol)
    if sol.status is not socp.Status.OPTIMAL:
        raise SolverFailure(f"authority program: {sol.status.value} ({sol.backend_status})")
    s = sol.x[-1]
    if s <= 0:
        raise SolverFailure("authority program returned a nonpositive s (unbounded radius)")
    Z = sol.x[:nz].reshape(k, r_dim)
    C = P + N @ Z @ Ur.T
    r = 1.0 / s
    norms = _authority_norm_rows(C, A, L)
    with np.errstate(divide="ignore"):
        ratios = np.where(norms > 0, slack / np.where(norms > 0, norms, 1), np.inf)
    r_exact = float(ratios.min())
    if abs(r_exact - r) > 1e-6 * r:
        raise SolverFailure(f"radius mismatch: 1/s = {r} but direct evaluation gives {r_exact}")
    binding = [int(i) for i in np.flatnonzero(ratios <= r_exact * (1 + 1e-6))]
    i0 = binding[0]
    v = (A[i0] @ C @ L) / norms[i0]
    alloc = AllocationMatrix(
        C,
        projector(m.M_tt),
        "MaxAuthority",
        u_h,
        hover_vector(m)[0],
        {
            "r": r,
            "r_exact": r_exact,
            "binding_rows": binding,
            "binding_direction": L @ v,
            "Q": e.Q,
            "solution": sol,
            "problem": prob,
        },
    )
    return alloc, r


def ellipse_boundary_points(e: EllipseSpec, r: float, K: int = 512, seed: int = 0) -> np.ndarray:
    """K points t with sqrt(t^T Q t) = r on the ellipse (rows)."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((K, e.L.shape[1]))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return r * v @ e.L.T


def authority_radius(m: VehicleModel, alloc: AllocationMatrix, P_sub, tol: float = socp.DEFAULT_TOL) -> float:
    """Largest radius of the P_sub-ellipse reachable with the allocation fixed.

    Returns 0.0 when the subspace lies outside range(M_tt) (no actuation is produced there).
    """
    e = P_sub if isinstance(P_sub, EllipseSpec) else EllipseSpec.from_Q(P_sub)
    if np.max(np.abs(alloc.H @ e.S)) < 1e-9:
        return 0.0
    slack = _check_interior(m, alloc.u_h)
    A, _ = _bound_rows(m)
    norms = _authority_norm_rows(alloc.C, A, e.L)
    # minimize s subject to ||(A C L)_i|| <= s * slack_i; variable vector (s,)
    cones = [
        socp.SocConstraint.make(np.zeros((e.L.shape[1], 1)), A[i] @ alloc.C @ e.L, [slack[i]], 0.0)
        for i in range(A.shape[0])
    ]
    prob = socp.SocpProblem(1, [1.0], cones=cones)
    sol = socp.solve(prob, tol=tol)
    if sol.status is not socp.Status.OPTIMAL:
        raise SolverFailure(f"authority radius: {sol.status.value}")
    direct = float(np.min(slack[norms > 0] / norms[norms > 0])) if np.any(norms > 0) else np.inf
    s = sol.x[0]
    if s <= 0:
        return direct
    return 1.0 / s


def allocate(alloc: AllocationMatrix, t_cmd, m: VehicleModel) -> tuple[np.ndarray, float]:
    """Control for a commanded actuation, scaled back towards hover if saturated."""
    delta = alloc.C @ (np.asarray(t_cmd, dtype=float) - alloc.t_h)
    u_h = alloc.u_h
    alpha = 1.0
    for d, u0 in zip(delta, u_h):
        if d > 0:
            alpha = min(alpha, (m.u_max - u0) / d)
        elif d < 0:
            alpha = min(alpha, (m.u_min - u0) / d)
    alpha = max(alpha, 0.0)
    u = u_h + alpha * delta
    return np.clip(u, m.u_min, m.u_max), float(alpha)


# --- reachable sets ---------------------------------------------------------------


@dataclass(eq=False)
class ReachablePolytope:
    kind: str  # "halfspace" or "hull"
    G: np.ndarray | None = None
    h: np.ndarray | None = None
    # hull data (in the selected 3-D coordinates)
    points: np.ndarray | None = None
    center: np.ndarray | None = None
    basis: np.ndarray | None = None
    equations: np.ndarray | None = None
    vertices: np.ndarray | None = None
    simplices: np.ndarray | None = None
    axes: tuple | None = None

    def contains(self, t, tol: float = 1e-9) -> bool:
        t = np.asarray(t, dtype=float)
        if self.kind == "halfspace":
            return bool(np.all(self.G @ t <= self.h + tol))
        d = t - self.center
        scale = max(1.0, float(np.max(np.abs(self.points))))
        coords = d @ self.basis
        if np.linalg.norm(d - self.basis @ coords) > tol * scale:
            return False
        k = self.basis.shape[1]
        if k == 0:
            return True
        if k == 1:
            lo, hi = self.equations
            return bool(lo - tol * scale <= coords[0] <= hi + tol * scale)
        return bool(np.all(self.equations[:, :-1] @ coords + self.equations[:, -1] <= tol * scale))

    def to_off(self) -> str:
        """OFF mesh of a 3-D hull (vertices and triangular facets)."""
        if self.kind != "hull" or self.simplices is None:
            raise ValueError("only full-dimensional 3-D hulls can be exported as OFF")
        pts = self.points
        lines = ["OFF", f"{len(pts)} {len(self.simplices)} 0"]
        lines += [" ".join(f"{x:.9g}" for x in p) for p in pts]
        lines += ["3 " + " ".join(str(int(i)) for i in s) for s in self.simplices]
        return "\n".join(lines) + "\n"


def reachable_under(m: VehicleModel, alloc: AllocationMatrix) -> ReachablePolytope:
    """{t : A (u_h + C t) <= b}, with t the actuation offset from hover."""
    return ReachablePolytope("halfspace", G=m.A @ alloc.C, h=m.b - m.A @ alloc.u_h)


AXES = {"forces": (0, 1, 2), "torques": (3, 4, 5), "thrust": (0, 1, 2), "torque": (3, 4, 5)}
MAX_GLOBAL_MODULES = 16


def reachable_global(m: VehicleModel, axes=(3, 4, 5)) -> ReachablePolytope:
    """Convex hull of the projected control-box vertices."""
    if isinstance(axes, str):
        axes = AXES[axes]
    axes = tuple(int(a) for a in axes)
    if m.n > MAX_GLOBAL_MODULES:
        raise TooManyModules(f"global reachable set limited to n <= {MAX_GLOBAL_MODULES}, got {m.n}")
    corners = np.array(list(itertools.product((m.u_min, m.u_max), repeat=m.n)))
    pts = corners @ m.M_tt[list(axes)].T
    center = pts.mean(axis=0)
    D = pts - center
    scale = max(1.0, float(np.max(np.abs(pts))))
    _, s, Vt = np.linalg.svd(D, full_matrices=False)
    k = int(np.sum(s > 1e-9 * max(s[0], 1e-300) * 1.0)) if s[0] > 1e-12 * scale else 0
    basis = Vt[:k].T
    coords = D @ basis
    if k == 0:
        return ReachablePolytope("hull", points=pts[:1], center=center, basis=basis, equations=np.zeros((0, 1)), axes=axes)
    if k == 1:
        lo, hi = coords[:, 0].min(), coords[:, 0].max()
        ends = pts[[int(np.argmin(coords[:, 0])), int(np.argmax(coords[:, 0]))]]
        return ReachablePolytope("hull", points=ends, center=center, basis=basis, equations=np.array([lo, hi]), axes=axes)
    hull = ConvexHull(coords)
    verts = pts[hull.vertices]
    simplices = None
    if k == 3:
        remap = {int(v): i for i, v in enumerate(hull.vertices)}
        simplices = np.array([[remap[int(i)] for i in s] for s in hull.simplices])
    return ReachablePolytope(
        "hull", points=verts, center=center, basis=basis, equations=hull.equations, vertices=verts, simplices=simplices, axes=axes
    )


def sample_reachable_under(poly: ReachablePolytope, H: np.ndarray, count: int, seed: int = 0) -> np.ndarray:
    """Random members of a half-space reachable set, drawn along random rays in range(H)."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        d = H @ rng.standard_normal(H.shape[0])
        nd = np.linalg.norm(d)
        if nd < 1e-12:
            continue
        d /= nd
        Gd = poly.G @ d
        pos = Gd > 1e-15
        tmax = float(np.min(poly.h[pos] / Gd[pos])) if np.any(pos) else 1.0
        out.append(rng.random() * tmax * d)
    return np.array(out)


# --- confluent hypergeometric function ------------------------------------------------


def _series(a: float, b: float, z: float, cap: int = 200000) -> float:
    """Direct power series of 1F1 for z >= 0 (positive-argument series)."""
    term, total, s = 1.0, 1.0, 0
    while True:
        term *= (a + s) / (b + s) * z / (s + 1)
        total += term
        s += 1
        if term == 0.0 or (s > z and abs(term) <= 1e-17 * abs(total)) or s > cap:
            return total


def _kummer_negative(a: float, b: float, x: float, cap: int = 200000) -> float:
    """1F1(a, b, -x) = e^{-x} 1F1(b - a, b, x) for x > 0, folding e^{-x} in bounded chunks."""
    a2 = b - a
    remaining = x
    term, total, s = 1.0, 1.0, 0
    while True:
        term *= (a2 + s) / (b + s) * x / (s + 1)
        total += term
        s += 1
        if abs(total) > 1e250 and remaining > 0:
            c = min(remaining, 575.0)
            f = math.exp(-c)
            total *= f
            term *= f
            remaining -= c
        if term == 0.0 or (s > x and abs(term) <= 1e-17 * abs(total)) or s > cap:
            break
    while remaining > 0:
        c = min(remaining, 575.0)
        total *= math.exp(-c)
        remaining -= c
    return total


def hyp1f1(a: float, b: float, z: float) -> float:
    """Confluent hypergeometric function 1F1(a; b; z)."""
    if b <= 0 and float(b).is_integer():
        raise DomainError("b must not be a nonpositive integer")
    z = float(z)
    if z >= 0:
        return _series(a, b, z)
    return _kummer_negative(a, b, -z)


def hyp1f1_asymptotic_negative(a: float, b: float, x, terms: int = 60):
    """Large-x expansion of 1F1(a; b; -x), exponentially small part dropped."""
    x = np.asarray(x, dtype=float)
    total = np.ones_like(x)
    term = np.ones_like(x)
    beta = a - b + 1.0
    for s in range(terms):
        term = term * (a + s) * (beta + s) / (s + 1) / x
        total = total + term
    return gamma(b) / gamma(b - a) * x ** (-a) * total


def _hyp1f1_neg_vec(a: float, b: float, x: np.ndarray) -> np.ndarray:
    """1F1(a; b; -x) for an array of x >= 0."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    big = x > _ASYMPTOTIC_X
    if np.any(big):
        out[big] = hyp1f1_asymptotic_negative(a, b, x[big])
    for idx in np.flatnonzero(~big):
        out[idx] = _kummer_negative(a, b, float(x[idx]))
    return out


# --- power model ---------------------------------------------------------------------


def _power_from_var(u, v) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    out = np.abs(u) ** 1.5
    pos = v > 0
    if np.any(pos):
        x = u[pos] ** 2 / (2.0 * v[pos])
        small = x <= _ASYMPTOTIC_X
        vals = np.empty(x.shape)
        if np.any(small):
            vals[small] = POWER_CONST * v[pos][small] ** 0.75 * _hyp1f1_neg_vec(-0.75, 0.5, x[small])
        if np.any(~small):
            # |u|^{3/2} times the asymptotic correction series
            vals[~small] = POWER_CONST * v[pos][~small] ** 0.75 * hyp1f1_asymptotic_negative(-0.75, 0.5, x[~small])
        out[pos] = vals
    return out


def _power_dv(u, v) -> np.ndarray:
    """d/dv of E|N(u, v)|^{3/2} for v > 0."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    x = u**2 / (2.0 * v)
    F = _hyp1f1_neg_vec(-0.75, 0.5, x)
    dF = -1.5 * _hyp1f1_neg_vec(0.25, 1.5, x)  # d/dz 1F1(a,b,z) = a/b 1F1(a+1,b+1,z)
    return POWER_CONST * (0.75 * v ** (-0.25) * F + v**0.75 * dF * x / v)


def avg_power(c_row, u_h_i: float, Sigma) -> float:
    """Average of |u_i|^{3/2} when the commanded actuation is Gaussian with covariance Sigma."""
    c = np.asarray(c_row, dtype=float)
    v = float(c @ np.asarray(Sigma, dtype=float) @ c)
    if v < -1e-15:
        raise ValueError("c Sigma c^T must be nonnegative")
    return float(_power_from_var(np.array([u_h_i]), np.array([max(v, 0.0)]))[0])


def module_powers(C: np.ndarray, u_h, Sigma) -> np.ndarray:
    v = np.einsum("ij,jk,ik->i", C, Sigma, C)
    return _power_from_var(np.asarray(u_h, dtype=float), np.maximum(v, 0.0))


def convexity_check_f(grid) -> dict:
    """Second differences of f(x) = x^{-3/4} 1F1(-3/4, 1/2, -x) on a (possibly uneven) grid."""
    x = np.asarray(grid, dtype=float)
    if np.any(x <= 0):
        raise ValueError("grid must lie in (0, inf)")
    f = np.array([xi ** (-0.75) * hyp1f1(-0.75, 0.5, -xi) for xi in x])
    h0 = x[1:-1] - x[:-2]
    h1 = x[2:] - x[1:-1]
    d2 = 2.0 * (h0 * f[2:] - (h0 + h1) * f[1:-1] + h1 * f[:-2]) / (h0 * h1 * (h0 + h1))
    k = int(np.argmin(d2))
    return {
        "min_second_difference": float(d2[k]),
        "at": float(x[k + 1]),
        "passed": bool(d2.min() >= -1e-8),
        "f_positive": bool(np.all(f > 0)),
        "f": f,
        "second_differences": d2,
    }


def min_power_allocation(
    m: VehicleModel,
    u_h,
    pm: PowerModel,
    max_iter: int = 2000,
    mus=(1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5),
) -> AllocationMatrix:
    """Proper allocation with C t_h = u_h minimizing the largest module average power.

    The feasible set is parameterized exactly, C(Y) = C_0 + N Y B^T U_r^T, so the
    problem is unconstrained in Y.  The max over modules is replaced by a
    log-sum-exp with a decreasing temperature, each stage minimized with
    L-BFGS; the best true maximum seen is returned.
    """
    u_h = np.asarray(u_h, dtype=float)
    t_h = hover_vector(m)[0]
    M = m.M_tt
    P, N, Ur = _proper_parameterization(M)
    H = Ur @ Ur.T
    if np.linalg.norm(M @ u_h - t_h) > 1e-8 * np.linalg.norm(t_h):
        raise ValueError("u_h does not produce the hover actuation")
    w = Ur.T @ t_h
    nu = N.T @ (u_h - P @ t_h)
    C0 = P + N @ np.outer(nu, w) @ Ur.T / (w @ w)
    # B: orthonormal basis of the complement of w inside range coordinates
    B = _null_basis(w.reshape(1, -1)) if w.size > 1 else np.zeros((w.size, 0))
    k, q = N.shape[1], B.shape[1]
    Sigma = pm.Sigma
    base = module_powers(C0, u_h, Sigma)
    info = {"pinv_max_power": None, "stages": []}
    if k == 0 or q == 0 or np.allclose(Sigma, 0):
        alloc = AllocationMatrix(C0, H, "MinPower", u_h, t_h, {"max_power": float(base.max()), **info})
        return alloc

    R = B.T @ Ur.T  # q x 6

    def cmat(y):
        return C0 + N @ y.reshape(k, q) @ R

    scale = float(base.max()) if base.max() > 0 else 1.0

    def fg(y, mu):
        C = cmat(y)
        v = np.einsum("ij,jk,ik->i", C, Sigma, C)
        p = _power_from_var(u_h, np.maximum(v, 0.0)) / scale
        lse = logsumexp(p / mu)
        wts = np.exp(p / mu - lse)
        dv = np.where(v > 0, _power_dv(u_h, np.maximum(v, 1e-300)), 0.0) / scale
        G = (wts * dv)[:, None] * (2.0 * C @ Sigma)
        grad = N.T @ G @ R.T
        return mu * lse, grad.ravel()

    best_y = np.zeros(k * q)
    best = float(base.max())
    y = best_y.copy()
    converged = True
    for mu in mus:
        res = minimize(fg, y, args=(mu,), jac=True, method="L-BFGS-B", options={"maxiter": max_iter, "gtol": 1e-12, "ftol": 1e-15})
        y = res.x
        val = float(module_powers(cmat(y), u_h, Sigma).max())
        info["stages"].append({"mu": mu, "max_power": val, "nit": int(res.nit), "message": str(res.message)})
        converged = res.nit < max_iter
        if val < best:
            best, best_y = val, y.copy()
    if not converged:
        raise NonConvergence(f"power minimization hit the iteration cap ({max_iter})")
    C = cmat(best_y)
    alloc = AllocationMatrix(C, H, "MinPower", u_h, t_h, {"max_power": best, **info})
    if not alloc.is_proper(M, 1e-7):
        raise SolverFailure("power-optimal allocation lost properness")
    if np.max(np.abs(C @ t_h - u_h)) > 1e-8:
        raise SolverFailure("power-optimal allocation violates C t_h = u_h")
    return alloc
