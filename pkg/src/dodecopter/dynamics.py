"""Rigid-body and actuation model of an assembled vehicle."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .geometry import Configuration, is_valid_configuration

RANK_RTOL = 1e-8


class InvalidConfiguration(ValueError):
    pass


class HoverInfeasible(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ModuleParams:
    m_mdl: float = 1.7
    J_mdl: np.ndarray = field(default_factory=lambda: 0.05 * np.eye(3))
    k_th: float = 40.0
    k_to: float = 0.5
    u_min: float = 0.0
    u_max: float = 1.0
    g: float = 9.81

    def __post_init__(self) -> None:
        J = np.asarray(self.J_mdl, dtype=float)
        object.__setattr__(self, "J_mdl", J)
        if J.shape != (3, 3) or not np.allclose(J, J.T) or np.linalg.eigvalsh(J).min() <= 0:
            raise ValueError("J_mdl must be a symmetric positive-definite 3x3 matrix")
        if self.k_th <= 0 or self.k_to < 0:
            raise ValueError("need k_th > 0 and k_to >= 0")
        if not 0 <= self.u_min < self.u_max:
            raise ValueError("need 0 <= u_min < u_max")
        if self.m_mdl <= 0 or self.g <= 0:
            raise ValueError("module mass and gravity must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ModuleParams":
        known = {"m_mdl", "J_mdl", "k_th", "k_to", "u_min", "u_max", "g"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown parameter fields: {sorted(extra)}")
        kw = dict(d)
        if "J_mdl" in kw:
            J = np.asarray(kw["J_mdl"], dtype=float)
            kw["J_mdl"] = J * np.eye(3) if J.ndim == 0 else J
        return cls(**kw)

    def to_dict(self) -> dict:
        return {
            "m_mdl": self.m_mdl,
            "J_mdl": self.J_mdl.tolist(),
            "k_th": self.k_th,
            "k_to": self.k_to,
            "u_min": self.u_min,
            "u_max": self.u_max,
            "g": self.g,
        }


@dataclass(frozen=True, eq=False)
class VehicleModel:
    n: int
    m_total: float
    J: np.ndarray
    M_th: np.ndarray
    M_to: np.ndarray
    M_tt: np.ndarray
    A: np.ndarray
    b: np.ndarray
    dof: int
    params: ModuleParams
    config: Configuration | None = None

    @property
    def gravity(self) -> np.ndarray:
        return np.array([0.0, 0.0, -self.params.g])

    @property
    def u_min(self) -> float:
        return self.params.u_min

    @property
    def u_max(self) -> float:
        return self.params.u_max


@dataclass(frozen=True)
class RigidState:
    x: np.ndarray
    R: np.ndarray
    v: np.ndarray
    Omega: np.ndarray


@dataclass(frozen=True)
class StateDerivative:
    x_dot: np.ndarray
    R_dot: np.ndarray
    v_dot: np.ndarray
    Omega_dot: np.ndarray


def skew(w) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def bound_matrices(n: int, u_min: float, u_max: float) -> tuple[np.ndarray, np.ndarray]:
    """A, b with A u <= b  <=>  u_min <= u <= u_max."""
    A = np.vstack([np.eye(n), -np.eye(n)])
    b = np.concatenate([np.full(n, u_max), np.full(n, -u_min)])
    return A, b


def numerical_rank(M: np.ndarray, rtol: float = RANK_RTOL) -> int:
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def actuation_matrices(positions, directions, spins, params: ModuleParams):
    P = np.atleast_2d(np.asarray(positions, dtype=float))
    E = np.atleast_2d(np.asarray(directions, dtype=float))
    eps = np.asarray(spins, dtype=float)
    M_th = params.k_th * E.T
    M_to = params.k_to * (eps[:, None] * E).T + params.k_th * np.cross(P, E).T
    return M_th, M_to


def assemble_from_arrays(positions, directions, spins, params: ModuleParams, config=None) -> VehicleModel:
    P = np.atleast_2d(np.asarray(positions, dtype=float))
    n = P.shape[0]
    M_th, M_to = actuation_matrices(P, directions, spins, params)
    M_tt = np.vstack([M_th, M_to])
    J = n * params.J_mdl + params.m_mdl * sum(p @ p * np.eye(3) - np.outer(p, p) for p in P)
    A, b = bound_matrices(n, params.u_min, params.u_max)
    return VehicleModel(
        n=n,
        m_total=n * params.m_mdl,
        J=J,
        M_th=M_th,
        M_to=M_to,
        M_tt=M_tt,
        A=A,
        b=b,
        dof=numerical_rank(M_tt),
        params=params,
        config=config,
    )


def assemble_vehicle(c: Configuration, p: ModuleParams | None = None) -> VehicleModel:
    p = p or ModuleParams()
    ok, why = is_valid_configuration(c)
    if not ok:
        raise InvalidConfiguration(why)
    return assemble_from_arrays(c.centered_positions, c.directions, c.spins, p, config=c)


def dynamics_derivative(s: RigidState, u, m: VehicleModel) -> StateDerivative:
    u = np.asarray(u, dtype=float)
    if np.any(u < m.u_min - 1e-12) or np.any(u > m.u_max + 1e-12):
        warnings.warn("control outside admissible bounds", RuntimeWarning, stacklevel=2)
    acc = s.R @ (m.M_th @ u) / m.m_total + m.gravity
    Jw = m.J @ s.Omega
    Omega_dot = np.linalg.solve(m.J, -np.cross(s.Omega, Jw) + m.M_to @ u)
    return StateDerivative(x_dot=np.array(s.v, dtype=float), R_dot=s.R @ skew(s.Omega), v_dot=acc, Omega_dot=Omega_dot)


def hover_actuation(m: VehicleModel) -> np.ndarray:
    return np.array([0.0, 0.0, m.m_total * m.params.g, 0.0, 0.0, 0.0])


def hover_vector(m: VehicleModel, tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Hover actuation t_h and a feasible control u_h achieving it.

    The minimum-norm solution is preferred; when it leaves the control box the
    closest feasible control in the max-norm is used instead.
    """
    t_h = hover_actuation(m)
    u_p = np.linalg.pinv(m.M_tt) @ t_h
    if np.linalg.norm(m.M_tt @ u_p - t_h) > tol * np.linalg.norm(t_h):
        raise HoverInfeasible("hover actuation is outside the range of the actuation matrix")
    if np.all(u_p >= m.u_min - 1e-12) and np.all(u_p <= m.u_max + 1e-12):
        return t_h, np.clip(u_p, m.u_min, m.u_max)

    # variables (u, s): min s  s.t.  M u = t_h,  |u - u_p| <= s,  bounds
    n = m.n
    c = np.zeros(n + 1)
    c[-1] = 1.0
    I = np.eye(n)
    A_ub = np.block([[I, -np.ones((n, 1))], [-I, -np.ones((n, 1))]])
    b_ub = np.concatenate([u_p, -u_p])
    A_eq = np.hstack([m.M_tt, np.zeros((6, 1))])
    bounds = [(m.u_min, m.u_max)] * n + [(0, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=t_h, bounds=bounds, method="highs")
    if res.status != 0:
        raise HoverInfeasible("no admissible control achieves hover")
    u = np.clip(res.x[:n], m.u_min, m.u_max)
    u = np.clip(u + np.linalg.pinv(m.M_tt) @ (t_h - m.M_tt @ u), m.u_min, m.u_max)
    if np.linalg.norm(m.M_tt @ u - t_h) > 1e-7 * np.linalg.norm(t_h):
        raise HoverInfeasible("hover LP returned an inaccurate control")
    return t_h, u
