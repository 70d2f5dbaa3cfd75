"""Second-order cone programs: representation, backend solve and independent checking.

A problem is

    minimize    c @ x
    subject to  A_eq x = b_eq
                A_in x <= b_in
                ||F_k x + g_k|| <= h_k @ x + d_k      for every cone k
                lb <= x <= ub

The embedded backend is Clarabel.  Every optimal answer is re-checked with
:func:`check_solution` before it is reported as optimal.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import clarabel
import numpy as np
from scipy import sparse

DEFAULT_TOL = 1e-8
MAX_ITER = 200


class Status(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass(frozen=True, eq=False)
class SocConstraint:
    """||F x + g|| <= h @ x + d."""

    F: sparse.csr_matrix
    g: np.ndarray
    h: np.ndarray
    d: float

    @classmethod
    def make(cls, F, g, h, d) -> "SocConstraint":
        F = sparse.csr_matrix(np.atleast_2d(F) if not sparse.issparse(F) else F)
        return cls(F, np.asarray(g, dtype=float).ravel(), np.asarray(h, dtype=float).ravel(), float(d))


def _as_rows(rows, n: int) -> sparse.csr_matrix:
    if rows is None:
        return sparse.csr_matrix((0, n))
    if sparse.issparse(rows):
        return sparse.csr_matrix(rows)
    arr = np.asarray(rows, dtype=float)
    if arr.size == 0:
        return sparse.csr_matrix((0, n))
    return sparse.csr_matrix(np.atleast_2d(arr))


@dataclass(eq=False)
class SocpProblem:
    num_vars: int
    objective: np.ndarray
    A_eq: sparse.csr_matrix = None
    b_eq: np.ndarray = None
    A_in: sparse.csr_matrix = None
    b_in: np.ndarray = None
    cones: list[SocConstraint] = field(default_factory=list)
    lb: np.ndarray = None
    ub: np.ndarray = None

    def __post_init__(self) -> None:
        n = int(self.num_vars)
        if n < 1:
            raise ValueError("a problem needs at least one variable")
        self.objective = np.asarray(self.objective, dtype=float).ravel()
        self.A_eq = _as_rows(self.A_eq, n)
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, dtype=float).ravel()
        self.A_in = _as_rows(self.A_in, n)
        self.b_in = np.zeros(0) if self.b_in is None else np.asarray(self.b_in, dtype=float).ravel()
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).ravel()
        self.cones = list(self.cones)
        if self.objective.size != n:
            raise ValueError("objective length differs from num_vars")
        if self.A_eq.shape != (self.b_eq.size, n) or self.A_in.shape != (self.b_in.size, n):
            raise ValueError("linear constraint dimensions are inconsistent")
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bound vectors have the wrong length")
        for k in self.cones:
            if k.F.shape != (k.g.size, n) or k.h.size != n:
                raise ValueError("cone dimensions are inconsistent")

    @classmethod
    def from_lists(cls, num_vars, objective, eq_constraints=(), soc_constraints=(), box_constraints=None, ineq_constraints=()):
        """Build from row lists: eq (a, c) means a @ x = c; soc (F, g, h, d); box (lb, ub)."""
        n = int(num_vars)
        A_eq = np.array([np.ravel(a) for a, _ in eq_constraints]).reshape(-1, n)
        b_eq = np.array([c for _, c in eq_constraints], dtype=float)
        A_in = np.array([np.ravel(a) for a, _ in ineq_constraints]).reshape(-1, n)
        b_in = np.array([c for _, c in ineq_constraints], dtype=float)
        cones = [SocConstraint.make(*k) for k in soc_constraints]
        lb, ub = box_constraints if box_constraints is not None else (None, None)
        return cls(n, objective, A_eq, b_eq, A_in, b_in, cones, lb, ub)

    @property
    def eq_constraints(self) -> list[tuple[np.ndarray, float]]:
        dense = self.A_eq.toarray()
        return [(dense[i], float(self.b_eq[i])) for i in range(dense.shape[0])]

    def scaled_objective(self, factor: float) -> "SocpProblem":
        return SocpProblem(self.num_vars, factor * self.objective, self.A_eq, self.b_eq, self.A_in, self.b_in, self.cones, self.lb, self.ub)


@dataclass
class ResidualReport:
    max_eq_residual: float
    max_ineq_violation: float
    max_soc_violation: float
    max_bound_violation: float
    objective: float
    worst_soc_row: int
    violated_soc_rows: list[int]
    passed: bool


@dataclass
class SocpSolution:
    status: Status
    x: np.ndarray | None
    objective_value: float
    report: ResidualReport | None = None
    iterations: int = 0
    backend_status: str = ""


def check_solution(p: SocpProblem, x, tol: float = DEFAULT_TOL) -> ResidualReport:
    """Independent feasibility check of a candidate point."""
    x = np.asarray(x, dtype=float).ravel()
    eq_res = 0.0
    if p.b_eq.size:
        r = np.abs(p.A_eq @ x - p.b_eq) / (1.0 + np.abs(p.b_eq))
        eq_res = float(r.max())
    in_res = 0.0
    if p.b_in.size:
        r = (p.A_in @ x - p.b_in) / (1.0 + np.abs(p.b_in))
        in_res = float(max(r.max(), 0.0))
    bnd = float(max(np.max(p.lb - x, initial=0.0), np.max(x - p.ub, initial=0.0), 0.0))
    soc_viol, worst, bad = 0.0, -1, []
    for k, cone in enumerate(p.cones):
        lhs = float(np.linalg.norm(cone.F @ x + cone.g))
        rhs = float(cone.h @ x + cone.d)
        v = (lhs - rhs) / (1.0 + lhs)
        if v > soc_viol:
            soc_viol, worst = v, k
        if v > tol:
            bad.append(k)
    passed = eq_res <= tol and in_res <= tol and soc_viol <= tol and bnd <= tol
    return ResidualReport(eq_res, in_res, soc_viol, bnd, float(p.objective @ x), worst, bad, passed)


def _clarabel_data(p: SocpProblem):
    n = p.num_vars
    blocks, rhs, cones = [], [], []
    if p.b_eq.size:
        blocks.append(p.A_eq)
        rhs.append(p.b_eq)
        cones.append(clarabel.ZeroConeT(p.b_eq.size))
    lin_rows, lin_rhs = [], []
    if p.b_in.size:
        lin_rows.append(p.A_in)
        lin_rhs.append(p.b_in)
    fin_u = np.flatnonzero(np.isfinite(p.ub))
    fin_l = np.flatnonzero(np.isfinite(p.lb))
    if fin_u.size:
        lin_rows.append(sparse.csr_matrix((np.ones(fin_u.size), (np.arange(fin_u.size), fin_u)), shape=(fin_u.size, n)))
        lin_rhs.append(p.ub[fin_u])
    if fin_l.size:
        lin_rows.append(sparse.csr_matrix((-np.ones(fin_l.size), (np.arange(fin_l.size), fin_l)), shape=(fin_l.size, n)))
        lin_rhs.append(-p.lb[fin_l])
    if lin_rows:
        blocks.append(sparse.vstack(lin_rows))
        r = np.concatenate(lin_rhs)
        rhs.append(r)
        cones.append(clarabel.NonnegativeConeT(r.size))
    for k in p.cones:
        # s = (h x + d, F x + g) in the cone  <=>  A x + s = b with A = -(h; F), b = (d; g)
        blocks.append(-sparse.vstack([sparse.csr_matrix(k.h.reshape(1, -1)), k.F]))
        rhs.append(np.concatenate([[k.d], k.g]))
        cones.append(clarabel.SecondOrderConeT(1 + k.g.size))
    if not blocks:
        blocks.append(sparse.csr_matrix((0, n)))
        rhs.append(np.zeros(0))
    A = sparse.csc_matrix(sparse.vstack(blocks))
    b = np.concatenate(rhs)
    return A, b, cones


_STATUS_MAP = {
    "Solved": Status.OPTIMAL,
    "AlmostSolved": Status.OPTIMAL,
    "PrimalInfeasible": Status.INFEASIBLE,
    "AlmostPrimalInfeasible": Status.INFEASIBLE,
    "DualInfeasible": Status.UNBOUNDED,
    "AlmostDualInfeasible": Status.UNBOUNDED,
}


def solve(p: SocpProblem, tol: float = DEFAULT_TOL, max_iter: int = MAX_ITER, check_tol: float | None = None) -> SocpSolution:
    """Solve with the interior-point backend and verify the answer independently."""
    n = p.num_vars
    A, b, cones = _clarabel_data(p)
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.tol_infeas_abs = tol
    settings.tol_infeas_rel = tol
    solver = clarabel.DefaultSolver(sparse.csc_matrix((n, n)), p.objective.copy(), A, b, cones, settings)
    sol = solver.solve()
    name = str(sol.status).split(".")[-1]
    status = _STATUS_MAP.get(name, Status.NUMERICAL_FAILURE)
    if status is not Status.OPTIMAL:
        return SocpSolution(status, None, float("nan"), None, int(sol.iterations), name)
    x = np.array(sol.x, dtype=float)
    report = check_solution(p, x, check_tol if check_tol is not None else max(tol, 1e-8) * 10)
    if not report.passed:
        return SocpSolution(Status.NUMERICAL_FAILURE, x, float(p.objective @ x), report, int(sol.iterations), name)
    return SocpSolution(Status.OPTIMAL, x, float(p.objective @ x), report, int(sol.iterations), name)


# --- plain-text dump -------------------------------------------------------------
#
#   socp 1
#   vars <n>
#   obj <c_0> ... <c_{n-1}>
#   bound <i> <lb> <ub>                    (only for variables with a finite bound)
#   eq <rhs> | <i>:<v> <i>:<v> ...
#   le <rhs> | <i>:<v> ...
#   cone <m> <d> | <i>:<v> ...            (h row; followed by m "row" lines)
#   row <g> | <i>:<v> ...                 (one row of F with its g entry)
#   end
#
# Floats are written with repr() so a dump re-reads to identical data.


def _fmt_row(row: sparse.csr_matrix) -> str:
    row = sparse.csr_matrix(row)
    row.sort_indices()
    return " ".join(f"{int(i)}:{float(v)!r}" for i, v in zip(row.indices, row.data) if v != 0.0)


def dumps(p: SocpProblem) -> str:
    out = ["socp 1", f"vars {p.num_vars}", "obj " + " ".join(repr(float(c)) for c in p.objective)]
    for i in range(p.num_vars):
        if np.isfinite(p.lb[i]) or np.isfinite(p.ub[i]):
            out.append(f"bound {i} {float(p.lb[i])!r} {float(p.ub[i])!r}")
    for i in range(p.b_eq.size):
        out.append(f"eq {float(p.b_eq[i])!r} | {_fmt_row(p.A_eq[i])}")
    for i in range(p.b_in.size):
        out.append(f"le {float(p.b_in[i])!r} | {_fmt_row(p.A_in[i])}")
    for k in p.cones:
        out.append(f"cone {k.g.size} {k.d!r} | {_fmt_row(sparse.csr_matrix(k.h.reshape(1, -1)))}")
        for r in range(k.g.size):
            out.append(f"row {float(k.g[r])!r} | {_fmt_row(k.F[r])}")
    out.append("end")
    return "\n".join(out) + "\n"


def _parse_row(text: str, n: int) -> np.ndarray:
    row = np.zeros(n)
    for tok in text.split():
        i, v = tok.split(":")
        row[int(i)] = float(v)
    return row


def loads(text: str) -> SocpProblem:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "socp 1":
        raise ValueError("not a socp dump")
    n = int(lines[1].split()[1])
    c = np.array([float(t) for t in lines[2].split()[1:]])
    lb, ub = np.full(n, -np.inf), np.full(n, np.inf)
    A_eq, b_eq, A_in, b_in, cones = [], [], [], [], []
    k = 3
    while lines[k] != "end":
        head, _, body = lines[k].partition(" | ")
        parts = head.split()
        if parts[0] == "bound":
            i = int(parts[1])
            lb[i], ub[i] = float(parts[2]), float(parts[3])
        elif parts[0] == "eq":
            A_eq.append(_parse_row(body, n))
            b_eq.append(float(parts[1]))
        elif parts[0] == "le":
            A_in.append(_parse_row(body, n))
            b_in.append(float(parts[1]))
        elif parts[0] == "cone":
            m, d = int(parts[1]), float(parts[2])
            h = _parse_row(body, n)
            F, g = [], []
            for _ in range(m):
                k += 1
                rh, _, rb = lines[k].partition(" | ")
                g.append(float(rh.split()[1]))
                F.append(_parse_row(rb, n))
            cones.append(SocConstraint.make(np.array(F).reshape(m, n), g, h, d))
        else:
            raise ValueError(f"unknown record {parts[0]!r}")
        k += 1
    return SocpProblem(
        n, c, np.array(A_eq).reshape(-1, n), np.array(b_eq), np.array(A_in).reshape(-1, n), np.array(b_in), cones, lb, ub
    )


def dump_problem(p: SocpProblem, path) -> None:
    Path(path).write_text(dumps(p), encoding="utf-8")


def load_problem(path) -> SocpProblem:
    return loads(Path(path).read_text(encoding="utf-8"))
