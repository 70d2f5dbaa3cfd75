"""Oracles shared by the unit tests and the acceptance suite."""

import itertools

import mpmath
import numpy as np
from scipy.integrate import quad

from dodecopter.dynamics import assemble_vehicle
from dodecopter.fixtures import build_fixture
from dodecopter.geometry import ModulePlacement, make_configuration

# Published tetracopter mixer: one row per module, columns throttle, roll, pitch, yaw.
TETRA_MIXER = np.array([(1, -1, 3, 3), (1, -1, -1, -1), (1, 1, -3, -1), (1, 1, 1, -1)], dtype=float)


def ned_mixer(C, heading):
    """Columns (throttle, roll, pitch, yaw) of an allocation expressed in a z-down body frame.

    The body x axis points along ``heading`` (radians, measured in the z-up frame);
    throttle is upward force, so it keeps the z-up force column.
    """
    c, s = np.cos(heading), np.sin(heading)
    R = np.diag([1.0, -1.0, -1.0]) @ np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    Cp = np.asarray(C) @ np.kron(np.eye(2), R).T
    return np.column_stack([-Cp[:, 2], Cp[:, 3], Cp[:, 4], Cp[:, 5]])


def proportional_up_to_reindexing(K, pattern, rtol=1e-9):
    """Module permutation making every column of K a positive multiple of the pattern column."""
    for perm in itertools.permutations(range(len(pattern))):
        ratio = K[list(perm)] / pattern
        if np.all(np.ptp(ratio, axis=0) <= rtol * np.abs(ratio).max(axis=0)) and np.all(ratio[0] > 0):
            return perm
    return None


def tetra_mixer_search(headings_deg=range(0, 360, 30)):
    """All (spins, heading, permutation) whose unique allocation reproduces the published mixer."""
    base = build_fixture("tetra_quad")
    hits = []
    for spins in itertools.product((1, -1), repeat=4):
        c = make_configuration(
            [ModulePlacement(p.lattice_pos, p.orientation, s) for p, s in zip(base.placements, spins)], base.module_scale
        )
        m = assemble_vehicle(c)
        if m.dof < 4:
            continue
        C = np.linalg.pinv(m.M_tt)
        for h in headings_deg:
            perm = proportional_up_to_reindexing(ned_mixer(C, np.radians(h)), TETRA_MIXER)
            if perm is not None:
                hits.append((spins, h, perm))
    return hits


def quad_normal(mu, sd):
    """E|N(mu, sd^2)|^{3/2} by adaptive quadrature."""

    def f(t):
        return abs(t) ** 1.5 * np.exp(-0.5 * ((t - mu) / sd) ** 2) / (sd * np.sqrt(2 * np.pi))

    lo, hi = mu - 12 * sd, mu + 12 * sd
    pts = [0.0] if lo < 0 < hi else None
    val, _ = quad(f, lo, hi, points=pts, epsabs=1e-13, epsrel=1e-13, limit=400)
    return val


def hyp1f1_oracle(a, b, z, dps=60):
    """High-precision reference value."""
    with mpmath.workdps(dps):
        return float(mpmath.hyp1f1(mpmath.mpf(a), mpmath.mpf(b), mpmath.mpf(z)))
