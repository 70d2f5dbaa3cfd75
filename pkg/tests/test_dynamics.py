import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dodecopter.dynamics import (
    HoverInfeasible,
    InvalidConfiguration,
    ModuleParams,
    RigidState,
    assemble_from_arrays,
    assemble_vehicle,
    bound_matrices,
    dynamics_derivative,
    hover_vector,
    skew,
)
from dodecopter.fixtures import build_fixture
from dodecopter.geometry import Configuration, ModulePlacement, make_configuration, orientation_directions

P = ModuleParams()


def test_params_validation_and_round_trip():
    q = ModuleParams.from_dict(P.to_dict())
    assert q.to_dict() == P.to_dict()
    assert np.allclose(ModuleParams.from_dict({"J_mdl": 0.1}).J_mdl, 0.1 * np.eye(3))
    with pytest.raises(ValueError):
        ModuleParams(k_th=0.0)
    with pytest.raises(ValueError):
        ModuleParams(u_min=1.0, u_max=0.5)
    with pytest.raises(ValueError):
        ModuleParams(J_mdl=np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(ValueError):
        ModuleParams.from_dict({"mass": 2.0})


def test_single_vertical_module():
    for spin in (1, -1):
        m = assemble_vehicle(make_configuration([ModulePlacement((0, 0, 0), 0, spin)]))
        assert np.allclose(m.M_th[:, 0], [0, 0, P.k_th])
        assert np.allclose(m.M_to[:, 0], [0, 0, P.k_to * spin])
        assert m.dof == 1
        assert m.m_total == P.m_mdl
        assert np.allclose(m.J, P.J_mdl)


def test_bound_matrices():
    A, b = bound_matrices(3, 0.1, 0.9)
    for u, ok in [([0.5] * 3, True), ([0.05, 0.5, 0.5], False), ([0.5, 0.95, 0.5], False)]:
        assert bool(np.all(A @ np.array(u) <= b)) == ok


@pytest.mark.parametrize(
    "name,dof",
    [("quadrotor", 4), ("hexarotor", 4), ("hexarotor_6dof", 6), ("tetra_quad", 4), ("tetra_deca", 4), ("tetra_hexadeca", 4)],
)
def test_fixture_dof(name, dof):
    m = assemble_vehicle(build_fixture(name))
    assert m.dof == dof
    assert m.dof <= min(6, m.n)


def test_parallel_axis_inertia_oracle():
    c = build_fixture("tetra_quad")
    m = assemble_vehicle(c)
    # point masses at the centres plus per-module inertia, via second moments
    r = c.centered_positions
    S = P.m_mdl * r.T @ r
    J = 4 * P.J_mdl + np.trace(S) * np.eye(3) - S
    assert np.allclose(m.J, J, atol=1e-12)
    assert np.allclose(m.J, m.J.T)


def test_actuation_columns_oracle():
    c = build_fixture("hexarotor_6dof")
    m = assemble_vehicle(c)
    for i in range(c.n):
        eta = c.directions[i]
        p = c.centered_positions[i]
        assert np.allclose(m.M_th[:, i], P.k_th * eta)
        assert np.allclose(m.M_to[:, i], P.k_to * c.spins[i] * eta + P.k_th * np.cross(p, eta))
    assert np.allclose(m.M_tt, np.vstack([m.M_th, m.M_to]))


def test_invalid_configuration_rejected():
    good = make_configuration([ModulePlacement((0, 0, 0)), ModulePlacement((1, 0, 0))])
    bad = Configuration(good.placements + good.placements[:1], np.zeros((3, 3)), np.zeros(3))
    with pytest.raises(InvalidConfiguration):
        assemble_vehicle(bad)


def _state(R=None, Omega=(0.0, 0.0, 0.0)):
    return RigidState(np.zeros(3), np.eye(3) if R is None else R, np.zeros(3), np.asarray(Omega, dtype=float))


def test_hover_balances_gravity():
    m = assemble_vehicle(build_fixture("quadrotor"))
    t_h, u_h = hover_vector(m)
    assert np.allclose(t_h, [0, 0, m.m_total * P.g, 0, 0, 0])
    assert np.allclose(u_h, m.m_total * P.g / (4 * P.k_th), atol=1e-12)
    d = dynamics_derivative(_state(), u_h, m)
    assert np.allclose(d.v_dot, 0, atol=1e-12)
    assert np.allclose(d.Omega_dot, 0, atol=1e-12)


def test_free_fall():
    m = assemble_vehicle(build_fixture("quadrotor"))
    d = dynamics_derivative(_state(), np.zeros(4), m)
    assert np.allclose(d.v_dot, [0, 0, -P.g])


def test_yaw_sign_follows_spin():
    c = build_fixture("quadrotor")
    m = assemble_vehicle(c)
    _, u_h = hover_vector(m)
    for s in (1, -1):
        u = u_h + 0.01 * (c.spins == s)
        d = dynamics_derivative(_state(), u, m)
        assert np.sign(d.Omega_dot[2]) == s
        assert abs(d.Omega_dot[2] - 0.02 * P.k_to * s / m.J[2, 2]) < 1e-12


def test_out_of_bounds_control_warns():
    m = assemble_vehicle(build_fixture("quadrotor"))
    with pytest.warns(RuntimeWarning):
        dynamics_derivative(_state(), np.full(4, 1.5), m)


def test_tetra_quad_hover_equal_entries():
    m = assemble_vehicle(build_fixture("tetra_quad"))
    t_h, u_h = hover_vector(m)
    assert np.ptp(u_h) < 1e-12
    assert np.linalg.norm(m.M_tt @ u_h - t_h) <= 1e-9 * np.linalg.norm(t_h)


def test_horizontal_rotors_cannot_hover():
    dirs = orientation_directions()
    horiz = [i for i in range(20) if abs(dirs[i][2]) < 0.5]
    c = make_configuration([ModulePlacement((0, 0, 0), horiz[0]), ModulePlacement((1, 0, 0), horiz[1])])
    with pytest.raises(HoverInfeasible):
        hover_vector(assemble_vehicle(c))


def test_hover_falls_back_to_feasible_control():
    """Three co-located rotors, two tilted symmetrically in the xz-plane.

    With b the vertical component of the tilted rotors and T/k_th = 1.2, the
    minimum-norm split is u_1 = 1.2 / (2 b^2 + 1) = 0.8 for b = 1/2, above
    u_max = 0.7, while u = (0.7, 0.5, 0.5) hovers inside the box.
    """
    b = 0.5
    a = np.sqrt(1 - b * b)
    pos = np.zeros((3, 3))
    dirs = [[0.0, 0.0, 1.0], [a, 0.0, b], [-a, 0.0, b]]
    k = 3 * 1.7 * 9.81 / 1.2
    p = ModuleParams(k_th=k, k_to=0.0, u_max=0.7)
    m = assemble_from_arrays(pos, dirs, [1, -1, 1], p)
    assert abs((np.linalg.pinv(m.M_tt) @ (m.m_total * p.g * np.eye(6)[2]))[0] - 0.8) < 1e-12
    t_h, u_h = hover_vector(m)
    assert np.all(u_h <= p.u_max + 1e-9) and np.all(u_h >= p.u_min - 1e-9)
    assert np.linalg.norm(m.M_tt @ u_h - t_h) <= 1e-9 * np.linalg.norm(t_h)
    with pytest.raises(HoverInfeasible):
        hover_vector(assemble_from_arrays(pos, dirs, [1, -1, 1], ModuleParams(k_th=k, k_to=0.0, u_max=0.5)))


def _rk4(m, s, u, h, steps):
    def f(x, R, v, w):
        d = dynamics_derivative(RigidState(x, R, v, w), u, m)
        return d.x_dot, d.R_dot, d.v_dot, d.Omega_dot

    x, R, v, w = s.x, s.R, s.v, s.Omega
    for _ in range(steps):
        k1 = f(x, R, v, w)
        k2 = f(*(a + 0.5 * h * b for a, b in zip((x, R, v, w), k1)))
        k3 = f(*(a + 0.5 * h * b for a, b in zip((x, R, v, w), k2)))
        k4 = f(*(a + h * b for a, b in zip((x, R, v, w), k3)))
        x, R, v, w = (a + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip((x, R, v, w), k1, k2, k3, k4))
    return RigidState(x, R, v, w)


def test_energy_conserved_without_control():
    m = assemble_vehicle(build_fixture("tetra_quad"))
    s0 = RigidState(np.zeros(3), np.eye(3), np.array([1.0, -0.5, 2.0]), np.array([0.3, -0.2, 0.5]))

    def energy(s):
        return 0.5 * m.m_total * s.v @ s.v + 0.5 * s.Omega @ m.J @ s.Omega - m.m_total * m.gravity @ s.x

    s1 = _rk4(m, s0, np.zeros(4), 1e-3, 1000)
    assert abs(energy(s1) - energy(s0)) < 1e-6 * abs(energy(s0))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_rotation_rate_is_skew(axis, w):
    a = np.asarray(axis)
    R = np.eye(3)
    if np.linalg.norm(a) > 1e-9:
        K = skew(a / np.linalg.norm(a))
        t = np.linalg.norm(a)
        R = np.eye(3) + np.sin(t) * K + (1 - np.cos(t)) * K @ K
    m = assemble_vehicle(build_fixture("quadrotor"))
    d = dynamics_derivative(_state(R, w), np.full(4, 0.4), m)
    X = R.T @ d.R_dot
    assert np.allclose(X, -X.T, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.tuples(*[st.integers(-20, 20)] * 3))
def test_translation_invariance(shift):
    c = build_fixture("tetra_quad")
    moved = make_configuration(
        [ModulePlacement(tuple(a + b for a, b in zip(p.lattice_pos, shift)), p.orientation, p.spin) for p in c.placements],
        c.module_scale,
    )
    a, b = assemble_vehicle(c), assemble_vehicle(moved)
    assert a.m_total == b.m_total
    for X, Y in [(a.J, b.J), (a.M_th, b.M_th), (a.M_to, b.M_to)]:
        assert np.allclose(X, Y, atol=1e-10)
