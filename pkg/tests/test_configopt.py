import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dodecopter.configopt import (
    InfeasibleSkeleton,
    ModelFlags,
    ObjectiveSpec,
    SearchLimits,
    SearchTooLarge,
    WakeParams,
    authority_value_raw,
    build_graph,
    build_model,
    export_model,
    flow_feasible,
    is_connected,
    lift_assignment,
    model_from_text,
    model_to_text,
    placement_assignment,
    read_model,
    solve_branch_and_bound,
    solve_exhaustive,
    verify_assignment,
    wake_predicate,
)
from dodecopter.dynamics import ModuleParams, actuation_matrices
from dodecopter.fixtures import build_fixture
from dodecopter.frame import assemble_stiffness, frame_from_modules
from dodecopter.geometry import build_dodecahedron, connection_lattice_offsets, lattice_point, orientation_directions

TORQUE2 = ObjectiveSpec("torque_authority", axes=(4,), orientations=(0, 19))
TORQUE3 = ObjectiveSpec("torque_authority", axes=(2, 4, 5), orientations=(0, 19))
STRUCT = ObjectiveSpec("structural_bound")


def _bfs_oracle(depth):
    offs = [tuple(o) for o in connection_lattice_offsets()]
    shells = [{(0, 0, 0)}]
    for _ in range(depth):
        shells.append({tuple(np.add(v, o)) for v in shells[-1] for o in offs})
    return set().union(*shells)


def _bfs_connected(adj, chosen):
    chosen = set(chosen)
    start = next(iter(chosen))
    seen, stack = {start}, [start]
    while stack:
        for j in adj[stack.pop()]:
            if j in chosen and j not in seen:
                seen.add(j)
                stack.append(j)
    return seen == chosen


def test_graph_sizes():
    assert build_graph(1).n_vertices == 1
    assert build_graph(2).n_vertices == build_graph(3).n_vertices == 13
    g = build_graph(4)
    assert set(g.vertices) == _bfs_oracle(2)
    assert g.n_vertices == 55
    assert g.vertices[0] == (0, 0, 0)


def test_single_module_model():
    m = build_model(build_graph(1), 1, ObjectiveSpec("torque_authority"))
    assert m.n == 1 and m.graph.n_vertices == 1
    assert m.blocks["orient"].shape == (1, 20)
    rows = [r for r, t in enumerate(m.row_tags) if t == "orientation"]
    A = m.A.toarray()
    assert len(rows) == 1
    assert np.all(A[rows[0], m.blocks["orient"][0]] == 1.0)
    card = [r for r, t in enumerate(m.row_tags) if t == "cardinality"]
    # one position binary with sum = 1 forces it on
    assert A[card[0], m.blocks["beta"][0]] == 1.0 and m.rhs[card[0]] == 1.0


def test_wake_examples():
    up = np.array([0.0, 0.0, 1.0])
    assert wake_predicate([0, 0, -2], [0, 0, 0], up)
    assert not wake_predicate([3, 0, 0], [0, 0, 0], up)
    assert not wake_predicate([0, 0, 2], [0, 0, 0], up)
    assert not wake_predicate([0, 0, -5], [0, 0, 0], up, WakeParams(length=4.0))
    # radius defaults to the circumradius of a unit-inradius module
    r = WakeParams().resolved_radius
    assert wake_predicate([0.99 * r, 0, -1], [0, 0, 0], up)
    assert not wake_predicate([1.01 * r, 0, -1], [0, 0, 0], up)


def test_flow_matches_bfs_sampled():
    rng = np.random.default_rng(3)
    for n_modules in (3, 4):
        g = build_graph(n_modules)
        adj = g.adjacency()
        N = g.n_vertices
        for size in range(1, 7):
            for _ in range(8):
                alloc = rng.choice(N, size, replace=False)
                assert flow_feasible(g, alloc) == _bfs_connected(adj, alloc)


def test_flow_matches_bfs_on_a_neighbourhood_slice():
    g = build_graph(2)
    adj = g.adjacency()
    # every allocation drawn from vertices 0..7 (256 subsets, connected and not)
    for mask in range(1, 256):
        alloc = [i for i in range(8) if mask >> i & 1]
        assert flow_feasible(g, alloc) == _bfs_connected(adj, alloc)
        assert is_connected(adj, alloc) == _bfs_connected(adj, alloc)


def _feasible_torque_assignment(model, verts, orients, spins):
    a = placement_assignment(model, verts, orients, spins)
    X = model.meta["positions"][verts] + a.z
    D = orientation_directions()[list(orients)]
    res = authority_value_raw(X, D, spins, model.objective)
    if res is None:
        return None
    a.lam, C = res
    a.C = np.zeros((model.graph.n_vertices, 6))
    a.C[verts] = C
    return a


def test_big_m_rows_reduce_to_bilinear_rows():
    model = build_model(build_graph(3), 3, TORQUE3)
    verts, orients, spins = [0, 5, 8], [0, 0, 0], [1, -1, -1]
    a = _feasible_torque_assignment(model, verts, orients, spins)
    res = model.tag_residuals(lift_assignment(model, a))
    assert max(res.values()) < 1e-8
    assert verify_assignment(model, a).passed

    # an arbitrary allocation: linearized residuals equal the exact bilinear ones
    rng = np.random.default_rng(0)
    Cv = rng.normal(scale=0.01, size=(3, 6))
    a.C[verts] = Cv
    x = lift_assignment(model, a)
    r = model.A @ x - model.rhs
    tags = np.array(model.row_tags)
    lin_th = r[tags == "actuation_thrust"].reshape(6, 3).T
    lin_to = r[tags == "actuation_torque"].reshape(6, 3).T
    P = model.meta["positions"][verts] + a.z
    th, to = actuation_matrices(P, orientation_directions()[orients], spins, model.objective.params)
    exact = np.vstack([th, to]) @ Cv - model.objective.H
    assert np.allclose(lin_th, exact[:3], atol=1e-12)
    # the torque rows use z x H instead of z x (thrust), which agree once thrust rows hold
    z_cross = np.cross(a.z[None, :], (exact[:3] + model.objective.H[:3]).T).T
    h_cross = np.cross(a.z[None, :], model.objective.H[:3].T).T
    assert np.allclose(lin_to, exact[3:] - z_cross + h_cross, atol=1e-12)


def test_verify_tetrahedron_assignment():
    model = build_model(build_graph(4), 4, ObjectiveSpec("torque_authority", axes=(3, 4, 5)))
    c = build_fixture("tetra_quad")
    verts = [model.graph.index(p.lattice_pos) for p in c.placements]
    # upper rotors tilted parallel and the apex rotor anti-parallel keep every wake clear
    orients, spins = [1, 1, 18, 1], [1, -1, -1, 1]
    a = _feasible_torque_assignment(model, verts, orients, spins)
    rep = verify_assignment(model, a)
    assert rep.passed, rep.failed()

    # with all rotors vertical the apex module sits in the wake of the upper three
    flown = placement_assignment(model, verts, [p.orientation for p in c.placements], [p.spin for p in c.placements])
    assert verify_assignment(model, flown).failed() == ["wake"]

    adj = model.graph.adjacency()
    far = next(v for v in range(model.graph.n_vertices) if v not in verts and not set(adj[v]) & set(verts[:3]))
    moved = placement_assignment(model, verts[:3] + [far], orients, spins)
    assert not _bfs_connected(adj, moved.vertices)
    assert "connectivity" in verify_assignment(model, moved).failed()

    bad = placement_assignment(model, verts, orients, spins)
    bad.orient[verts[1], 5] = 1
    assert "orientation" in verify_assignment(model, bad).failed()


def test_backends_agree_on_torque_instances():
    for n, spec in ((2, TORQUE2), (3, TORQUE3)):
        model = build_model(build_graph(n), n, spec)
        ex = solve_exhaustive(model)
        bb = solve_branch_and_bound(model)
        assert ex.status == bb.status == "optimal"
        assert abs(ex.objective - bb.objective) <= 1e-6
        assert ex.report.passed and bb.report.passed
        assert verify_assignment(model, bb.assignment).passed
        # the relaxation bounds every node consistent with the optimum
        x = lift_assignment(model, ex.assignment)
        assert bb.info["root_bound"] <= ex.objective + 1e-6
        for fixed, bound in bb.info["bounds"]:
            if all(abs(x[i] - v) < 0.5 for i, v in fixed.items()):
                assert bound <= ex.objective + 1e-6


def test_two_module_torque_optimum_frozen():
    model = build_model(build_graph(2), 2, TORQUE2)
    assert abs(solve_exhaustive(model).objective - 0.0873490453) < 1e-8


def test_structural_two_modules_matches_brute_force():
    model = build_model(build_graph(2), 2, STRUCT)
    res = solve_exhaustive(model)
    assert res.report.passed
    dodeca = build_dodecahedron()
    unit = STRUCT.module_scale / dodeca.edge_length
    values = []
    for o in connection_lattice_offsets():
        P = np.array([[0.0, 0.0, 0.0], lattice_point(o)]) * unit
        P -= P.mean(axis=0)
        frame = frame_from_modules(P, STRUCT.module_scale)
        sys = assemble_stiffness(frame, STRUCT.section)
        load = np.zeros((frame.n_jt, 6))
        for p in P:
            own = np.abs(np.linalg.norm(frame.joints - p, axis=1) - dodeca.circumradius * unit) < 1e-9
            assert own.sum() == 20
            load[own, :3] += p / STRUCT.module_scale / 20.0
        values.append(np.linalg.norm(sys.K_pinv @ load.ravel()))
    assert abs(res.objective - min(values) / model.meta["lam_ref"]) < 1e-9
    # the twelve placements are images of one another under the rotation group
    assert np.ptp(values) < 1e-9 * max(values)


def test_backends_agree_on_structural_instances():
    for n in (2, 3):
        model = build_model(build_graph(n), n, STRUCT)
        ex, bb = solve_exhaustive(model), solve_branch_and_bound(model)
        assert abs(ex.objective - bb.objective) <= 1e-6
        assert ex.report.passed and bb.report.passed


def test_collective_thrust_prefers_vertical_rotors():
    Q = np.zeros((6, 6))
    Q[2, 2] = 1.0
    spec = ObjectiveSpec("ellipse_authority", axes=(2,), Q=Q, orientations=(0, 4), wake=WakeParams(enabled=False))
    model = build_model(build_graph(3), 3, spec)
    res = solve_exhaustive(model)
    a = res.assignment
    assert res.report.passed
    assert np.all(a.orient[a.vertices, 0] == 1)


def test_warm_start_never_worsens():
    model = build_model(build_graph(3), 3, TORQUE3)
    opt = solve_exhaustive(model)
    worse = _feasible_torque_assignment(model, [0, 5, 8], [0, 0, 0], [1, 1, -1])
    assert worse is not None and verify_assignment(model, worse).passed
    assert worse.lam > opt.objective + 1e-3
    for warm in (worse, opt.assignment):
        res = solve_branch_and_bound(model, warm_start=warm)
        assert res.objective <= warm.lam + 1e-12
        assert abs(res.objective - opt.objective) <= 1e-6


@settings(max_examples=20, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(0.0, 2.0))
def test_wake_monotone_in_radius(r, extra):
    g = build_graph(2)
    Xc = g.canonical_positions()
    D = orientation_directions()
    small, big = WakeParams(radius=r), WakeParams(radius=r + extra)
    for x, y in itertools.permutations(range(g.n_vertices), 2):
        for eta in D:
            if wake_predicate(Xc[x], Xc[y], eta, small):
                assert wake_predicate(Xc[x], Xc[y], eta, big)


def test_wake_rows_grow_with_radius():
    counts = [build_model(build_graph(2), 2, ObjectiveSpec("structural_bound", wake=WakeParams(radius=r))).meta["wake_pairs"] for r in (0.5, 1.0, 1.5)]
    assert counts == sorted(counts) and counts[0] < counts[-1]


def test_translation_changes_offset_only():
    model = build_model(build_graph(4), 2, TORQUE2, ModelFlags(anchor=False))
    g = model.graph
    base = [0, g.index((0, -1, 1))]
    a = _feasible_torque_assignment(model, base, [0, 0], [1, 1])
    shift = (0, 1, 0)
    moved_verts = [g.index(tuple(np.add(g.vertices[v], shift))) for v in base]
    b = placement_assignment(model, moved_verts, [0, 0], [1, 1])
    b.lam = a.lam
    b.C = np.zeros_like(a.C)
    b.C[moved_verts] = a.C[base]
    assert verify_assignment(model, a).passed and verify_assignment(model, b).passed
    assert not np.allclose(a.z, b.z)
    assert np.allclose(a.z - b.z, model.meta["positions"][g.index(shift)] - model.meta["positions"][0])
    assert max(model.tag_residuals(lift_assignment(model, b)).values()) < 1e-8


def test_export_round_trip(tmp_path):
    model = build_model(build_graph(1), 1, ObjectiveSpec("torque_authority"))
    text = model_to_text(model)
    assert model_to_text(model_from_text(text)) == text
    counts = export_model(model, tmp_path / "m.txt")
    back = read_model(tmp_path / "m.txt")
    assert back.counts() == counts == model.counts()
    assert counts == {"variables": 172, "binaries": 24, "rows": 617, "cones": 1}


def test_export_residuals_match_model(tmp_path):
    model = build_model(build_graph(3), 3, TORQUE3)
    a = _feasible_torque_assignment(model, [0, 5, 8], [0, 0, 0], [1, -1, -1])
    a.C[0, 2] += 1e-3  # break the actuation rows on purpose
    x = lift_assignment(model, a)
    export_model(model, tmp_path / "m.txt")
    back = read_model(tmp_path / "m.txt")
    ours, theirs = model.tag_residuals(x), back.tag_residuals(x)
    assert ours.keys() == theirs.keys()
    assert all(abs(ours[k] - theirs[k]) <= 1e-12 * max(1.0, ours[k]) for k in ours)
    assert ours["actuation_thrust"] > 1e-3


def test_infeasible_sizes():
    with pytest.raises(InfeasibleSkeleton):
        build_model(build_graph(1), 2, STRUCT)
    model = build_model(build_graph(3), 3, TORQUE3)
    with pytest.raises(SearchTooLarge):
        solve_exhaustive(model, SearchLimits(max_leaves=10))


def test_objective_from_dict():
    n, spec = ObjectiveSpec.from_dict({"objective": "structural_bound", "n": 3, "wake": {"radius": 1.2}})
    assert n == 3 and spec.wake.resolved_radius == 1.2
    with pytest.raises(ValueError):
        ObjectiveSpec.from_dict({"objective": "fastest", "n": 3})
    with pytest.raises(ValueError):
        ObjectiveSpec.from_dict({"objective": "torque_authority", "n": 0})
    with pytest.raises(ValueError):
        ObjectiveSpec("torque_authority", u_hover=1.5, params=ModuleParams())
