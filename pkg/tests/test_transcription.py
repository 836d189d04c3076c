import json

import numpy as np
import pytest

from ascentry.lgr import lgr_rule
from ascentry.transcription import (Accumulator, BoundaryConstraint,
                                    EvaluationError, IntegralTerm, Linkage,
                                    MeshPhase, MultiPhaseProblem, PathConstraint,
                                    PhaseDef, transcribe, uniform_mesh)


def _double_integrator(tf_lo=2.0, tf_hi=2.0, **kw):
    """x'' = u on t in [0, tf]."""
    return PhaseDef(
        "cart", 2, 1,
        lambda X, U: np.column_stack([X[:, 1], U[:, 0]]),
        x_lo=[-50.0, -50.0], x_hi=[50.0, 50.0],
        u_lo=[-10.0], u_hi=[10.0],
        t0_lo=0.0, t0_hi=0.0, tf_lo=tf_lo, tf_hi=tf_hi, **kw)


def test_mesh_validation():
    with pytest.raises(ValueError):
        MeshPhase([0.5, 0.6], [3, 3])        # fractions exceed 1
    with pytest.raises(ValueError):
        MeshPhase([0.5, 0.5], [3])           # length mismatch
    with pytest.raises(ValueError):
        MeshPhase([1.0], [0])                # degree < 1
    m = uniform_mesh(4, 3)
    assert m.n_intervals == 4 and m.n_coll == 12


def test_phase_bound_dimension_check():
    with pytest.raises(ValueError):
        PhaseDef("bad", 2, 1, lambda X, U: X,
                 x_lo=[0.0], x_hi=[1.0], u_lo=[0.0], u_hi=[1.0],
                 t0_lo=0.0, t0_hi=0.0, tf_lo=1.0, tf_hi=1.0)


def test_problem_rejects_unknown_accumulator():
    ph = _double_integrator(
        integrands=[IntegralTerm("missing", lambda X, U: U[:, 0])])
    with pytest.raises(ValueError):
        MultiPhaseProblem([ph])


def test_problem_rejects_dangling_linkage():
    ph = _double_integrator()
    link = Linkage("next", 0, 3, lambda xa, ta, xb, tb: xa - xb,
                   np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        MultiPhaseProblem([ph], linkages=[link])


def test_variable_layout_counts():
    mesh = MeshPhase([0.25, 0.75], [3, 4])
    nlp = transcribe(MultiPhaseProblem([_double_integrator()]), [mesh])
    nn, nc = mesh.n_coll + 1, mesh.n_coll
    assert nlp.n_var == nn * 2 + nc * 1 + 2
    assert len(nlp.var_names) == nlp.n_var
    assert nlp.var_names[0] == "p0:cart:x:x0:n0"
    assert nlp.var_names[-1] == "p0:cart:tf"
    # defect rows: one per collocation node per state channel
    assert nlp.n_con == nc * 2
    assert len(set(nlp.var_names)) == nlp.n_var
    assert len(set(nlp.con_names)) == nlp.n_con


def test_node_taus_cover_unit_interval():
    mesh = MeshPhase([0.3, 0.3, 0.4], [2, 5, 3])
    nlp = transcribe(MultiPhaseProblem([_double_integrator()]), [mesh])
    coll, state = nlp.node_taus(0)
    assert len(coll) == mesh.n_coll
    assert len(state) == mesh.n_coll + 1
    assert np.all(np.diff(state) > 0)
    assert coll[0] >= 0.0 and coll[-1] < 1.0 and state[-1] == 1.0


@pytest.mark.parametrize("degree,nseg", [(3, 1), (3, 2), (5, 3), (8, 1)])
def test_defects_vanish_on_representable_polynomial(degree, nseg):
    # x(t) cubic, u = x'; degrees >= 3 must collocate it exactly
    tf = 2.0
    mesh = uniform_mesh(nseg, degree)
    nlp = transcribe(MultiPhaseProblem([_double_integrator()]), [mesh])
    poly = np.polynomial.Polynomial([0.3, -1.0, 0.8, -0.25])
    dpoly = poly.deriv()
    ddpoly = dpoly.deriv()
    coll, state = nlp.node_taus(0)
    X = np.column_stack([poly(state * tf), dpoly(state * tf)])
    U = ddpoly(coll * tf)[:, None]
    z = nlp.pack([X], [U], [(0.0, tf)])
    c = nlp.constraints(z)
    assert np.max(np.abs(c)) < 1e-12


def test_defects_nonzero_for_unrepresentable_curve():
    mesh = uniform_mesh(1, 3)
    nlp = transcribe(MultiPhaseProblem([_double_integrator()]), [mesh])
    tf = 2.0
    coll, state = nlp.node_taus(0)
    X = np.column_stack([np.sin(3.0 * state * tf),
                         3.0 * np.cos(3.0 * state * tf)])
    U = (-9.0 * np.sin(3.0 * coll * tf))[:, None]
    c = nlp.constraints(nlp.pack([X], [U], [(0.0, tf)]))
    assert np.max(np.abs(c)) > 1e-3


def test_objective_quadrature_exact_for_low_degree():
    # n-point Radau integrates degree 2n-2; u^2 with u linear is degree 2
    tf = 3.0
    mesh = uniform_mesh(2, 2)
    ph = _double_integrator(tf_lo=tf, tf_hi=tf,
                            cost=lambda X, U: U[:, 0] ** 2)
    nlp = transcribe(MultiPhaseProblem([ph]), [mesh])
    coll, state = nlp.node_taus(0)
    U = (2.0 * coll * tf - 1.0)[:, None]
    z = nlp.pack([np.zeros((len(state), 2))], [U], [(0.0, tf)])
    # integral of (2t-1)^2 over [0, 3]
    exact = ((2 * tf - 1.0) ** 3 + 1.0) / 6.0
    assert nlp.objective(z) == pytest.approx(exact, rel=1e-13)


def test_accumulator_balance_row():
    tf = 2.0
    mesh = uniform_mesh(3, 4)
    ph = _double_integrator(
        integrands=[IntegralTerm("effort", lambda X, U: U[:, 0] ** 2)])
    prob = MultiPhaseProblem([ph], accumulators=[Accumulator("effort",
                                                             0.0, 100.0)])
    nlp = transcribe(prob, [mesh])
    coll, state = nlp.node_taus(0)
    U = (coll * tf)[:, None]
    exact = tf ** 3 / 3.0
    z = nlp.pack([np.zeros((len(state), 2))], [U], [(0.0, tf)],
                 accumulators={"effort": exact})
    row = nlp.con_names.index("acc:effort:balance")
    assert abs(nlp.constraints(z)[row]) < 1e-12
    z[nlp.acc_idx["effort"]] = exact + 0.5
    assert nlp.constraints(z)[row] == pytest.approx(0.5, rel=1e-10)


def test_path_rows_evaluate_at_collocation_nodes():
    mesh = uniform_mesh(2, 3)
    ph = _double_integrator(
        path=[PathConstraint("speed", lambda X, U: X[:, 1], -1.0, 1.0)])
    nlp = transcribe(MultiPhaseProblem([ph]), [mesh])
    coll, state = nlp.node_taus(0)
    X = np.column_stack([state, np.sin(state)])
    U = np.zeros((len(coll), 1))
    c = nlp.constraints(nlp.pack([X], [U], [(0.0, 1.0)]))
    rows = [i for i, n in enumerate(nlp.con_names) if ":path:speed:" in n]
    assert len(rows) == mesh.n_coll
    assert np.allclose(c[rows], np.sin(state[:-1]), rtol=1e-14)
    lo = nlp.c_lo[rows]
    hi = nlp.c_hi[rows]
    assert np.all(lo == -1.0) and np.all(hi == 1.0)


def test_min_duration_row_only_when_time_free():
    fixed = transcribe(MultiPhaseProblem(
        [_double_integrator(min_duration=0.5)]), [uniform_mesh(1, 2)])
    assert not any("duration" in n for n in fixed.con_names)
    free = transcribe(MultiPhaseProblem(
        [_double_integrator(tf_lo=1.0, tf_hi=4.0, min_duration=0.5)]),
        [uniform_mesh(1, 2)])
    k = free.con_names.index("p0:cart:duration")
    z = free.pack([np.zeros((3, 2))], [np.zeros((2, 1))], [(0.0, 2.5)])
    assert free.constraints(z)[k] == pytest.approx(2.5)
    assert free.c_lo[k] == 0.5 and free.c_hi[k] == np.inf


def _two_phase_linked():
    ph0 = _double_integrator(tf_lo=1.0, tf_hi=3.0)
    ph1 = PhaseDef(
        "cart2", 2, 1,
        lambda X, U: np.column_stack([X[:, 1], U[:, 0]]),
        x_lo=[-50.0, -50.0], x_hi=[50.0, 50.0], u_lo=[-10.0], u_hi=[10.0],
        t0_lo=1.0, t0_hi=3.0, tf_lo=4.0, tf_hi=4.0)
    link = Linkage("handoff", 0, 1,
                   lambda xa, ta, xb, tb: np.concatenate([xb - xa, [tb - ta]]),
                   np.zeros(3), np.zeros(3))
    bc = BoundaryConstraint("start_at_rest", 0,
                            lambda x0, xf, t0, tf: x0, np.zeros(2), np.zeros(2))
    return MultiPhaseProblem([ph0, ph1], linkages=[link], boundaries=[bc])


def test_linkage_and_boundary_rows():
    nlp = transcribe(_two_phase_linked(), [uniform_mesh(1, 3),
                                           uniform_mesh(1, 3)])
    coll, state = nlp.node_taus(0)
    X0 = np.column_stack([state, np.zeros_like(state)])
    X1 = np.column_stack([state + X0[-1, 0], np.zeros_like(state)])
    X1[:, 0] = X0[-1, 0]
    U = np.zeros((len(coll), 1))
    z = nlp.pack([X0, X1], [U, U], [(0.0, 1.4), (1.4, 4.0)])
    c = nlp.constraints(z)
    names = nlp.con_names
    link_rows = [i for i, n in enumerate(names) if n.startswith("link:handoff")]
    assert len(link_rows) == 3
    assert np.allclose(c[link_rows], 0.0, atol=1e-14)
    bc_rows = [i for i, n in enumerate(names) if n.startswith("bc:start_at_rest")]
    assert np.allclose(c[bc_rows], X0[0], atol=1e-14)
    # a time gap between the phases shows up in the linkage's last row
    z2 = z.copy()
    z2[nlp.phase_layout[1].t0_idx] = 1.9
    assert nlp.constraints(z2)[link_rows[-1]] == pytest.approx(0.5)


def test_jacobian_exact_on_bilinear_problem():
    # affine dynamics and path make every constraint bilinear in z, so the
    # central differences underneath the jacobian are exact; compare against
    # a brute-force dense differencing of the constraint vector
    ph = _double_integrator(
        tf_lo=1.0, tf_hi=4.0,
        path=[PathConstraint("lane", lambda X, U: X[:, 0] + 0.3 * U[:, 0],
                             -5.0, 5.0)],
        integrands=[IntegralTerm("effort", lambda X, U: U[:, 0])])
    prob = MultiPhaseProblem(
        [ph], accumulators=[Accumulator("effort", -50.0, 50.0)],
        boundaries=[BoundaryConstraint(
            "ends", 0, lambda x0, xf, t0, tf: np.array([x0[0], xf[0] - 1.0]),
            np.zeros(2), np.zeros(2))])
    nlp = transcribe(prob, [MeshPhase([0.4, 0.6], [3, 2])])
    rng = np.random.default_rng(0)
    z = rng.uniform(-1.0, 1.0, nlp.n_var)
    z[nlp.phase_layout[0].t0_idx] = 0.0
    z[nlp.phase_layout[0].tf_idx] = 2.7
    J = nlp.jacobian(z).toarray()
    dense = np.zeros_like(J)
    h = 1e-6
    for j in range(nlp.n_var):
        zp, zm = z.copy(), z.copy()
        zp[j] += h
        zm[j] -= h
        dense[:, j] = (nlp.constraints(zp) - nlp.constraints(zm)) / (2.0 * h)
    assert np.allclose(J, dense, rtol=1e-6, atol=1e-7)


def test_jacobian_matches_declared_sparsity():
    nlp = transcribe(_two_phase_linked(), [uniform_mesh(2, 3),
                                           uniform_mesh(1, 4)])
    rng = np.random.default_rng(4)
    z = nlp.clip_to_bounds(rng.uniform(-1.0, 1.0, nlp.n_var))
    z[nlp.phase_layout[0].t0_idx] = 0.0
    z[nlp.phase_layout[0].tf_idx] = 2.0
    z[nlp.phase_layout[1].t0_idx] = 2.0
    z[nlp.phase_layout[1].tf_idx] = 4.0
    J = nlp.jacobian(z).tocoo()
    declared = set(zip(*nlp.sparsity()))
    actual = set(zip(J.row.tolist(), J.col.tolist()))
    assert actual <= declared


def test_objective_gradient_matches_fd():
    ph = _double_integrator(
        tf_lo=1.0, tf_hi=4.0,
        cost=lambda X, U: U[:, 0] ** 2 + 0.1 * X[:, 0] ** 2)
    nlp = transcribe(MultiPhaseProblem([ph]), [uniform_mesh(2, 3)])
    rng = np.random.default_rng(9)
    z = rng.uniform(-0.8, 0.8, nlp.n_var)
    z[nlp.phase_layout[0].t0_idx] = 0.0
    z[nlp.phase_layout[0].tf_idx] = 3.1
    g = nlp.objective_gradient(z)
    h = 1e-6
    fd = np.zeros_like(g)
    for j in range(nlp.n_var):
        zp, zm = z.copy(), z.copy()
        zp[j] += h
        zm[j] -= h
        fd[j] = (nlp.objective(zp) - nlp.objective(zm)) / (2.0 * h)
    assert np.allclose(g, fd, rtol=2e-5, atol=1e-7)


def test_solution_roundtrip_through_same_mesh():
    mesh = MeshPhase([0.35, 0.65], [4, 3])
    ph = _double_integrator(tf_lo=1.0, tf_hi=5.0)
    nlp = transcribe(MultiPhaseProblem([ph]), [mesh])
    coll, state = nlp.node_taus(0)
    X = np.column_stack([np.sin(state), np.cos(state)])
    U = np.tanh(coll)[:, None]
    z = nlp.pack([X], [U], [(0.0, 3.5)])
    sol = nlp.solution_from(z)
    z2 = nlp.z_from_solution(sol)
    assert np.allclose(z2, z, rtol=1e-11, atol=1e-12)


def test_solution_sampling_rejects_out_of_span():
    nlp = transcribe(MultiPhaseProblem([_double_integrator()]),
                     [uniform_mesh(1, 3)])
    z = nlp.pack([np.zeros((4, 2))], [np.zeros((3, 1))], [(0.0, 2.0)])
    sol = nlp.solution_from(z)
    with pytest.raises(ValueError):
        sol.phases[0].sample_states([2.5])


def test_nonfinite_callback_is_reported():
    def bad_dyn(X, U):
        out = np.column_stack([X[:, 1], U[:, 0]])
        out[0, 0] = np.nan
        return out

    ph = _double_integrator()
    ph.dynamics = bad_dyn
    nlp = transcribe(MultiPhaseProblem([ph]), [uniform_mesh(1, 3)])
    z = nlp.pack([np.zeros((4, 2))], [np.zeros((3, 1))], [(0.0, 2.0)])
    with pytest.raises(EvaluationError) as err:
        nlp.constraints(z)
    assert "def" in err.value.name


def test_dump_layout_deterministic(tmp_path):
    def build():
        return transcribe(_two_phase_linked(), [uniform_mesh(2, 3),
                                                uniform_mesh(1, 4)])

    a, b = tmp_path / "a.json", tmp_path / "b.json"
    build().dump_layout(a)
    build().dump_layout(b)
    assert a.read_text() == b.read_text()
    doc = json.loads(a.read_text())
    assert doc["n_var"] == build().n_var
    assert len(doc["sparsity"]["rows"]) == len(doc["sparsity"]["cols"])
