import numpy as np
import pytest
import scipy.io

from scentrunc.optimization import (BufferInfeasibleError, ConstraintSpec, ControllerPolicy,
                                    CostSpec, apply_policy, assemble_openloop_problem,
                                    assemble_scenario_problem, assemble_truncated_problem, kappa,
                                    norm_coupling_residual, solve)
from scentrunc.solvers import INFEASIBLE, OPTIMAL
from scentrunc.system import DimensionError, LinearSystem, stack_system
from scentrunc.truncation import greedy_truncate


def small_instance(seed, p=2, nx=2, nu=1, nw=1, N=10, scale=0.3):
    rng = np.random.default_rng(seed)
    sysm = LinearSystem(np.eye(nx) + 0.2 * rng.normal(size=(nx, nx)), rng.normal(size=(nx, nu)),
                        rng.normal(size=(nx, nw)), p)
    cons = ConstraintSpec(rng.normal(size=(3, nx)), np.vstack([np.eye(nu), -np.eye(nu)]) * 0.5)
    W = scale * rng.normal(size=(p * nw, N))
    x0 = 0.3 * rng.normal(size=nx)
    return sysm, stack_system(sysm), cons, W, x0


def rollout_cost(sysm, cost, x0, K, V, W):
    """Mean stage cost over the columns of W by explicit simulation."""
    p, nu, nw = sysm.p, sysm.nu, sysm.nw
    ref = np.zeros(p * sysm.nx) if cost.reference is None else np.tile(cost.reference, p)
    total = 0.0
    for i in range(W.shape[1]):
        x = x0.copy()
        w = W[:, i]
        u_all = K @ w + V
        for t in range(p):
            u = u_all[t * nu:(t + 1) * nu]
            x = sysm.step(x, u, w[t * nw:(t + 1) * nw])
            e = x - ref[t * sysm.nx:(t + 1) * sysm.nx]
            total += e @ cost.Q @ e + u @ cost.R @ u
    return total / W.shape[1]


def random_theta(problem, rng):
    L = problem.layout
    x = rng.normal(size=problem.n_vars)
    return x, L.gain_matrix(x[L.k]), x[L.v]


@pytest.mark.parametrize("mode", ["nominal", "scenario-mean", "design-mean"])
def test_expected_cost_matches_rollout_average(mode):
    sysm, s, cons, W, x0 = small_instance(0, p=3, nx=2, nu=2, nw=2, N=15)
    rng = np.random.default_rng(1)
    Q = np.diag([1.0, 2.0])
    cost = CostSpec(Q, 0.3 * np.eye(2), np.array([0.2, -0.1]), mode)
    design = rng.normal(size=(6, 40))
    prob = assemble_truncated_problem(s, cons, cost, W, (0.0, 0.0, 0.0), x0,
                                      cost_scenarios=design)
    avg_over = {"nominal": np.zeros((6, 1)), "scenario-mean": W, "design-mean": design}[mode]
    for _ in range(5):
        x, K, V = random_theta(prob, rng)
        assert prob.objective(x) == pytest.approx(rollout_cost(sysm, cost, x0, K, V, avg_over),
                                                  rel=1e-10, abs=1e-10)


def test_design_mean_needs_scenarios():
    _, s, cons, W, x0 = small_instance(0)
    with pytest.raises(ValueError):
        assemble_truncated_problem(s, cons, CostSpec(np.eye(2), np.eye(1), None, "design-mean"),
                                   W, (0, 0, 0), x0)


def test_constraint_rows_match_direct_evaluation():
    # every assembled row is the affine map theta -> F X(theta, W) + buffers; no products
    sysm, s, cons, W, x0 = small_instance(2, p=3, nx=2, nu=2, nw=1, N=4)
    eps_ol = np.linspace(0.01, 0.05, 9)
    prob = assemble_truncated_problem(s, cons, CostSpec(np.eye(2), np.eye(2)), W,
                                      (0.05, eps_ol, 0.02), x0)
    Fx, Fu = cons.stacked(3)
    rng = np.random.default_rng(0)
    L = prob.layout
    for _ in range(5):
        x, K, V = random_theta(prob, rng)
        zeta = x[L.zeta]
        lhs = prob.G @ x - prob.h
        rx, ru = 3 * cons.n_cx, 3 * cons.n_cu
        for i in range(W.shape[1]):
            U = K @ W[:, i] + V
            X = s.propagate(x0, U, W[:, i])
            want_x = Fx @ X - 1 + 0.05 * np.repeat(zeta, 3) + eps_ol
            want_u = Fu @ U - 1 + 0.02 * np.repeat(zeta, cons.n_cu)
            off = i * rx
            np.testing.assert_allclose(lhs[off:off + rx], want_x, atol=1e-12)
            off = W.shape[1] * rx + i * ru
            np.testing.assert_allclose(lhs[off:off + ru], want_u, atol=1e-12)
        # second difference along a random direction vanishes
        d = rng.normal(size=x.size)
        second = (prob.G @ (x + 2 * d)) - 2 * (prob.G @ (x + d)) + prob.G @ x
        assert np.abs(second).max() < 1e-9


def test_scenario_and_truncated_equivalence():
    _, s, cons, W, x0 = small_instance(3)
    cost = CostSpec(np.eye(2), 0.1 * np.eye(1), None, "scenario-mean")
    p2 = solve(assemble_scenario_problem(s, cons, cost, W, x0))
    p4 = solve(assemble_truncated_problem(s, cons, cost, W, (0.0, 0.0, 0.0), x0))
    assert p2.ok and p4.ok
    assert p4.objective_value == pytest.approx(p2.objective_value, rel=1e-6)


def test_openloop_matches_zero_gain():
    _, s, cons, W, x0 = small_instance(4, p=3)
    cost = CostSpec(np.eye(2), np.eye(1))
    n_gain = 3  # p(p-1)/2 * nu * nw
    zero_gain = (np.vstack([np.eye(n_gain), -np.eye(n_gain)]), np.zeros(2 * n_gain))
    eps = np.full(9, 0.1)
    p3 = solve(assemble_openloop_problem(s, cons, cost, W, eps, x0))
    p4 = solve(assemble_truncated_problem(s, cons, cost, W, (0.0, eps, 0.0), x0,
                                          gain_constraint=zero_gain))
    assert p3.ok and p4.ok
    assert np.abs(p4.K).max() < 1e-7
    assert p4.objective_value == pytest.approx(p3.objective_value, rel=1e-6)
    np.testing.assert_allclose(p4.V, p3.V, atol=1e-5)


def test_buffer_exceeding_one_is_reported():
    _, s, cons, W, x0 = small_instance(0)
    eps = np.zeros(6)
    eps[4] = 1.2
    with pytest.raises(BufferInfeasibleError) as info:
        assemble_openloop_problem(s, cons, CostSpec(np.eye(2), np.eye(1)), W, eps, x0)
    assert (info.value.time, info.value.row) == (2, 1)
    with pytest.raises(BufferInfeasibleError):
        assemble_truncated_problem(s, cons, CostSpec(np.eye(2), np.eye(1)), W, (0, eps, 0), x0)
    with pytest.raises(ValueError):
        assemble_truncated_problem(s, cons, CostSpec(np.eye(2), np.eye(1)), W, (-0.1, 0, 0), x0)


def test_buffer_nesting():
    # feasible under larger buffers => feasible under smaller ones
    _, s, cons, W, x0 = small_instance(1, p=3)
    cost = CostSpec(np.eye(2), np.eye(1))
    small = assemble_truncated_problem(s, cons, cost, W, (0.02, 0.05, 0.01), x0)
    large = assemble_truncated_problem(s, cons, cost, W, (0.05, 0.1, 0.03), x0)
    rng = np.random.default_rng(0)
    hits = 0
    for _ in range(4000):
        x = rng.normal(scale=0.3, size=small.n_vars)
        L = small.layout
        x[L.zeta] = np.abs(x[L.zeta])
        if np.all(large.G @ x <= large.h):
            hits += 1
            assert np.all(small.G @ x <= small.h)
    ps, pl = solve(small), solve(large)
    assert ps.ok and pl.ok
    assert pl.objective_value >= ps.objective_value - 1e-7
    assert hits > 0


@pytest.mark.parametrize("norm", ["one", "two"])
def test_solution_structure_and_coupling(demo, norm):
    m, cloud = demo.mapping(prune=True)
    r = greedy_truncate(cloud, max_points=6, partition=m.partition)
    cost = demo.cfg.cost_spec()
    prob = assemble_truncated_problem(demo.stacked, demo.constraints, cost,
                                      demo.scenarios.subset(r.selected),
                                      (r.eps_cl, r.eps_ol, r.eps_u), demo.x0, norm=norm,
                                      cost_scenarios=demo.scenarios)
    pol = solve(prob)
    assert pol.ok
    # structurally zero blocks are exactly zero
    for i in range(5):
        assert not pol.K[2 * i:2 * i + 2, 4 * i:].any()
    assert norm_coupling_residual(pol, 2, 4, norm) <= 1e-6
    assert pol.info["max_constraint_residual"] <= 1e-6
    assert np.all(pol.zeta >= -1e-9)


def test_demo_row_count(demo):
    sel = demo.scenarios.subset(range(20))
    prob = assemble_truncated_problem(demo.stacked, demo.constraints, demo.cfg.cost_spec(), sel,
                                      (0.1, 0.1, 0.01), demo.x0, cost_scenarios=demo.scenarios)
    assert prob.n_scenario_rows == 20 * 5 * (5 + 4)
    # scenario rows, zeta >= 0, two abs-value blocks over 80 gains, 5 norm rows
    assert prob.G.shape[0] == 900 + 5 + 160 + 5
    full = assemble_scenario_problem(demo.stacked, demo.constraints, demo.cfg.cost_spec(),
                                     demo.scenarios, demo.x0, cost_scenarios=demo.scenarios)
    assert full.n_scenario_rows == 5564 * 45


def test_horizon_one_has_no_feedback():
    sysm = LinearSystem(np.eye(2), np.array([[1.0], [0.5]]), np.eye(2), 1)
    s = stack_system(sysm)
    cons = ConstraintSpec(np.eye(2), np.array([[1.0], [-1.0]]))
    prob = assemble_truncated_problem(s, cons, CostSpec(np.eye(2), np.eye(1)),
                                      np.zeros((2, 1)), (0.3, 0.2, 0.4), np.zeros(2))
    assert prob.layout.n_gain == 0
    pol = solve(prob)
    assert pol.ok and pol.K.shape == (1, 2) and not pol.K.any()


def test_interior_solution_is_least_squares():
    sysm, s, _, _, x0 = small_instance(6, p=4, nu=1)
    loose = ConstraintSpec(1e-6 * np.ones((1, 2)), 1e-6 * np.ones((1, 1)))
    ref = np.array([0.5, -0.2])
    cost = CostSpec(np.diag([1.0, 3.0]), 0.2 * np.eye(1), ref)
    pol = solve(assemble_scenario_problem(s, loose, cost, np.zeros((4, 1)), x0))
    Qb, Rb = np.kron(np.eye(4), cost.Q), np.kron(np.eye(4), cost.R)
    r = np.tile(ref, 4)
    V = -np.linalg.solve(s.Gu.T @ Qb @ s.Gu + Rb, s.Gu.T @ Qb @ (s.Gx @ x0 - r))
    np.testing.assert_allclose(pol.V, V, atol=1e-6)


def test_infeasible_instance():
    # second state is uncontrolled and starts far outside its bound
    sysm = LinearSystem(np.eye(2), np.array([[1.0], [0.0]]), np.eye(2), 2)
    cons = ConstraintSpec(np.array([[0.0, 1.0]]), np.array([[1.0]]))
    pol = solve(assemble_scenario_problem(stack_system(sysm), cons,
                                          CostSpec(np.eye(2), np.eye(1)), np.zeros((4, 1)),
                                          np.array([0.0, 5.0])))
    assert pol.solver_status == INFEASIBLE
    assert pol.K is None and not pol.ok


def test_kappa_blocks():
    p, nu, nw = 4, 2, 3
    K = np.arange(p * nu * p * nw, dtype=float).reshape(p * nu, p * nw)
    assert kappa(K, 1, nu, nw).size == 0
    np.testing.assert_array_equal(kappa(K, 2, nu, nw), K[2:4, 0:3].ravel())
    k3 = kappa(K, 3, nu, nw)
    np.testing.assert_array_equal(k3, np.concatenate([K[2:4, 0:3].ravel(), K[4:6, 0:3].ravel(),
                                                      K[4:6, 3:6].ravel()]))
    with pytest.raises(ValueError):
        kappa(K, 0, nu, nw)
    with pytest.raises(ValueError):
        kappa(K, 5, nu, nw)


def test_apply_policy(demo):
    rng = np.random.default_rng(0)
    K = rng.normal(size=(10, 20))
    for i in range(5):
        K[2 * i:2 * i + 2, 4 * i:] = 0.0
    V = rng.normal(size=10)
    pol = ControllerPolicy(K, V, np.zeros(5), 0.0, OPTIMAL)
    U, X = apply_policy(pol, demo.stacked, demo.x0, np.zeros(20))
    np.testing.assert_array_equal(U, V)
    W = rng.normal(size=20)
    U, X = apply_policy(pol, demo.stacked, demo.x0, W)
    W2 = W.copy()
    W2[16:] += 1.0
    U2, _ = apply_policy(pol, demo.stacked, demo.x0, W2)
    np.testing.assert_array_equal(U, U2)
    # recursive simulation with u_t = sum_{j<t} K_tj w_j + v_t
    x = demo.x0.copy()
    for t in range(5):
        u = V[2 * t:2 * t + 2] + sum(K[2 * t:2 * t + 2, 4 * j:4 * j + 4] @ W[4 * j:4 * j + 4]
                                     for j in range(t))
        x = demo.system.step(x, u, W[4 * t:4 * t + 4])
        np.testing.assert_allclose(X[4 * t:4 * t + 4], x, atol=1e-12)
    with pytest.raises(DimensionError):
        apply_policy(pol, demo.stacked, demo.x0, np.zeros(19))


def test_export_and_policy_roundtrip(tmp_path):
    _, s, cons, W, x0 = small_instance(0)
    prob = assemble_truncated_problem(s, cons, CostSpec(np.eye(2), np.eye(1)), W, (0, 0, 0), x0)
    prob.export(tmp_path / "prob")
    G = scipy.io.mmread(tmp_path / "prob" / "G.mtx")
    np.testing.assert_array_equal(G.toarray(), prob.G.toarray())
    h = scipy.io.mmread(tmp_path / "prob" / "h.mtx")
    np.testing.assert_array_equal(np.asarray(h).ravel(), prob.h)
    pol = solve(prob)
    pol.provenance = {"seed": 1}
    pol.save(tmp_path / "p.json")
    back = ControllerPolicy.load(tmp_path / "p.json")
    np.testing.assert_array_equal(back.K, pol.K)
    assert back.provenance == {"seed": 1} and back.ok


def test_cost_and_constraint_validation():
    with pytest.raises(ValueError):
        CostSpec(np.array([[1.0, 2.0], [0.0, 1.0]]), np.eye(1))
    with pytest.raises(ValueError):
        CostSpec(-np.eye(2), np.eye(1))
    with pytest.raises(ValueError):
        CostSpec(np.eye(2), np.eye(1), None, "median")
    _, s, cons, W, x0 = small_instance(0)
    with pytest.raises(DimensionError):
        assemble_scenario_problem(s, cons, CostSpec(np.eye(2), np.eye(1)), W, np.zeros(3))
    with pytest.raises(DimensionError):
        assemble_scenario_problem(s, cons, CostSpec(np.eye(2), np.eye(1)), W[:1], x0)
