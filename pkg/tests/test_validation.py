import json

import numpy as np
import pytest
from scipy.stats import norm

from scentrunc.optimization import (ConstraintSpec, ControllerPolicy, CostSpec,
                                    assemble_truncated_problem, solve)
from scentrunc.scenarios import SamplerSpec
from scentrunc.solvers import OPTIMAL
from scentrunc.system import LinearSystem, stack_system
from scentrunc.truncation import (build_truncation_mapping, certify, greedy_truncate,
                                  map_scenarios)
from scentrunc.validation import (ValidationReport, deterministic_containment_check,
                                  monte_carlo_validate, wilson_interval)

from test_optimization import small_instance


def random_design(seed, N=200):
    rng = np.random.default_rng(seed)
    p, nu, nw = int(rng.integers(2, 4)), int(rng.integers(1, 3)), int(rng.integers(1, 3))
    sysm, s, cons, W, x0 = small_instance(seed, p=p, nx=2, nu=nu, nw=nw, N=N, scale=0.2)
    cost = CostSpec(np.eye(2), 0.1 * np.eye(nu), None, "scenario-mean")
    m = build_truncation_mapping(cons.fx_stage, cons.fu_stage, s)
    return s, cons, W, x0, cost, map_scenarios(m, W), m


def solve_truncated(s, cons, W, x0, cost, res):
    prob = assemble_truncated_problem(s, cons, cost, W[:, res.selected],
                                      (res.eps_cl, res.eps_ol, res.eps_u), x0, cost_scenarios=W)
    return solve(prob)


def test_full_selection_passes():
    s, cons, W, x0, cost, cloud, m = random_design(1, N=30)
    res = greedy_truncate(cloud, max_points=30, partition=m.partition)
    res.selected = list(range(30))
    pol = solve_truncated(s, cons, W, x0, cost, res)
    assert pol.ok
    ok, info = deterministic_containment_check(pol, s, cons, W, x0)
    assert ok and info["n_scenarios"] == 30


@pytest.mark.parametrize("seed", range(40))
def test_certified_buffers_give_containment(seed):
    # every design scenario is within the certified distance of the hull of the selected
    # ones, so feasibility on the selection transfers to the whole set
    s, cons, W, x0, cost, cloud, m = random_design(seed)
    for nhat in (3, 8):
        res = certify(greedy_truncate(cloud, max_points=nhat, partition=m.partition), cloud)
        try:
            pol = solve_truncated(s, cons, W, x0, cost, res)
        except ValueError:  # buffer above 1: empty set, nothing to check
            continue
        if pol.ok:
            ok, info = deterministic_containment_check(pol, s, cons, W, x0)
            assert ok, info


def test_coordinate_buffers_can_miss_hull_points():
    # documented counterexample: the selection attains every coordinate extreme (d_H = 0),
    # yet a scenario outside the hull of the selection violates a state constraint
    s, cons, W, x0, cost, cloud, m = random_design(27)
    res = greedy_truncate(cloud, max_points=8, partition=m.partition)
    assert res.d_H == 0.0
    pol = solve_truncated(s, cons, W, x0, cost, res)
    assert pol.ok
    ok, info = deterministic_containment_check(pol, s, cons, W, x0)
    assert not ok and info["max_state_residual"] > 0.3
    cert = certify(res, cloud)
    assert cert.certified_distance > 0.0
    pol2 = solve_truncated(s, cons, W, x0, cost, cert)
    assert pol2.ok
    assert deterministic_containment_check(pol2, s, cons, W, x0)[0]


def test_pass_flag_matches_residuals():
    s, cons, W, x0, cost, cloud, m = random_design(3)
    res = certify(greedy_truncate(cloud, max_points=5, partition=m.partition), cloud)
    pol = solve_truncated(s, cons, W, x0, cost, res)
    for tol in (1e-6, 1.0):
        ok, info = deterministic_containment_check(pol, s, cons, W, x0, tol=tol)
        assert ok == (max(info["max_state_residual"], info["max_input_residual"]) <= tol)
    bad = ControllerPolicy(None, None, None, None, "infeasible")
    with pytest.raises(ValueError):
        deterministic_containment_check(bad, s, cons, W, x0)


def one_step_policy(v):
    sysm = LinearSystem(np.zeros((1, 1)), np.ones((1, 1)), np.ones((1, 1)), 1)
    cons = ConstraintSpec(np.ones((1, 1)), np.array([[0.1]]))
    pol = ControllerPolicy(np.zeros((1, 1)), np.array([v]), np.zeros(1), 0.0, OPTIMAL)
    return stack_system(sysm), cons, pol


def test_zero_covariance_rates():
    s, cons, pol = one_step_policy(0.5)
    rep = monte_carlo_validate(pol, s, cons, SamplerSpec("gaussian-diagonal", variance=(0.0,)),
                               500, np.zeros(1), 0)
    assert rep.state_violation_rate == 0.0 and rep.input_violation_rate == 0.0
    assert rep.per_time_violation == [0.0]
    rep1 = monte_carlo_validate(pol, s, cons, SamplerSpec("gaussian-diagonal", variance=(1.0,)),
                                1, np.zeros(1), 3)
    assert rep1.state_violation_rate in (0.0, 1.0)
    with pytest.raises(ValueError):
        monte_carlo_validate(pol, s, cons, SamplerSpec("gaussian-diagonal", variance=(1.0,)),
                             0, np.zeros(1), 0)


def test_rate_estimator_coverage():
    # x_1 = 0.5 + w with w ~ N(0, 0.25): violation probability 1 - Phi(1)
    s, cons, pol = one_step_policy(0.5)
    q = 1.0 - norm.cdf(1.0)
    spec = SamplerSpec("gaussian-diagonal", variance=(0.25,))
    covered, rates = 0, []
    for seed in range(60):
        rep = monte_carlo_validate(pol, s, cons, spec, 2000, np.zeros(1), seed)
        lo, hi = rep.state_wilson
        assert lo <= rep.state_violation_rate <= hi
        covered += lo <= q <= hi
        rates.append(rep.state_violation_rate)
    assert covered >= 51  # 95% nominal; P(fewer than 52 of 60) < 1%
    assert abs(np.mean(rates) - q) < 4 * np.sqrt(q * (1 - q) / (60 * 2000))


def test_wilson_interval():
    lo, hi = wilson_interval(0, 10000)
    assert lo == 0.0 and 3e-4 < hi < 4e-4
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi and hi - 0.5 == pytest.approx(0.5 - lo)


def test_buffer_enlargement_probe(demo):
    # scaling buffers up (and re-solving) does not raise the worst design residual
    m, cloud = demo.mapping(prune=True)
    res = greedy_truncate(cloud, max_points=6, partition=m.partition)
    last = np.inf
    for f in (1.0, 1.5, 2.0):
        prob = assemble_truncated_problem(demo.stacked, demo.constraints, demo.cfg.cost_spec(),
                                          demo.scenarios.subset(res.selected),
                                          (f * res.eps_cl, f * res.eps_ol, f * res.eps_u),
                                          demo.x0, cost_scenarios=demo.scenarios)
        pol = solve(prob)
        assert pol.ok
        _, info = deterministic_containment_check(pol, demo.stacked, demo.constraints,
                                                  demo.scenarios, demo.x0)
        worst = max(info["max_state_residual"], info["max_input_residual"])
        assert worst <= last + 1e-7
        last = worst


def test_report_io(tmp_path):
    s, cons, pol = one_step_policy(0.5)
    rep = monte_carlo_validate(pol, s, cons, SamplerSpec("gaussian-diagonal", variance=(0.25,)),
                               100, np.zeros(1), 0, deterministic=(True, {
                                   "max_state_residual": -0.5, "max_input_residual": -0.9,
                                   "tol": 1e-6}))
    assert isinstance(rep, ValidationReport) and rep.deterministic_pass
    rep.save(tmp_path / "v.json")
    data = json.loads((tmp_path / "v.json").read_text())
    assert data["mc_samples"] == 100 and len(data["state_wilson"]) == 2
    rep.save_per_time(tmp_path / "v.csv", comment="seed=0")
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[1] == "t,any_violation,state_violation,input_violation"
    assert len(lines) == 3
