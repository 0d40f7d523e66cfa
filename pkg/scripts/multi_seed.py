"""Repeat the double-integrator example over scenario seeds.

For each seed the design set is redrawn, truncated, buffered and solved,
then checked on all design scenarios and on fresh Monte Carlo samples. The
zero-buffer row is a negative control: same selection, buffers set to 0.

On the stock configuration every constraint stays slack even without
buffers; ``--noise-scale`` multiplies the disturbance variance so that the
buffers become active.

Usage: python scripts/multi_seed.py [--seeds 20] [--nhat 6 20] [--mc 10000] [--prune off]
                                    [--noise-scale 1.0]
"""
import argparse

import numpy as np

from scentrunc.config import demo_config
from scentrunc.optimization import BufferInfeasibleError, assemble_truncated_problem, solve
from scentrunc.scenarios import sample_scenarios
from scentrunc.system import stack_system
from scentrunc.truncation import build_truncation_mapping, certify, greedy_truncate, map_scenarios
from scentrunc.validation import deterministic_containment_check, monte_carlo_validate


def run(cfg, stacked, mapping, W, res, mc, seed):
    cons, x0 = cfg.constraint_spec(), cfg.x0_array()
    try:
        prob = assemble_truncated_problem(stacked, cons, cfg.cost_spec(), W[:, res.selected],
                                          (res.eps_cl, res.eps_ol, res.eps_u), x0,
                                          norm=cfg.norm, cost_scenarios=W)
    except BufferInfeasibleError:
        return "empty-buffered-set", np.nan, np.nan, np.nan
    pol = solve(prob)
    if not pol.ok:
        return pol.solver_status, np.nan, np.nan, np.nan
    ok, info = deterministic_containment_check(pol, stacked, cons, W, x0)
    rep = monte_carlo_validate(pol, stacked, cons, cfg.sampler_spec(), mc, x0,
                               seed + cfg.seeds.validation_offset)
    worst = max(info["max_state_residual"], info["max_input_residual"])
    return ("pass" if ok else "FAIL"), worst, rep.state_violation_rate, rep.input_violation_rate


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--nhat", type=int, nargs="+", default=[6, 20])
    ap.add_argument("--mc", type=int, default=10000)
    ap.add_argument("--prune", choices=("on", "off"), default="on")
    ap.add_argument("--noise-scale", type=float, default=1.0)
    args = ap.parse_args()

    cfg = demo_config()
    if args.noise_scale != 1.0:
        var = [v * args.noise_scale for v in cfg.sampler.variance]
        cfg = cfg.with_overrides(**{"sampler.variance": var})
    stacked = stack_system(cfg.linear_system())
    cons = cfg.constraint_spec()
    mapping = build_truncation_mapping(cons.fx_stage, cons.fu_stage, stacked,
                                       prune=args.prune == "on")
    N = cfg.samples.n_samples
    print("seed,nhat,buffers,containment,max_residual,state_rate,input_rate")
    for seed in range(args.seeds):
        W = sample_scenarios(cfg.sampler_spec(), N, stacked.dims.p, seed, nw=stacked.dims.nw).W
        cloud = map_scenarios(mapping, W)
        for nhat in args.nhat:
            base = greedy_truncate(cloud, max_points=nhat, partition=mapping.partition)
            zero = greedy_truncate(cloud, max_points=nhat, partition=mapping.partition)
            zero.eps_cl, zero.eps_u, zero.eps_ol = 0.0, 0.0, np.zeros_like(base.eps_ol)
            for name, res in (("coordinate", base), ("certified", certify(base, cloud)),
                              ("zero", zero)):
                status, worst, sx, su = run(cfg, stacked, mapping, W, res, args.mc, seed)
                print(f"{seed},{nhat},{name},{status},{worst:.4f},{sx:.4f},{su:.4f}", flush=True)


if __name__ == "__main__":
    main()
