"""Command-line front end: sample, truncate, solve and validate.

Every stage reads its inputs from and writes its artifacts to one output
directory, so stages can be run one at a time or chained with ``pipeline``.

Artifacts
---------
``scenarios.scn`` / ``scenarios.csv``   design scenario set
``truncation.json`` / ``error_curve.csv``  selected scenarios, buffers, d_H curve
``policy.json``                          solved gains and nominal inputs
``nominal_trajectory.csv``               states and inputs for zero disturbance
``envelopes.csv``                        2-D hull vertices of the state clouds per step
``validation.json`` / ``violation_rates.csv``  containment check and Monte Carlo rates
"""
from __future__ import annotations

import argparse
import hashlib
import sys
import warnings
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from . import config as cfgmod
from .optimization import (BufferInfeasibleError, ControllerPolicy, apply_policy,
                           assemble_truncated_problem, solve)
from .scenarios import export_csv, load_scenarios, sample_scenarios, save_scenarios
from .system import stack_system
from .truncation import (TruncationResult, build_truncation_mapping, certify, greedy_truncate,
                         map_scenarios)
from .validation import deterministic_containment_check, monte_carlo_validate

SCENARIOS = "scenarios.scn"
SCENARIOS_CSV = "scenarios.csv"
TRUNCATION = "truncation.json"
CURVE = "error_curve.csv"
POLICY = "policy.json"
NOMINAL = "nominal_trajectory.csv"
ENVELOPES = "envelopes.csv"
VALIDATION = "validation.json"
RATES = "violation_rates.csv"


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it and ``cause`` holds the error."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")


@contextmanager
def stage(name):
    try:
        yield
    except (StageError, cfgmod.ConfigError):
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _provenance(cfg, **extra):
    out = {"config_hash": cfg.config_hash(), "scenario_seed": cfg.seeds.scenario,
           "validation_seed": cfg.seeds.validation}
    out.update(extra)
    return out


def _comment(prov):
    return " ".join(f"{k}={v}" for k, v in prov.items())


def _outdir(cfg):
    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _warn(msg):
    print(f"warning: {msg}", file=sys.stderr)


def _resolve_N(cfg, problem="truncated"):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        N, n_theta, from_formula = cfgmod.resolve_sample_count(cfg, problem)
    for w in caught:
        _warn(str(w.message))
    return N, n_theta, from_formula


# stages ---------------------------------------------------------------------

def run_generate(cfg, log=print):
    with stage("generate"):
        out = _outdir(cfg)
        N, _, _ = _resolve_N(cfg)
        nhat = cfg.truncation.nhat
        if nhat is not None and nhat > N:
            raise cfgmod.ConfigError(
                f"invalid configuration:\n  truncation.nhat: {nhat} exceeds N={N}")
        sysm = cfg.linear_system()
        prov = _provenance(cfg)
        sset = sample_scenarios(cfg.sampler_spec(), N, sysm.p, cfg.seeds.scenario, nw=sysm.nw,
                                delta=cfg.samples.delta, beta=cfg.samples.beta, provenance=prov)
        save_scenarios(out / SCENARIOS, sset)
        export_csv(out / SCENARIOS_CSV, sset, comment=_comment(prov))
        log(f"generate: {sset.N} scenarios of length {sset.W.shape[0]} -> {out / SCENARIOS}")
        return sset


def _load_design(cfg, out, stage_name):
    path = out / SCENARIOS
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run 'generate' first")
    sset = load_scenarios(path)
    if sset.provenance.get("config_hash") != cfg.config_hash():
        _warn(f"{stage_name}: {path} was generated from a different configuration")
    return sset


def run_truncate(cfg, log=print):
    with stage("truncate"):
        out = _outdir(cfg)
        sset = _load_design(cfg, out, "truncate")
        stacked = stack_system(cfg.linear_system())
        mapping = build_truncation_mapping(np.array(cfg.constraints.fx), np.array(cfg.constraints.fu),
                                           stacked, prune=cfg.truncation.prune)
        cloud = map_scenarios(mapping, sset)
        tr = cfg.truncation
        max_points = None if tr.nhat is None else min(tr.nhat, sset.N)
        res = greedy_truncate(cloud, max_points=max_points, target_eps=tr.target_eps,
                              partition=mapping.partition)
        if tr.buffers == "certified":
            res = certify(res, cloud)
        res.provenance = _provenance(cfg, scenarios_sha256=sha256_file(out / SCENARIOS),
                                     prune=tr.prune, nhat=tr.nhat, target_eps=tr.target_eps,
                                     buffers=tr.buffers)
        res.save(out / TRUNCATION)
        res.save_curve(out / CURVE, comment=_comment(res.provenance))
        log(f"truncate: nhat={res.nhat} d_H={res.d_H:.6g} eps_cl={res.eps_cl:.6g} "
            f"eps_u={res.eps_u:.6g} eps_ol_max={float(np.max(res.eps_ol)):.6g} "
            f"({res.buffer_mode} buffers)")
        return res


def _nominal_rows(policy, stacked, x0):
    d = stacked.dims
    U, X = apply_policy(policy, stacked, x0, np.zeros(d.p * d.nw))
    xs = np.concatenate([x0, X]).reshape(d.p + 1, d.nx)
    us = U.reshape(d.p, d.nu)
    header = ["t"] + [f"x{i}" for i in range(d.nx)] + [f"u{j}" for j in range(d.nu)]
    rows = []
    for t in range(d.p + 1):
        u = [repr(float(v)) for v in us[t]] if t < d.p else [""] * d.nu
        rows.append([str(t)] + [repr(float(v)) for v in xs[t]] + u)
    return header, rows


def _hull_2d(pts):
    pts = np.unique(np.round(pts, 15), axis=0)
    if pts.shape[0] < 3:
        return pts
    try:
        return pts[ConvexHull(pts).vertices]
    except QhullError:  # collinear cloud: keep the two extremes
        direction = pts[-1] - pts[0]
        proj = pts @ direction
        return pts[[int(np.argmin(proj)), int(np.argmax(proj))]]


def envelope_rows(policy, stacked, x0, W_full, selected, coords):
    """Hull vertices of the full and selected state clouds, per step, in ``coords``."""
    d = stacked.dims
    _, X = apply_policy(policy, stacked, x0, W_full)
    X = X.reshape(d.p, d.nx, -1)
    i, j = coords
    rows = []
    for name, cols in (("full", slice(None)), ("selected", np.asarray(selected, dtype=int))):
        rows.append([name, "0", "0", repr(float(x0[i])), repr(float(x0[j]))])
        for t in range(d.p):
            pts = np.stack([X[t, i, cols], X[t, j, cols]], axis=1)
            for k, (a, b) in enumerate(_hull_2d(pts)):
                rows.append([name, str(t + 1), str(k), repr(float(a)), repr(float(b))])
    return ["set", "t", "vertex", f"x{i}", f"x{j}"], rows


def _write_csv(path, header, rows, comment=None):
    lines = [f"# {comment}"] if comment else []
    lines.append(",".join(header))
    lines.extend(",".join(r) for r in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def run_solve(cfg, log=print):
    with stage("solve"):
        out = _outdir(cfg)
        sset = _load_design(cfg, out, "solve")
        tpath = out / TRUNCATION
        if not tpath.exists():
            raise FileNotFoundError(f"{tpath} not found; run 'truncate' first")
        res = TruncationResult.load(tpath)
        if res.provenance.get("scenarios_sha256") != sha256_file(out / SCENARIOS):
            raise ValueError(f"{tpath} was computed from a different scenario file")
        stacked = stack_system(cfg.linear_system())
        x0 = cfg.x0_array()
        try:
            problem = assemble_truncated_problem(
                stacked, cfg.constraint_spec(), cfg.cost_spec(), sset.subset(res.selected),
                (res.eps_cl, res.eps_ol, res.eps_u), x0, norm=cfg.norm, cost_scenarios=sset)
        except BufferInfeasibleError as exc:
            raise StageError("solve", exc) from exc
        policy = solve(problem)
        policy.provenance = _provenance(cfg, scenarios_sha256=res.provenance["scenarios_sha256"],
                                        truncation_sha256=sha256_file(tpath), norm=cfg.norm)
        policy.save(out / POLICY)
        if not policy.ok:
            raise RuntimeError(f"solver returned {policy.solver_status!r}")
        comment = _comment(policy.provenance)
        _write_csv(out / NOMINAL, *_nominal_rows(policy, stacked, x0), comment=comment)
        _write_csv(out / ENVELOPES,
                   *envelope_rows(policy, stacked, x0, sset.W, res.selected,
                                  cfg.output.plot_coords), comment=comment)
        log(f"solve: status={policy.solver_status} objective={policy.objective_value:.6g}")
        return policy


def run_validate(cfg, log=print):
    with stage("validate"):
        out = _outdir(cfg)
        sset = _load_design(cfg, out, "validate")
        ppath = out / POLICY
        if not ppath.exists():
            raise FileNotFoundError(f"{ppath} not found; run 'solve' first")
        policy = ControllerPolicy.load(ppath)
        stacked = stack_system(cfg.linear_system())
        x0 = cfg.x0_array()
        cons = cfg.constraint_spec()
        det = deterministic_containment_check(policy, stacked, cons, sset, x0,
                                              tol=cfg.validation.tol)
        report = monte_carlo_validate(policy, stacked, cons, cfg.sampler_spec(),
                                      cfg.validation.mc_samples, x0, cfg.seeds.validation,
                                      nw=stacked.dims.nw, deterministic=det)
        report.extra = {"provenance": _provenance(cfg, policy_sha256=sha256_file(ppath)),
                        "delta": cfg.samples.delta, "containment": det[1]}
        report.save(out / VALIDATION)
        report.save_per_time(out / RATES, comment=_comment(report.extra["provenance"]))
        verdict = "pass" if report.deterministic_pass else "FAIL"
        log(f"validate: containment {verdict} (max state residual "
            f"{report.max_state_residual:.3g}, input {report.max_input_residual:.3g}); "
            f"MC state rate {report.state_violation_rate:.4g}, "
            f"input rate {report.input_violation_rate:.4g} over {report.mc_samples}")
        return report


def run_pipeline(cfg, log=print):
    sset = run_generate(cfg, log)
    res = run_truncate(cfg, log)
    policy = run_solve(cfg, log)
    report = run_validate(cfg, log)
    return {"scenarios": sset, "truncation": res, "policy": policy, "validation": report}


def summary_table(cfg, results):
    res, pol, rep = results["truncation"], results["policy"], results["validation"]
    lo_x, hi_x = rep.state_wilson
    lo_u, hi_u = rep.input_wilson
    rows = [
        ("N (design scenarios)", f"{results['scenarios'].N}"),
        ("N-hat (selected)", f"{res.nhat}"),
        ("pruned mapping", "yes" if cfg.truncation.prune else "no"),
        ("buffers", res.buffer_mode),
        ("d_H", f"{res.d_H:.4f}"),
        ("eps_cl", f"{res.eps_cl:.4f}"),
        ("eps_u", f"{res.eps_u:.4f}"),
        ("eps_ol (max)", f"{float(np.max(res.eps_ol)):.4f}"),
        ("objective", f"{pol.objective_value:.4f}"),
        ("solver status", pol.solver_status),
        ("containment (all N)", "pass" if rep.deterministic_pass else "FAIL"),
        ("max state residual", f"{rep.max_state_residual:.4f}"),
        ("max input residual", f"{rep.max_input_residual:.4f}"),
        ("MC samples", f"{rep.mc_samples}"),
        ("state violation rate", f"{rep.state_violation_rate:.4f} [{lo_x:.4f}, {hi_x:.4f}]"),
        ("input violation rate", f"{rep.input_violation_rate:.4f} [{lo_u:.4f}, {hi_u:.4f}]"),
    ]
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


# argument handling ------------------------------------------------------------

def _overrides(args):
    ch = {}
    if getattr(args, "seed", None) is not None:
        ch["seeds.scenario"] = args.seed
    if getattr(args, "nhat", None) is not None:
        ch["truncation.nhat"] = args.nhat
        ch["truncation.target_eps"] = None
    if getattr(args, "target_eps", None) is not None:
        ch["truncation.target_eps"] = args.target_eps
        ch["truncation.nhat"] = None
    if getattr(args, "norm", None) is not None:
        ch["norm"] = args.norm
    if getattr(args, "prune", None) is not None:
        ch["truncation.prune"] = args.prune == "on"
    if getattr(args, "out", None) is not None:
        ch["output.directory"] = args.out
    if getattr(args, "buffers", None) is not None:
        ch["truncation.buffers"] = args.buffers
    if getattr(args, "mc_samples", None) is not None:
        ch["validation.mc_samples"] = args.mc_samples
    return ch


def _load(args):
    base = cfgmod.load_config(args.config) if args.config else cfgmod.demo_config()
    ch = _overrides(args)
    return base.with_overrides(**ch) if ch else base


def cmd_sample_count(args):
    cfg = _load(args)
    N, n_theta, from_formula = _resolve_N(cfg, args.problem)
    print(f"n_theta = {n_theta}")
    print(f"N = {N}" + ("" if from_formula else " (explicit override)"))
    return 0


def _stage_cmd(fn):
    def run(args):
        fn(_load(args))
        return 0
    return run


def cmd_pipeline(args):
    run_pipeline(_load(args))
    return 0


def cmd_demo(args):
    base = cfgmod.demo_config()
    ch = _overrides(args)
    if args.out is None:
        ch["output.directory"] = f"runs/demo-nhat{args.nhat}"
    cfg = base.with_overrides(**ch)
    results = run_pipeline(cfg)
    print()
    print(summary_table(cfg, results))
    return 0


def _common(sp, config_required=True, stop_flags=True):
    if config_required:
        sp.add_argument("--config", "-c", required=True, help="run configuration (YAML)")
    sp.add_argument("--seed", type=int, help="scenario seed")
    sp.add_argument("--out", help="output directory")
    if stop_flags:
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--nhat", type=int, help="number of scenarios to keep")
        g.add_argument("--target-eps", type=float, help="stop once d_H is at most this")
    sp.add_argument("--norm", choices=("one", "two"), help="gain norm in the buffers")
    sp.add_argument("--prune", choices=("on", "off"), help="prune structurally-zero lifted rows")
    sp.add_argument("--buffers", choices=("coordinate", "certified"),
                    help="coordinate-wise extent errors or the exact hull distance")
    sp.add_argument("--mc-samples", type=int, help="Monte Carlo validation samples")


def build_parser():
    ap = argparse.ArgumentParser(prog="scentrunc",
                                 description="Scenario-truncated chance-constrained trajectory "
                                             "optimization with disturbance feedback.")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("sample-count", help="print the decision-variable count and N")
    _common(sp)
    sp.add_argument("--problem", choices=("truncated", "scenario"), default="truncated",
                    help="count variables of the buffered program (with gain-norm bounds) "
                         "or of the plain scenario program")
    sp.set_defaults(func=cmd_sample_count)

    for name, fn, text in (("generate", run_generate, "draw and save the design scenarios"),
                           ("truncate", run_truncate, "select scenarios and compute buffers"),
                           ("solve", run_solve, "solve the buffered program"),
                           ("validate", run_validate, "containment check and Monte Carlo")):
        sp = sub.add_parser(name, help=text)
        _common(sp)
        sp.set_defaults(func=_stage_cmd(fn))

    sp = sub.add_parser("pipeline", help="run all stages")
    _common(sp)
    sp.set_defaults(func=cmd_pipeline)

    sp = sub.add_parser("demo", help="double-integrator example with the embedded configuration")
    _common(sp, config_required=False, stop_flags=False)
    sp.add_argument("--nhat", type=int, default=20, help="selected scenarios (6, 20 or any)")
    sp.set_defaults(func=cmd_demo, config=None, target_eps=None)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
