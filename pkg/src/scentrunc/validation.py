"""Checks of a solved policy against the design scenarios and fresh samples."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from .optimization import ControllerPolicy, apply_policy
from .scenarios import sample_scenarios


def _residuals(policy, stacked, constraints, W, x0):
    d = stacked.dims
    U, X = apply_policy(policy, stacked, x0, np.atleast_2d(W))
    Fx, Fu = constraints.stacked(d.p)
    return Fx @ X - 1.0, Fu @ U - 1.0


def deterministic_containment_check(policy: ControllerPolicy, stacked, constraints,
                                    full_scenarios, x0, tol=1e-6):
    """Evaluate every state and input row on every design scenario.

    Returns ``(passed, info)`` where ``info`` holds the largest state and input
    residuals (``row - 1``) and the scenarios attaining them.
    """
    if not policy.ok:
        raise ValueError(f"policy status is {policy.solver_status!r}, nothing to check")
    W = getattr(full_scenarios, "W", full_scenarios)
    rx, ru = _residuals(policy, stacked, constraints, W, x0)
    sx, su = rx.max(axis=0), ru.max(axis=0)
    info = {
        "max_state_residual": float(sx.max()),
        "max_input_residual": float(su.max()),
        "worst_state_scenario": int(np.argmax(sx)),
        "worst_input_scenario": int(np.argmax(su)),
        "n_scenarios": int(rx.shape[1]),
        "tol": tol,
    }
    passed = info["max_state_residual"] <= tol and info["max_input_residual"] <= tol
    return passed, info


def wilson_interval(count, n, confidence=0.95):
    ci = binomtest(int(count), int(n)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class ValidationReport:
    deterministic_pass: bool | None
    max_state_residual: float | None
    max_input_residual: float | None
    mc_samples: int
    state_violation_rate: float
    input_violation_rate: float
    per_time_violation: list
    per_time_state_violation: list
    per_time_input_violation: list
    state_wilson: tuple
    input_wilson: tuple
    seed: int
    tol: float = 1e-6
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        out = asdict(self)
        out["state_wilson"] = list(self.state_wilson)
        out["input_wilson"] = list(self.input_wilson)
        return out

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    def save_per_time(self, path, comment=None):
        lines = [f"# {comment}"] if comment else []
        lines.append("t,any_violation,state_violation,input_violation")
        for t, (a, s, u) in enumerate(zip(self.per_time_violation, self.per_time_state_violation,
                                          self.per_time_input_violation), start=1):
            lines.append(f"{t},{a!r},{s!r},{u!r}")
        Path(path).write_text("\n".join(lines) + "\n")


def monte_carlo_validate(policy: ControllerPolicy, stacked, constraints, sampler, M, x0, seed,
                         *, nw=None, deterministic=None, chunk=20000):
    """Estimate violation probabilities on ``M`` fresh stacked disturbances.

    A sample violates the state (input) constraint when any of its state
    (input) rows over the horizon exceeds 1. ``deterministic`` optionally
    carries the result of :func:`deterministic_containment_check` into the
    report.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    if not policy.ok:
        raise ValueError(f"policy status is {policy.solver_status!r}, nothing to validate")
    d = stacked.dims
    n_cx, n_cu = constraints.n_cx, constraints.n_cu
    W = sample_scenarios(sampler, M, d.p, seed, nw=nw if nw is not None else d.nw).W
    x_hits = 0
    u_hits = 0
    t_any = np.zeros(d.p, dtype=np.int64)
    t_x = np.zeros(d.p, dtype=np.int64)
    t_u = np.zeros(d.p, dtype=np.int64)
    for start in range(0, M, chunk):
        rx, ru = _residuals(policy, stacked, constraints, W[:, start:start + chunk], x0)
        vx = (rx > 0).reshape(d.p, n_cx, -1).any(axis=1)
        vu = (ru > 0).reshape(d.p, n_cu, -1).any(axis=1)
        x_hits += int(vx.any(axis=0).sum())
        u_hits += int(vu.any(axis=0).sum())
        t_x += vx.sum(axis=1)
        t_u += vu.sum(axis=1)
        t_any += (vx | vu).sum(axis=1)
    det_pass, det_x, det_u, tol = None, None, None, 1e-6
    if deterministic is not None:
        det_pass, info = deterministic
        det_x, det_u, tol = info["max_state_residual"], info["max_input_residual"], info["tol"]
    return ValidationReport(
        deterministic_pass=det_pass,
        max_state_residual=det_x,
        max_input_residual=det_u,
        mc_samples=int(M),
        state_violation_rate=x_hits / M,
        input_violation_rate=u_hits / M,
        per_time_violation=(t_any / M).tolist(),
        per_time_state_violation=(t_x / M).tolist(),
        per_time_input_violation=(t_u / M).tolist(),
        state_wilson=wilson_interval(x_hits, M),
        input_wilson=wilson_interval(u_hits, M),
        seed=int(seed),
        tol=tol,
    )
