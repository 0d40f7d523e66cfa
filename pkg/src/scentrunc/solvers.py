"""Convex solver backends.

A backend receives a :class:`~scentrunc.optimization.ProblemSpec`, i.e.

    minimise    1/2 x'Px + q'x + c
    subject to  G x <= h,  (x[z_t], x[k_t]) in SOC for every cone block

and returns the primal point with a status string from
``{"optimal", "infeasible", "numerical-failure"}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sparse

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical-failure"


@dataclass
class SolveOutput:
    x: np.ndarray | None
    status: str
    info: dict = field(default_factory=dict)


class SolverBackend:
    """Interface for QP/SOCP backends."""

    name = "abstract"

    def solve(self, problem) -> SolveOutput:
        raise NotImplementedError


class ClarabelBackend(SolverBackend):
    """Interior-point backend built on Clarabel."""

    name = "clarabel"

    _STATUS = {
        "Solved": OPTIMAL,
        "AlmostSolved": OPTIMAL,
        "PrimalInfeasible": INFEASIBLE,
        "AlmostPrimalInfeasible": INFEASIBLE,
    }

    def __init__(self, tol_feas=1e-8, tol_gap=1e-8, max_iter=200, verbose=False):
        self.tol_feas = tol_feas
        self.tol_gap = tol_gap
        self.max_iter = max_iter
        self.verbose = verbose

    def solve(self, problem) -> SolveOutput:
        import clarabel

        n = problem.n_vars
        P = sparse.triu(sparse.csc_matrix(problem.P), format="csc")
        blocks = [sparse.csc_matrix(problem.G)]
        rhs = [np.asarray(problem.h, dtype=float)]
        cones = [clarabel.NonnegativeConeT(problem.G.shape[0])] if problem.G.shape[0] else []
        for cone in problem.soc:
            idx = np.asarray(cone, dtype=int)
            rows = sparse.csc_matrix((-np.ones(idx.size), (np.arange(idx.size), idx)),
                                     shape=(idx.size, n))
            blocks.append(rows)
            rhs.append(np.zeros(idx.size))
            cones.append(clarabel.SecondOrderConeT(idx.size))
        A = sparse.vstack(blocks, format="csc")
        b = np.concatenate(rhs)

        settings = clarabel.DefaultSettings()
        settings.verbose = self.verbose
        settings.max_iter = self.max_iter
        settings.tol_feas = self.tol_feas
        settings.tol_gap_abs = self.tol_gap
        settings.tol_gap_rel = self.tol_gap
        try:
            sol = clarabel.DefaultSolver(P, np.asarray(problem.q, dtype=float), A, b,
                                         cones, settings).solve()
        except Exception as exc:  # backend breakdown
            return SolveOutput(None, NUMERICAL_FAILURE, {"error": repr(exc)})
        raw = str(sol.status)
        status = self._STATUS.get(raw, NUMERICAL_FAILURE)
        info = {"backend": self.name, "raw_status": raw, "iterations": int(sol.iterations),
                "solve_time": float(sol.solve_time)}
        x = np.asarray(sol.x, dtype=float) if status == OPTIMAL else None
        return SolveOutput(x, status, info)


def default_backend():
    return ClarabelBackend()
