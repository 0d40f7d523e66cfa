"""Scenario programs over disturbance-feedback policies ``U = K W + V``.

Three programs share one assembler:

* ``scenario``  -- every design scenario constrained, no buffers;
* ``truncated`` -- selected scenarios only, buffered right-hand sides whose
  feedback part scales with per-step gain-norm bounds ``zeta``;
* ``openloop``  -- ``K = 0``, state constraints buffered elementwise.

Decision vector layout: ``[k, v, zeta, s]`` where ``k`` holds the free gain
entries in block order ``K_{1,0}, K_{2,0}, K_{2,1}, ...`` (row-major inside a
block), so the gain-norm vector of step ``t`` is a prefix of ``k``; ``s``
holds absolute-value bounds for the 1-norm encoding.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sparse

from .solvers import OPTIMAL, SolverBackend, default_backend
from .system import DimensionError, StackedSystem

EXPECTATION_MODES = ("nominal", "scenario-mean", "design-mean")
NORMS = ("one", "two")


class BufferInfeasibleError(ValueError):
    """A buffer leaves a negative right-hand side: the tightened set is empty."""

    def __init__(self, time, row, kind, value):
        self.time = time
        self.row = row
        self.kind = kind
        self.value = value
        super().__init__(
            f"{kind} buffer {value:.6g} exceeds 1 at time step t={time}, "
            f"constraint row {row}: buffered constraint set is empty")


def _psd(M, name, size):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape != (size, size):
        raise DimensionError(f"{name} must be {size}x{size}, got {M.shape}")
    if not np.allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(M).min() < -1e-10 * max(1.0, np.abs(M).max()):
        raise ValueError(f"{name} must be positive semidefinite")
    return M


@dataclass(frozen=True)
class ConstraintSpec:
    """Stage polytopes ``fx x <= 1`` and ``fu u <= 1``."""

    fx_stage: np.ndarray
    fu_stage: np.ndarray

    def __post_init__(self):
        for name in ("fx_stage", "fu_stage"):
            M = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if not np.all(np.isfinite(M)):
                raise ValueError(f"{name} must be finite")
            M.setflags(write=False)
            object.__setattr__(self, name, M)

    @property
    def n_cx(self):
        return self.fx_stage.shape[0]

    @property
    def n_cu(self):
        return self.fu_stage.shape[0]

    def stacked(self, p):
        return np.kron(np.eye(p), self.fx_stage), np.kron(np.eye(p), self.fu_stage)


@dataclass(frozen=True)
class CostSpec:
    """Stage cost ``(x_t - r_t)' Q (x_t - r_t) + u_t' R u_t`` summed over the horizon.

    ``reference`` is a stacked ``p*n_x`` vector, a single ``n_x`` vector used at
    every step, or ``None`` for regulation to the origin.
    """

    Q: np.ndarray
    R: np.ndarray
    reference: np.ndarray | None = None
    expectation_mode: str = "nominal"

    def __post_init__(self):
        if self.expectation_mode not in EXPECTATION_MODES:
            raise ValueError(f"expectation_mode must be one of {EXPECTATION_MODES}")
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        object.__setattr__(self, "Q", _psd(Q, "Q", Q.shape[0]))
        object.__setattr__(self, "R", _psd(R, "R", R.shape[0]))

    def stacked_reference(self, dims):
        if self.reference is None:
            return np.zeros(dims.p * dims.nx)
        r = np.asarray(self.reference, dtype=float).ravel()
        if r.size == dims.nx:
            return np.tile(r, dims.p)
        if r.size != dims.p * dims.nx:
            raise DimensionError(f"reference must have length {dims.nx} or {dims.p * dims.nx}")
        return r


@dataclass(frozen=True)
class Layout:
    """Index bookkeeping for the decision vector."""

    nu: int
    nw: int
    p: int
    gain_rows: np.ndarray
    gain_cols: np.ndarray
    k: slice
    v: slice
    zeta: slice
    s: slice

    @property
    def n_vars(self):
        return self.s.stop

    @property
    def n_gain(self):
        return self.gain_rows.size

    def kappa_len(self, t):
        return (t - 1) * t // 2 * self.nu * self.nw

    def gain_matrix(self, kvec):
        K = np.zeros((self.p * self.nu, self.p * self.nw))
        K[self.gain_rows, self.gain_cols] = kvec
        return K


def gain_entries(p, nu, nw):
    """Row and column indices of the free gain entries in block order."""
    rows, cols = [], []
    for s in range(1, p):
        for r in range(s):
            a, b = np.meshgrid(np.arange(nu), np.arange(nw), indexing="ij")
            rows.append((s * nu + a).ravel())
            cols.append((r * nw + b).ravel())
    if not rows:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    return np.concatenate(rows), np.concatenate(cols)


def _layout(dims, feedback, coupling, norm):
    rows, cols = gain_entries(dims.p, dims.nu, dims.nw) if feedback else (
        np.zeros(0, dtype=int), np.zeros(0, dtype=int))
    nk = rows.size
    nv = dims.p * dims.nu
    nz = dims.p if coupling else 0
    ns = nk if (coupling and norm == "one") else 0
    k = slice(0, nk)
    v = slice(nk, nk + nv)
    z = slice(v.stop, v.stop + nz)
    s = slice(z.stop, z.stop + ns)
    return Layout(dims.nu, dims.nw, dims.p, rows, cols, k, v, z, s)


def kappa(K, t, nu, nw):
    """Free gain entries acting before step ``t``: blocks ``K_{1,0}..K_{t-1,t-2}``.

    ``K`` is ``p*n_u x p*n_w`` with ``n_u x n_w`` blocks. Empty for ``t = 1``.
    """
    K = np.asarray(K, dtype=float)
    p = K.shape[0] // nu
    if K.shape != (p * nu, p * nw):
        raise DimensionError(f"K must be {p * nu}x{p * nw}, got {K.shape}")
    if not (1 <= t <= p):
        raise ValueError(f"t must lie in [1, {p}], got {t}")
    rows, cols = gain_entries(p, nu, nw)
    n = (t - 1) * t // 2 * nu * nw
    return K[rows[:n], cols[:n]]


@dataclass
class ProblemSpec:
    """``min 1/2 x'Px + q'x + c  s.t.  G x <= h`` plus second-order cones."""

    kind: str
    P: sparse.csc_matrix
    q: np.ndarray
    c: float
    G: sparse.csr_matrix
    h: np.ndarray
    soc: list
    layout: Layout
    n_scenario_rows: int
    norm: str
    meta: dict = field(default_factory=dict)

    @property
    def n_vars(self):
        return self.layout.n_vars

    def objective(self, x):
        return float(0.5 * x @ (self.P @ x) + self.q @ x + self.c)

    def export(self, directory):
        """Write ``P.mtx``, ``G.mtx``, ``q.mtx``, ``h.mtx`` and ``problem.json``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        scipy.io.mmwrite(d / "P.mtx", sparse.coo_matrix(self.P))
        scipy.io.mmwrite(d / "G.mtx", sparse.coo_matrix(self.G))
        scipy.io.mmwrite(d / "q.mtx", self.q[:, None])
        scipy.io.mmwrite(d / "h.mtx", self.h[:, None])
        L = self.layout
        info = {
            "kind": self.kind, "norm": self.norm, "constant": self.c,
            "n_vars": self.n_vars, "n_scenario_rows": self.n_scenario_rows,
            "slices": {name: [getattr(L, name).start, getattr(L, name).stop]
                       for name in ("k", "v", "zeta", "s")},
            "gain_rows": L.gain_rows.tolist(), "gain_cols": L.gain_cols.tolist(),
            "soc": [list(map(int, c)) for c in self.soc],
        }
        (d / "problem.json").write_text(json.dumps(info, indent=1) + "\n")


def moments(W):
    W = np.atleast_2d(np.asarray(W, dtype=float))
    return W.mean(axis=1), (W @ W.T) / W.shape[1]


def _cost_terms(stacked, cost, x0, layout, mu, M2):
    """Expected cost as ``x'Px + q'x + c`` given first/second disturbance moments."""
    d = stacked.dims
    Qb = np.kron(np.eye(d.p), cost.Q)
    Rb = np.kron(np.eye(d.p), cost.R)
    if cost.Q.shape[0] != d.nx or cost.R.shape[0] != d.nu:
        raise DimensionError("Q must be n_x x n_x and R must be n_u x n_u")
    Gu, Gw = stacked.Gu, stacked.Gw
    dev = stacked.Gx @ x0 - cost.stacked_reference(d)
    H = Gu.T @ Qb @ Gu + Rb
    Gc = Gw.T @ Qb @ Gu
    gd = Gu.T @ Qb @ dev
    a, b = layout.gain_rows, layout.gain_cols

    n = layout.n_vars
    P = np.zeros((n, n))
    q = np.zeros(n)
    P[layout.v, layout.v] = H
    q[layout.v] = 2.0 * (gd + Gc.T @ mu)
    if a.size:
        P[layout.k, layout.k] = H[np.ix_(a, a)] * M2[np.ix_(b, b)]
        cross = H[:, a] * mu[b]
        P[layout.v, layout.k] = cross
        P[layout.k, layout.v] = cross.T
        q[layout.k] = 2.0 * (gd[a] * mu[b] + (M2 @ Gc)[b, a])
    c = float(dev @ Qb @ dev + 2.0 * dev @ Qb @ Gw @ mu + np.trace(Gw.T @ Qb @ Gw @ M2))
    return P, q, c


def _cost_moments(cost, W_con, cost_scenarios, size):
    mode = cost.expectation_mode
    if mode == "nominal":
        return np.zeros(size), np.zeros((size, size))
    if mode == "scenario-mean":
        return moments(W_con)
    if cost_scenarios is None:
        raise ValueError("expectation_mode 'design-mean' needs cost_scenarios")
    return moments(getattr(cost_scenarios, "W", cost_scenarios))


def _scenario_matrix(scenarios, size):
    W = getattr(scenarios, "W", scenarios)
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape[0] != size:
        raise DimensionError(f"scenarios must have {size} rows, got {W.shape[0]}")
    if W.shape[1] < 1:
        raise ValueError("at least one scenario is required")
    return W


def _check_rhs(rhs_const, n_c, kind):
    bad = np.flatnonzero(rhs_const < 0)
    if bad.size:
        row = int(bad[0])
        raise BufferInfeasibleError(row // n_c + 1, row % n_c, kind, float(1.0 - rhs_const[row]))


def _assemble(kind, stacked, constraints, cost, W, x0, *, feedback, coupling,
              eps_cl=0.0, eps_ol=None, eps_u=0.0, norm="one", cost_scenarios=None,
              gain_constraint=None):
    d = stacked.dims
    if norm not in NORMS:
        raise ValueError(f"norm must be one of {NORMS}")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (d.nx,):
        raise DimensionError(f"x0 must have length {d.nx}")
    if constraints.fx_stage.shape[1] != d.nx or constraints.fu_stage.shape[1] != d.nu:
        raise DimensionError("constraint matrices do not match the system dimensions")
    W = _scenario_matrix(W, d.p * d.nw)
    Fx, Fu = constraints.stacked(d.p)
    n_cx, n_cu = constraints.n_cx, constraints.n_cu
    rx, ru = d.p * n_cx, d.p * n_cu
    eps_ol = np.zeros(rx) if eps_ol is None else np.broadcast_to(
        np.asarray(eps_ol, dtype=float), (rx,)).copy()
    if eps_cl < 0 or eps_u < 0 or np.any(eps_ol < 0):
        raise ValueError("buffers must be nonnegative")
    _check_rhs(1.0 - eps_ol, n_cx, "state" if kind == "openloop" else "open-loop state")

    L = _layout(d, feedback, coupling, norm)
    n, N = L.n_vars, W.shape[1]
    a, b = L.gain_rows, L.gain_cols
    FxGu = Fx @ stacked.Gu

    # state rows, scenario-major
    Ax = np.zeros((N, rx, n))
    Ax[:, :, L.v] = FxGu
    if a.size:
        Ax[:, :, L.k] = FxGu[None, :, a] * W[b, :].T[:, None, :]
    if coupling:
        Ax[:, :, L.zeta] = eps_cl * np.kron(np.eye(d.p), np.ones((n_cx, 1)))
    bx = 1.0 - eps_ol[None, :] - (Fx @ (stacked.Gx @ x0))[None, :] - (Fx @ stacked.Gw @ W).T

    blocks = [sparse.csr_matrix(Ax.reshape(N * rx, n))]
    rhs = [bx.ravel()]
    if feedback:
        Au = np.zeros((N, ru, n))
        Au[:, :, L.v] = Fu
        if a.size:
            Au[:, :, L.k] = Fu[None, :, a] * W[b, :].T[:, None, :]
        if coupling:
            Au[:, :, L.zeta] = eps_u * np.kron(np.eye(d.p), np.ones((n_cu, 1)))
        blocks.append(sparse.csr_matrix(Au.reshape(N * ru, n)))
        rhs.append(np.ones(N * ru))
        n_scen = N * (rx + ru)
    else:
        Au = np.zeros((ru, n))
        Au[:, L.v] = Fu
        blocks.append(sparse.csr_matrix(Au))
        rhs.append(np.ones(ru))
        n_scen = N * rx

    soc = []
    if coupling:
        nk, nz = L.n_gain, d.p
        zcols = np.arange(L.zeta.start, L.zeta.stop)
        # zeta_t >= 0
        blocks.append(sparse.csr_matrix((-np.ones(nz), (np.arange(nz), zcols)), shape=(nz, n)))
        rhs.append(np.zeros(nz))
        if norm == "one" and nk:
            kcols = np.arange(L.k.start, L.k.stop)
            scols = np.arange(L.s.start, L.s.stop)
            I = np.arange(nk)
            for sign in (1.0, -1.0):
                blocks.append(sparse.csr_matrix(
                    (np.concatenate([sign * np.ones(nk), -np.ones(nk)]),
                     (np.concatenate([I, I]), np.concatenate([kcols, scols]))), shape=(nk, n)))
                rhs.append(np.zeros(nk))
            T = np.zeros((d.p, n))
            for t in range(1, d.p + 1):
                T[t - 1, scols[:L.kappa_len(t)]] = 1.0
                T[t - 1, zcols[t - 1]] = -1.0
            blocks.append(sparse.csr_matrix(T))
            rhs.append(np.zeros(d.p))
        elif norm == "two":
            for t in range(2, d.p + 1):
                soc.append(np.concatenate([[zcols[t - 1]], L.k.start + np.arange(L.kappa_len(t))]))
    if gain_constraint is not None:
        Hk, gk = gain_constraint
        Hk = np.atleast_2d(np.asarray(Hk, dtype=float))
        if Hk.shape[1] != L.n_gain:
            raise DimensionError(f"gain constraint needs {L.n_gain} columns")
        Hfull = np.zeros((Hk.shape[0], n))
        Hfull[:, L.k] = Hk
        blocks.append(sparse.csr_matrix(Hfull))
        rhs.append(np.asarray(gk, dtype=float).ravel())

    mu, M2 = _cost_moments(cost, W, cost_scenarios, d.p * d.nw)
    Pq, q, c = _cost_terms(stacked, cost, x0, L, mu, M2)
    G = sparse.vstack(blocks, format="csr")
    h = np.concatenate(rhs)
    meta = {"x0": x0, "eps_cl": float(eps_cl), "eps_u": float(eps_u), "eps_ol": eps_ol,
            "n_scenarios": N, "dims": d, "n_cx": n_cx, "n_cu": n_cu}
    return ProblemSpec(kind, sparse.csc_matrix(2.0 * Pq), q, c, G, h, soc, L, n_scen, norm, meta)


def assemble_truncated_problem(stacked: StackedSystem, constraints: ConstraintSpec,
                               cost: CostSpec, scenarios_hat, buffers, x0, *, norm="one",
                               cost_scenarios=None, gain_constraint=None) -> ProblemSpec:
    """Buffered program over the selected scenarios.

    ``buffers`` is ``(eps_cl, eps_ol, eps_u)``: state rows are tightened by
    ``eps_cl * zeta_t + eps_ol`` and input rows by ``eps_u * zeta_t`` where
    ``zeta_t`` bounds the norm of the gain entries acting before step ``t``.
    ``gain_constraint=(H, g)`` adds ``H k <= g`` on the free gain entries.
    """
    eps_cl, eps_ol, eps_u = buffers
    return _assemble("truncated", stacked, constraints, cost, scenarios_hat, x0,
                     feedback=True, coupling=True, eps_cl=float(eps_cl), eps_ol=eps_ol,
                     eps_u=float(eps_u), norm=norm, cost_scenarios=cost_scenarios,
                     gain_constraint=gain_constraint)


def assemble_scenario_problem(stacked, constraints, cost, scenarios, x0, *,
                              cost_scenarios=None) -> ProblemSpec:
    """Unbuffered program with one constraint set per scenario."""
    return _assemble("scenario", stacked, constraints, cost, scenarios, x0,
                     feedback=True, coupling=False, cost_scenarios=cost_scenarios)


def assemble_openloop_problem(stacked, constraints, cost, scenarios_hat, eps_x, x0, *,
                              cost_scenarios=None) -> ProblemSpec:
    """Program without feedback, state rows tightened elementwise by ``eps_x``."""
    return _assemble("openloop", stacked, constraints, cost, scenarios_hat, x0,
                     feedback=False, coupling=False, eps_ol=eps_x, cost_scenarios=cost_scenarios)


@dataclass
class ControllerPolicy:
    K: np.ndarray | None
    V: np.ndarray | None
    zeta: np.ndarray | None
    objective_value: float | None
    solver_status: str
    info: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.solver_status == OPTIMAL

    def to_dict(self):
        def arr(x):
            return None if x is None else np.asarray(x).tolist()
        return {"K": arr(self.K), "V": arr(self.V), "zeta": arr(self.zeta),
                "objective_value": self.objective_value, "solver_status": self.solver_status,
                "info": self.info, "provenance": self.provenance}

    @classmethod
    def from_dict(cls, data):
        def arr(x):
            return None if x is None else np.asarray(x, dtype=float)
        return cls(arr(data["K"]), arr(data["V"]), arr(data["zeta"]), data["objective_value"],
                   data["solver_status"], data.get("info", {}), data.get("provenance", {}))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def solve(problem: ProblemSpec, backend: SolverBackend | None = None) -> ControllerPolicy:
    """Solve ``problem``; gain entries outside the causal pattern are exactly zero."""
    backend = backend or default_backend()
    out = backend.solve(problem)
    L = problem.layout
    if out.status != OPTIMAL or out.x is None:
        return ControllerPolicy(None, None, None, None, out.status, out.info)
    x = out.x
    K = L.gain_matrix(x[L.k])
    V = x[L.v].copy()
    zeta = x[L.zeta].copy() if L.zeta.stop > L.zeta.start else None
    info = dict(out.info)
    info["max_constraint_residual"] = float(max(0.0, np.max(problem.G @ x - problem.h)))
    return ControllerPolicy(K, V, zeta, problem.objective(x), out.status, info)


def apply_policy(policy: ControllerPolicy, stacked: StackedSystem, x0, W):
    """Inputs ``U = K W + V`` and states for one or many stacked disturbances."""
    d = stacked.dims
    W = np.asarray(W, dtype=float)
    if W.shape[0] != d.p * d.nw:
        raise DimensionError(f"W must have {d.p * d.nw} rows")
    K = policy.K if policy.K is not None else np.zeros((d.p * d.nu, d.p * d.nw))
    V = np.asarray(policy.V, dtype=float)
    if K.shape != (d.p * d.nu, d.p * d.nw) or V.shape != (d.p * d.nu,):
        raise DimensionError("policy does not match the system dimensions")
    U = K @ W + (V[:, None] if W.ndim == 2 else V)
    X = stacked.propagate(x0, U, W)
    return U, X


def norm_coupling_residual(policy: ControllerPolicy, nu, nw, norm="one"):
    """Largest ``||kappa_t|| - zeta_t`` over the horizon."""
    p = len(policy.zeta)
    order = 1 if norm == "one" else 2
    worst = -np.inf
    for t in range(1, p + 1):
        k = kappa(policy.K, t, nu, nw)
        val = np.linalg.norm(k, order) if k.size else 0.0
        worst = max(worst, val - policy.zeta[t - 1])
    return float(worst)
