"""Scenario truncation: lifted mapping, extent errors and greedy selection."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from . import kernels
from .system import DimensionError, StackedSystem, lift_left


@dataclass(frozen=True)
class TruncationMapping:
    """Linear map from a stacked disturbance to the truncation coordinates.

    Rows are ordered closed-loop state block, open-loop state block, input
    block. ``cl_index`` / ``u_index`` hold, for every retained lifted row,
    the triple ``(l, j, i)``: that row equals ``M[i, l] * W[j]`` where ``M`` is
    ``Fx @ Gu`` (resp. ``Fu``), and it is multiplied by gain entry ``K[l, j]``
    when the constraint row ``i`` is reassembled.
    """

    S: np.ndarray
    partition: tuple
    cl_index: np.ndarray
    u_index: np.ndarray
    n_cx: int
    n_cu: int
    p: int
    pruned: bool
    prune_mask: dict | None = None

    @property
    def n_rows(self):
        return self.S.shape[0]

    @property
    def S_cl(self):
        return self.S[:self.partition[0]]

    @property
    def S_ol(self):
        r_cl, r_ol, _ = self.partition
        return self.S[r_cl:r_cl + r_ol]

    @property
    def S_u(self):
        r_cl, r_ol, _ = self.partition
        return self.S[r_cl + r_ol:]

    def split(self, vec):
        r_cl, r_ol, _ = self.partition
        return vec[:r_cl], vec[r_cl:r_cl + r_ol], vec[r_cl + r_ol:]

    def closed_loop_term(self, K, W):
        """``Fx Gu K W`` reassembled from the retained closed-loop rows."""
        return _recombine(K, self.S_cl @ W, self.cl_index, self.p * self.n_cx)

    def input_term(self, K, W):
        """``Fu K W`` reassembled from the retained input rows."""
        return _recombine(K, self.S_u @ W, self.u_index, self.p * self.n_cu)


def _recombine(K, coords, index, n_out):
    coords = np.atleast_1d(coords)
    vec = coords.ndim == 1
    if vec:
        coords = coords[:, None]
    out = np.zeros((n_out, coords.shape[1]))
    if index.shape[0]:
        weights = K[index[:, 0], index[:, 1]]
        np.add.at(out, index[:, 2], weights[:, None] * coords)
    return out[:, 0] if vec else out


def _lift_rows(M, m, keep_rule, prune):
    n, z = M.shape
    lifted = lift_left(M, m)
    l_idx, j_idx, i_idx = np.meshgrid(np.arange(z), np.arange(m), np.arange(n), indexing="ij")
    index = np.stack([l_idx.ravel(), j_idx.ravel(), i_idx.ravel()], axis=1)
    mask = keep_rule(index) if prune else np.ones(index.shape[0], dtype=bool)
    return lifted[mask], index[mask], mask


def build_truncation_mapping(fx_stage, fu_stage, stacked: StackedSystem, prune=True):
    """Assemble the truncation mapping for stage constraints ``fx x <= 1``, ``fu u <= 1``.

    With ``prune`` set, lifted rows are kept only when both the constraint
    matrix entry and the gain entry they pair with can be nonzero: the gain
    is strictly block lower triangular, ``Fx Gu`` block lower triangular and
    ``Fu`` block diagonal. Dropped rows never contribute to a constraint.
    """
    d = stacked.dims
    fx = np.atleast_2d(np.asarray(fx_stage, dtype=float))
    fu = np.atleast_2d(np.asarray(fu_stage, dtype=float))
    if fx.shape[1] != d.nx:
        raise DimensionError(f"fx has {fx.shape[1]} columns, expected n_x={d.nx}")
    if fu.shape[1] != d.nu:
        raise DimensionError(f"fu has {fu.shape[1]} columns, expected n_u={d.nu}")
    n_cx, n_cu = fx.shape[0], fu.shape[0]
    p, nu, nw = d.p, d.nu, d.nw
    Fx = np.kron(np.eye(p), fx)
    Fu = np.kron(np.eye(p), fu)
    m = p * nw

    def gain_free(index):
        return index[:, 0] // nu > index[:, 1] // nw

    def cl_rule(index):
        return gain_free(index) & (index[:, 0] // nu <= index[:, 2] // n_cx)

    def u_rule(index):
        return gain_free(index) & (index[:, 0] // nu == index[:, 2] // n_cu)

    S_cl, cl_index, cl_mask = _lift_rows(Fx @ stacked.Gu, m, cl_rule, prune)
    S_u, u_index, u_mask = _lift_rows(Fu, m, u_rule, prune)
    S_ol = Fx @ stacked.Gw
    S = np.vstack([S_cl, S_ol, S_u])
    S.setflags(write=False)
    mask = {"cl": cl_mask, "u": u_mask} if prune else None
    return TruncationMapping(S, (S_cl.shape[0], S_ol.shape[0], S_u.shape[0]),
                             cl_index, u_index, n_cx, n_cu, p, bool(prune), mask)


def map_scenarios(mapping: TruncationMapping, scenarios):
    """Point cloud ``S W^(i)`` with one column per scenario.

    The array is Fortran-ordered so each scenario's coordinates are contiguous.
    """
    W = np.asarray(getattr(scenarios, "W", scenarios), dtype=float)
    if W.ndim == 1:
        W = W[:, None]
    if W.shape[0] != mapping.S.shape[1]:
        raise DimensionError(
            f"scenarios have length {W.shape[0]}, mapping expects {mapping.S.shape[1]}")
    return (W.T @ mapping.S.T).T


def _check_subset(cloud, subset):
    subset = np.asarray(subset, dtype=int).ravel()
    if subset.size == 0:
        raise ValueError("subset must not be empty")
    N = cloud.shape[1]
    if subset.min() < 0 or subset.max() >= N:
        raise IndexError(f"subset indices must lie in [0, {N})")
    return subset


def epsilon_vector(cloud, subset):
    """Per-coordinate extent error of ``subset`` against the whole cloud."""
    cloud = np.atleast_2d(cloud)
    subset = _check_subset(cloud, subset)
    sub = cloud[:, subset]
    eps = np.maximum(cloud.max(axis=1) - sub.max(axis=1),
                     sub.min(axis=1) - cloud.min(axis=1))
    return np.maximum(eps, 0.0)


def hausdorff_distance(cloud, subset):
    """Infinity norm of :func:`epsilon_vector`."""
    eps = epsilon_vector(cloud, subset)
    return float(eps.max()) if eps.size else 0.0


def _project_simplex_rows(V):
    """Euclidean projection of every row of ``V`` onto the probability simplex."""
    n = V.shape[1]
    U = -np.sort(-V, axis=1)
    css = np.cumsum(U, axis=1) - 1.0
    cond = U - css / np.arange(1, n + 1) > 0
    rho = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(V.shape[0]), rho] / (rho + 1)
    return np.maximum(V - theta[:, None], 0.0)


def _lp_hull_distance(C, c):
    # min t  s.t.  |c - C lam| <= t,  lam in the simplex
    R, k = C.shape
    ones = np.ones((R, 1))
    A_ub = np.block([[C, -ones], [-C, -ones]])
    res = linprog(np.r_[np.zeros(k), 1.0], A_ub=A_ub, b_ub=np.r_[c, -c],
                  A_eq=np.r_[np.ones(k), 0.0][None], b_eq=[1.0],
                  bounds=[(0, None)] * (k + 1), method="highs")
    if res.status != 0:
        raise RuntimeError(f"hull distance LP failed: {res.message}")
    return float(res.fun)


def certified_hull_distance(cloud, subset, iters=300):
    """Largest infinity-norm distance from a cloud point to the hull of ``subset``.

    Unlike :func:`hausdorff_distance`, which compares coordinate extremes
    only, this is the distance to the convex hull itself, so every point of
    the cloud is within it of a convex combination of the selected points.

    Cheap bounds are used to skip most points: the coordinate excess is a
    lower bound and a projected-gradient least-squares fit of simplex weights
    gives an upper bound. An exact LP is solved only for points whose upper
    bound exceeds the running maximum.

    Returns
    -------
    distance : float
    worst : int
        Index of a point attaining the distance.
    n_lp : int
        Number of exact LPs solved.
    """
    cloud = np.atleast_2d(np.asarray(cloud, dtype=float))
    subset = _check_subset(cloud, subset)
    C = cloud[:, subset]
    k = C.shape[1]
    lower = np.maximum(cloud - C.max(axis=1, keepdims=True),
                       C.min(axis=1, keepdims=True) - cloud).max(axis=0, initial=0.0)
    lower = np.maximum(lower, 0.0)
    G = C.T @ C
    B = cloud.T @ C
    step = 1.0 / max(float(np.linalg.eigvalsh(G).max()), 1e-300)
    lam = np.full((cloud.shape[1], k), 1.0 / k)
    for _ in range(iters):
        lam = _project_simplex_rows(lam - step * (lam @ G - B))
    upper = np.abs(cloud - C @ lam.T).max(axis=0, initial=0.0)
    upper = np.maximum(upper, lower)
    upper[subset] = 0.0
    worst = int(np.argmax(lower))
    best = float(lower[worst])
    n_lp = 0
    for i in np.argsort(-upper, kind="stable"):
        if upper[i] <= best:
            break
        d = _lp_hull_distance(C, cloud[:, i])
        n_lp += 1
        if d > best:
            best, worst = d, int(i)
    return best, worst, n_lp


def compute_buffers(eps, partition):
    """Split an error vector into ``(eps_cl, eps_ol, eps_u)``.

    ``eps_cl`` and ``eps_u`` are infinity norms of their blocks; ``eps_ol`` is
    returned elementwise.
    """
    eps = np.asarray(eps, dtype=float)
    r_cl, r_ol, r_u = (int(r) for r in partition)
    if min(r_cl, r_ol, r_u) < 0 or r_cl + r_ol + r_u != eps.size:
        raise ValueError(f"partition {partition} does not match error vector of length {eps.size}")
    cl = eps[:r_cl]
    u = eps[r_cl + r_ol:]
    return (float(cl.max()) if r_cl else 0.0,
            eps[r_cl:r_cl + r_ol].copy(),
            float(u.max()) if r_u else 0.0)


@dataclass
class TruncationResult:
    selected: list
    epsilon_vec: np.ndarray
    partition: tuple
    eps_cl: float
    eps_ol: np.ndarray
    eps_u: float
    d_H: float
    # d_H and block norms after each insertion, index k -> k+1 points selected
    history: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    # "coordinate": buffers from epsilon_vec; "certified": from certified_hull_distance
    buffer_mode: str = "coordinate"
    certified_distance: float | None = None

    @property
    def nhat(self):
        return len(self.selected)

    def curve_rows(self):
        return [{"nhat": k + 1, **h} for k, h in enumerate(self.history)]

    def to_dict(self):
        return {
            "selected": [int(i) for i in self.selected],
            "index_base": 0,
            "partition": [int(r) for r in self.partition],
            "epsilon_vec": [float(v) for v in self.epsilon_vec],
            "eps_cl": self.eps_cl,
            "eps_ol": [float(v) for v in self.eps_ol],
            "eps_u": self.eps_u,
            "d_H": self.d_H,
            "history": self.history,
            "provenance": self.provenance,
            "buffer_mode": self.buffer_mode,
            "certified_distance": self.certified_distance,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(list(data["selected"]), np.asarray(data["epsilon_vec"], dtype=float),
                   tuple(data["partition"]), float(data["eps_cl"]),
                   np.asarray(data["eps_ol"], dtype=float), float(data["eps_u"]),
                   float(data["d_H"]), list(data.get("history", [])),
                   dict(data.get("provenance", {})), data.get("buffer_mode", "coordinate"),
                   data.get("certified_distance"))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save_curve(self, path, comment=None):
        """Error curve, one row per number of selected points."""
        lines = [f"# {comment}"] if comment else []
        lines.append("nhat,d_H,eps_cl,eps_ol_max,eps_u")
        for row in self.curve_rows():
            lines.append(f"{row['nhat']},{row['d_H']!r},{row['eps_cl']!r},"
                         f"{row['eps_ol_max']!r},{row['eps_u']!r}")
        Path(path).write_text("\n".join(lines) + "\n")


def certify(result: TruncationResult, cloud, iters=300):
    """Copy of ``result`` whose buffers all equal the certified hull distance.

    With these buffers every cloud point is within the buffer of the hull of
    the selected points, which is what the full-set containment argument
    needs; the coordinate-wise buffers only bound each coordinate separately.
    """
    D, _, _ = certified_hull_distance(cloud, result.selected, iters=iters)
    r_cl, r_ol, r_u = result.partition
    return replace(result, eps_cl=D if r_cl else 0.0, eps_ol=np.full(r_ol, D),
                   eps_u=D if r_u else 0.0, buffer_mode="certified", certified_distance=D)


def _snapshot(eps, partition):
    cl, ol, u = compute_buffers(eps, partition)
    return {"d_H": float(eps.max()) if eps.size else 0.0, "eps_cl": cl,
            "eps_ol_max": float(ol.max()) if ol.size else 0.0, "eps_u": u}


def greedy_truncate(cloud, max_points=None, target_eps=None, partition=None):
    """Greedy approximate convex hull of the columns of ``cloud``.

    Starts from the point farthest (infinity norm) from the first point,
    which is an extreme point, then repeatedly adds the point that minimises
    the largest extent error. Stops after ``max_points`` points, once the
    error is at most ``target_eps``, or when the error reaches zero. Ties go
    to the lowest index.

    ``partition`` gives the ``(r_cl, r_ol, r_u)`` block sizes used to derive
    the buffers; by default the whole cloud is treated as the open-loop block.
    """
    if (max_points is None) == (target_eps is None):
        raise ValueError("give exactly one of max_points or target_eps")
    if max_points is not None and max_points < 1:
        raise ValueError(f"max_points must be >= 1, got {max_points}")
    if target_eps is not None and target_eps < 0:
        raise ValueError(f"target_eps must be >= 0, got {target_eps}")
    cloud = np.atleast_2d(np.asarray(cloud, dtype=float))
    R, N = cloud.shape
    if N == 0:
        raise ValueError("cloud must hold at least one point")
    if partition is None:
        partition = (0, R, 0)
    cloud_t = np.ascontiguousarray(cloud.T)
    fmax = np.ascontiguousarray(cloud.max(axis=1))
    fmin = np.ascontiguousarray(cloud.min(axis=1))

    first = int(kernels.farthest_from(cloud_t, 0))
    selected = [first]
    taken = np.zeros(N, dtype=np.uint8)
    taken[first] = 1
    smax = cloud_t[first].copy()
    smin = cloud_t[first].copy()
    eps = np.maximum(np.maximum(fmax - smax, smin - fmin), 0.0)
    history = [_snapshot(eps, partition)]

    def done():
        d_H = history[-1]["d_H"]
        if d_H == 0.0 or len(selected) >= N:
            return True
        if max_points is not None:
            return len(selected) >= max_points
        return d_H <= target_eps

    while not done():
        order = np.argsort(-eps, kind="stable").astype(np.intp)
        j, _ = kernels.best_candidate(cloud_t, fmax, fmin, smax, smin, taken, order)
        j = int(j)
        selected.append(j)
        taken[j] = 1
        np.maximum(smax, cloud_t[j], out=smax)
        np.minimum(smin, cloud_t[j], out=smin)
        eps = np.maximum(np.maximum(fmax - smax, smin - fmin), 0.0)
        history.append(_snapshot(eps, partition))

    eps_cl, eps_ol, eps_u = compute_buffers(eps, partition)
    return TruncationResult(selected, eps, tuple(partition), eps_cl, eps_ol, eps_u,
                            history[-1]["d_H"], history)
