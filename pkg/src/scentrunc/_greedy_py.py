"""Pure numpy implementation of the greedy scoring step.

Used when the compiled ``_greedy`` extension is unavailable or when
``SCENTRUNC_PURE=1`` is set. Must return exactly what the compiled kernel
returns: same scores (bitwise) and the same lowest-index tie-break.
"""
import numpy as np


def _gap(block, fmax, fmin, smax, smin):
    # block: (candidates, rows); remaining extent error per coordinate
    up = fmax - np.maximum(smax, block)
    down = np.minimum(smin, block) - fmin
    return np.maximum(up, down)


def best_candidate(cloud_t, fmax, fmin, smax, smin, taken, order):
    """Pick the untaken point whose insertion minimises the largest extent error.

    Rows are visited in ``order`` (current error, largest first) in growing
    blocks. A candidate is settled once its running maximum reaches the
    error of the next unvisited row, since later rows cannot exceed that.
    Candidates that already exceed the best settled score are dropped.

    Returns ``(index, score)``; ``(-1, inf)`` if every candidate is taken.
    """
    active = np.flatnonzero(~taken.astype(bool))
    if active.size == 0:
        return -1, np.inf
    eps = np.maximum(fmax - smax, smin - fmin)
    R = order.size
    # tail[i]: largest current error among rows order[i:]
    tail = np.maximum.accumulate(eps[order][::-1])[::-1]
    lower = np.zeros(active.size)
    best, best_idx = np.inf, -1
    start, width = 0, 8
    while active.size and start < R:
        rows = order[start:start + width]
        start += rows.size
        width *= 2
        thresh = tail[start] if start < R else 0.0
        block = cloud_t[np.ix_(active, rows)]
        lower = np.maximum(lower, _gap(block, fmax[rows], fmin[rows],
                                       smax[rows], smin[rows]).max(axis=1))
        settled = lower >= thresh
        if settled.any():
            s_scores = lower[settled]
            s_idx = active[settled]
            k = np.argmin(s_scores)  # first minimum is the lowest index
            if s_scores[k] < best or (s_scores[k] == best and s_idx[k] < best_idx):
                best, best_idx = float(s_scores[k]), int(s_idx[k])
        keep = ~settled & ((lower < best) | ((lower == best) & (active < best_idx)))
        active = active[keep]
        lower = lower[keep]
    return best_idx, best


def farthest_from(cloud_t, ref):
    """Index of the point farthest from point ``ref`` in the infinity norm."""
    dist = np.abs(cloud_t - cloud_t[ref]).max(axis=1)
    return int(np.argmax(dist))
