"""Disturbance scenario sets: sizing, sampling and persistence.

Scenario file layout (``.scn``), all integers little-endian:

=========  ==============================================================
bytes      content
=========  ==============================================================
0..7       magic ``b"SCNSET01"``
8..11      uint32 ``H``, length of the JSON header in bytes
12..12+H   UTF-8 JSON header, keys sorted, no whitespace. Keys: ``beta``,
           ``delta``, ``dtype`` (``"<f8"``), ``n_w``, ``N``, ``order``
           (``"F"``), ``p``, ``provenance``, ``sampler_id``, ``seed``,
           ``shape`` (``[p*n_w, N]``)
rest       ``p*n_w*N`` float64 values, column-major, so scenario ``i``
           occupies one contiguous run of ``p*n_w`` doubles
=========  ==============================================================

The header never carries timestamps, so identical inputs give identical
bytes.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SCNSET01"
SAMPLER_KINDS = ("gaussian-diagonal", "gaussian-full", "uniform-box", "user-file")


def required_sample_count(delta: float, beta: float, n_theta: int) -> int:
    """Number of scenarios sufficient for confidence ``1 - delta`` at risk ``beta``.

    >>> required_sample_count(0.1, 0.01, 1)
    155
    """
    for name, val in (("delta", delta), ("beta", beta)):
        if not (0.0 < val < 1.0):
            raise ValueError(f"{name} must lie in (0, 1), got {val}")
    if int(n_theta) != n_theta or n_theta < 1:
        raise ValueError(f"n_theta must be a positive integer, got {n_theta}")
    bound = (2.0 / delta) * math.log(1.0 / beta) + 2.0 * n_theta \
        + (2.0 * n_theta / delta) * math.log(2.0 / delta)
    return int(math.ceil(bound))


def count_decision_vars(dims, include_epigraph=False, problem="truncated"):
    """Number of scalar decision variables of the scenario program.

    ``problem="truncated"`` counts the feedback gain, the nominal input and
    one gain-norm bound per step; ``problem="scenario"`` drops the norm
    bounds. Absolute-value auxiliaries of the norm encoding are not counted.
    """
    p, nu, nw = dims.p, dims.nu, dims.nw
    n = (p * (p - 1) // 2) * nu * nw + p * nu
    if problem == "truncated":
        n += p
    elif problem != "scenario":
        raise ValueError(f"unknown problem kind {problem!r}")
    if include_epigraph:
        n += 1
    return n


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass(frozen=True)
class SamplerSpec:
    """Distribution of a single disturbance ``w_t`` (or of the stacked vector).

    kind ``gaussian-diagonal`` uses ``variance`` (length ``n_w``);
    ``gaussian-full`` uses ``covariance``, either ``n_w x n_w`` (independent
    steps) or ``p*n_w`` square (correlated over the horizon);
    ``uniform-box`` uses ``lower``/``upper``; ``user-file`` resamples the
    rows of ``path`` (``.npy``, ``.csv`` or ``.scn``) with replacement.
    """

    kind: str
    variance: tuple | None = None
    covariance: tuple | None = None
    lower: tuple | None = None
    upper: tuple | None = None
    path: str | None = None

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}; expected one of {SAMPLER_KINDS}")
        if self.kind == "gaussian-diagonal":
            if self.variance is None:
                raise ValueError("gaussian-diagonal sampler needs 'variance'")
            var = np.asarray(self.variance, dtype=float)
            if var.ndim != 1 or np.any(var < 0) or not np.all(np.isfinite(var)):
                raise ValueError("variance must be a vector of nonnegative finite numbers")
        elif self.kind == "gaussian-full":
            if self.covariance is None:
                raise ValueError("gaussian-full sampler needs 'covariance'")
            self._cov_factor()
        elif self.kind == "uniform-box":
            if self.lower is None or self.upper is None:
                raise ValueError("uniform-box sampler needs 'lower' and 'upper'")
            lo = np.asarray(self.lower, dtype=float)
            hi = np.asarray(self.upper, dtype=float)
            if lo.shape != hi.shape or lo.ndim != 1 or np.any(hi < lo):
                raise ValueError("uniform-box bounds must be equal-length vectors with lower <= upper")
        elif self.path is None:
            raise ValueError("user-file sampler needs 'path'")

    def _cov_factor(self):
        C = np.asarray(self.covariance, dtype=float)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise ValueError("covariance must be a square matrix")
        if not np.allclose(C, C.T, rtol=0, atol=1e-12 * max(1.0, np.abs(C).max())):
            raise ValueError("covariance must be symmetric")
        lam, Q = np.linalg.eigh(C)
        if lam.min() < -1e-10 * max(1.0, lam.max()):
            raise ValueError("covariance must be positive semidefinite")
        return Q * np.sqrt(np.clip(lam, 0.0, None))

    def params(self):
        if self.kind == "gaussian-diagonal":
            return {"variance": [float(v) for v in self.variance]}
        if self.kind == "gaussian-full":
            return {"covariance": np.asarray(self.covariance, dtype=float).tolist()}
        if self.kind == "uniform-box":
            return {"lower": [float(v) for v in self.lower],
                    "upper": [float(v) for v in self.upper]}
        return {"path": str(self.path), "sha256": _file_digest(self.path)}

    @property
    def sampler_id(self):
        digest = hashlib.sha256(_canonical(self.params()).encode()).hexdigest()[:16]
        return f"{self.kind}:{digest}"

    def n_w(self):
        """Per-step disturbance size implied by the parameters, if any.

        A ``gaussian-full`` covariance is read as per-step here; pass ``nw``
        explicitly to :func:`sample_scenarios` for a stacked covariance.
        """
        if self.kind == "gaussian-diagonal":
            return len(self.variance)
        if self.kind == "uniform-box":
            return len(self.lower)
        if self.kind == "gaussian-full":
            return len(self.covariance)
        return None

    def draw(self, rng, N, p, nw=None):
        """Return a ``(p*n_w, N)`` matrix of stacked disturbance samples."""
        if self.kind == "gaussian-diagonal":
            std = np.sqrt(np.asarray(self.variance, dtype=float))
            z = rng.standard_normal((N, p, std.size))
            return (z * std).reshape(N, -1).T
        if self.kind == "gaussian-full":
            L = self._cov_factor()
            size = L.shape[0]
            if nw is not None and size == p * nw and size != nw:
                z = rng.standard_normal((N, size))
                return (z @ L.T).T
            z = rng.standard_normal((N, p, size))
            return (z @ L.T).reshape(N, -1).T
        if self.kind == "uniform-box":
            lo = np.asarray(self.lower, dtype=float)
            hi = np.asarray(self.upper, dtype=float)
            z = rng.random((N, p, lo.size))
            return (lo + z * (hi - lo)).reshape(N, -1).T
        return self._draw_file(rng, N, p, nw)

    def _draw_file(self, rng, N, p, nw):
        rows = load_sample_rows(self.path)
        M, width = rows.shape
        if nw is not None and width == p * nw and width != nw:
            idx = rng.integers(0, M, size=N)
            return rows[idx].T
        if nw is not None and width != nw:
            raise ValueError(
                f"{self.path}: rows have width {width}, expected n_w={nw} or p*n_w={p * nw}")
        idx = rng.integers(0, M, size=(N, p))
        return rows[idx].reshape(N, -1).T


def load_sample_rows(path):
    """Rows of raw disturbance samples from ``.npy``, ``.csv`` or ``.scn``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"sample file not found: {path}")
    if path.suffix == ".npy":
        rows = np.load(path)
    elif path.suffix == ".scn":
        rows = load_scenarios(path).W.T
    else:
        rows = np.loadtxt(path, delimiter=",", ndmin=2)
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[0] == 0:
        raise ValueError(f"{path}: no samples")
    return rows


@dataclass(frozen=True)
class ScenarioSet:
    """``N`` stacked disturbance scenarios, column ``i`` is ``W^(i)``."""

    W: np.ndarray
    seed: int
    sampler_id: str
    p: int
    nw: int
    delta: float | None = None
    beta: float | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        W = np.asfortranarray(np.asarray(self.W, dtype=np.float64))
        if W.ndim != 2 or W.shape[0] != self.p * self.nw:
            raise ValueError(f"W must have shape (p*n_w, N) = ({self.p * self.nw}, N), got {W.shape}")
        if W.shape[1] < 1:
            raise ValueError("scenario set must hold at least one scenario")
        for name in ("delta", "beta"):
            val = getattr(self, name)
            if val is not None and not (0.0 < val < 1.0):
                raise ValueError(f"{name} must lie in (0, 1), got {val}")
        W.setflags(write=False)
        object.__setattr__(self, "W", W)

    @property
    def N(self):
        return self.W.shape[1]

    def subset(self, indices):
        return self.W[:, np.asarray(indices, dtype=int)]

    def header(self):
        return {
            "beta": self.beta,
            "delta": self.delta,
            "dtype": "<f8",
            "n_w": self.nw,
            "N": self.N,
            "order": "F",
            "p": self.p,
            "provenance": self.provenance,
            "sampler_id": self.sampler_id,
            "seed": self.seed,
            "shape": [self.p * self.nw, self.N],
        }


def sample_scenarios(spec: SamplerSpec, N: int, p: int, seed: int, *,
                     nw=None, delta=None, beta=None, provenance=None) -> ScenarioSet:
    """Draw ``N`` independent stacked disturbances over horizon ``p``.

    Uses a PCG64 stream seeded with ``seed``; the same arguments always give
    bit-identical samples on a given numpy release.
    """
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N}")
    rng = np.random.Generator(np.random.PCG64(seed))
    if nw is None:
        nw = spec.n_w()
        if nw is None:
            raise ValueError("nw must be given for a user-file sampler")
    W = spec.draw(rng, int(N), p, nw=nw)
    return ScenarioSet(W, int(seed), spec.sampler_id, p, nw, delta, beta, dict(provenance or {}))


def scenario_bytes(sset: ScenarioSet) -> bytes:
    header = _canonical(sset.header()).encode("utf-8")
    payload = np.asarray(sset.W, dtype="<f8").tobytes(order="F")
    return MAGIC + struct.pack("<I", len(header)) + header + payload


def save_scenarios(path, sset: ScenarioSet):
    Path(path).write_bytes(scenario_bytes(sset))


def load_scenarios(path) -> ScenarioSet:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a scenario file (bad magic)")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    rows, cols = header["shape"]
    payload = np.frombuffer(raw, dtype="<f8", offset=12 + hlen)
    if payload.size != rows * cols:
        raise ValueError(f"{path}: payload holds {payload.size} values, header says {rows * cols}")
    W = payload.reshape((rows, cols), order="F").astype(np.float64)
    return ScenarioSet(W, header["seed"], header["sampler_id"], header["p"], header["n_w"],
                       header["delta"], header["beta"], header.get("provenance") or {})


def export_csv(path, sset: ScenarioSet, comment=None):
    """One scenario per row; columns ``w<t>_<k>`` for step ``t`` and component ``k``.

    ``comment`` is written as a leading ``#`` line.
    """
    names = ",".join(f"w{t}_{k}" for t in range(sset.p) for k in range(sset.nw))
    header = f"# {comment}\n{names}" if comment else names
    np.savetxt(path, sset.W.T, delimiter=",", header=header, comments="", fmt="%.17g")
