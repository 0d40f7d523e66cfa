"""Linear plant, horizon-stacked prediction matrices and the reordering lift."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse


class DimensionError(ValueError):
    """Raised when matrix or vector shapes are inconsistent."""


def _as_matrix(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise DimensionError(f"{name} must be a 2-D matrix, got shape {M.shape}")
    return M


@dataclass(frozen=True)
class LinearSystem:
    """Discrete-time LTI plant ``x+ = A x + Bu u + Bw w`` over a horizon ``p``."""

    A: np.ndarray
    Bu: np.ndarray
    Bw: np.ndarray
    p: int

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        Bu = _as_matrix(self.Bu, "Bu")
        Bw = _as_matrix(self.Bw, "Bw")
        nx = A.shape[0]
        if A.shape != (nx, nx):
            raise DimensionError(f"A must be square, got {A.shape}")
        if Bu.shape[0] != nx or Bw.shape[0] != nx:
            raise DimensionError(
                f"Bu {Bu.shape} and Bw {Bw.shape} must have {nx} rows to match A")
        if nx < 1 or Bu.shape[1] < 1 or Bw.shape[1] < 1:
            raise DimensionError("n_x, n_u and n_w must all be >= 1")
        if int(self.p) != self.p or self.p < 1:
            raise DimensionError(f"horizon p must be a positive integer, got {self.p}")
        for name, M in (("A", A), ("Bu", Bu), ("Bw", Bw)):
            M.setflags(write=False)
            object.__setattr__(self, name, M)
        object.__setattr__(self, "p", int(self.p))

    @property
    def nx(self):
        return self.A.shape[0]

    @property
    def nu(self):
        return self.Bu.shape[1]

    @property
    def nw(self):
        return self.Bw.shape[1]

    def step(self, x, u, w):
        return self.A @ x + self.Bu @ u + self.Bw @ w


@dataclass(frozen=True)
class Dims:
    nx: int
    nu: int
    nw: int
    p: int


@dataclass(frozen=True)
class StackedSystem:
    """Prediction matrices for ``X = Gx x0 + Gu U + Gw W``.

    ``X`` stacks ``x_1..x_p`` while ``U`` and ``W`` stack ``u_0..u_{p-1}`` and
    ``w_0..w_{p-1}``.
    """

    Gx: np.ndarray
    Gu: np.ndarray
    Gw: np.ndarray
    dims: Dims

    def propagate(self, x0, U, W):
        return propagate(self, x0, U, W)


def _block_toeplitz(powers, B, p):
    nx, nb = B.shape
    G = np.zeros((p * nx, p * nb))
    blocks = [P @ B for P in powers[:p]]
    for i in range(p):
        for j in range(i + 1):
            G[i * nx:(i + 1) * nx, j * nb:(j + 1) * nb] = blocks[i - j]
    return G


def stack_system(sys: LinearSystem) -> StackedSystem:
    """Build the horizon-stacked prediction matrices of ``sys``.

    Powers of ``A`` are formed by repeated multiplication so that the
    block-Toeplitz structure is reproduced exactly.
    """
    if not isinstance(sys, LinearSystem):
        raise DimensionError("stack_system expects a LinearSystem")
    nx, p = sys.nx, sys.p
    # powers[k] = A^k, k = 0..p
    powers = [np.eye(nx)]
    for _ in range(p):
        powers.append(powers[-1] @ sys.A)
    Gx = np.vstack(powers[1:])
    Gu = _block_toeplitz(powers, sys.Bu, p)
    Gw = _block_toeplitz(powers, sys.Bw, p)
    for M in (Gx, Gu, Gw):
        M.setflags(write=False)
    return StackedSystem(Gx, Gu, Gw, Dims(nx, sys.nu, sys.nw, p))


def propagate(stacked: StackedSystem, x0, U, W):
    """Stacked state trajectory ``X`` for initial state ``x0``.

    ``U`` and ``W`` may be single stacked vectors or matrices holding one
    stacked vector per column.
    """
    d = stacked.dims
    x0 = np.asarray(x0, dtype=float)
    U = np.asarray(U, dtype=float)
    W = np.asarray(W, dtype=float)
    if x0.shape != (d.nx,):
        raise DimensionError(f"x0 must have length {d.nx}, got {x0.shape}")
    if U.shape[0] != d.p * d.nu:
        raise DimensionError(f"U must have {d.p * d.nu} rows, got {U.shape[0]}")
    if W.shape[0] != d.p * d.nw:
        raise DimensionError(f"W must have {d.p * d.nw} rows, got {W.shape[0]}")
    free = stacked.Gx @ x0
    if U.ndim == 2 or W.ndim == 2:
        free = free[:, None]
    return free + stacked.Gu @ U + stacked.Gw @ W


def lift_left(Amat, m, sparse_output=False):
    """Lifted left factor: the stack of ``I_m (x) a_l`` over columns ``a_l``.

    Row ``(l*m + j)*n + i`` of the result equals ``Amat[i, l] * e_j``.
    """
    Amat = _as_matrix(Amat, "Amat")
    n, z = Amat.shape
    if sparse_output:
        eye = sparse.identity(m, format="csr")
        blocks = [sparse.kron(eye, sparse.csr_matrix(Amat[:, [l]])) for l in range(z)]
        return sparse.vstack(blocks, format="csr")
    eye = np.eye(m)
    return np.vstack([np.kron(eye, Amat[:, [l]]) for l in range(z)])


def lift_right(Bmat, n, sparse_output=False):
    """Lifted right factor ``[b_1 ... b_z] (x) I_n`` built from rows of ``Bmat``."""
    Bmat = _as_matrix(Bmat, "Bmat")
    row = Bmat.reshape(1, -1)
    if sparse_output:
        return sparse.kron(sparse.csr_matrix(row), sparse.identity(n), format="csr")
    return np.kron(row, np.eye(n))


def lift_reorder(Amat, Bmat, sparse_output=False):
    """Reorder ``Amat @ Bmat`` as ``Bbar @ Abar``.

    Parameters
    ----------
    Amat : (n, z) array
    Bmat : (z, m) array
    sparse_output : bool
        Return CSR matrices instead of dense arrays. The lifted sizes grow as
        ``z*m*n`` so this matters for long horizons.

    Returns
    -------
    Bbar : (n, z*m*n) array
        Depends only on the entries of ``Bmat``.
    Abar : (z*m*n, m) array
        Depends only on the entries of ``Amat``.
    """
    Amat = _as_matrix(Amat, "Amat")
    Bmat = _as_matrix(Bmat, "Bmat")
    if Amat.shape[1] != Bmat.shape[0]:
        raise DimensionError(
            f"inner dimensions differ: {Amat.shape} @ {Bmat.shape}")
    n = Amat.shape[0]
    m = Bmat.shape[1]
    return (lift_right(Bmat, n, sparse_output),
            lift_left(Amat, m, sparse_output))
