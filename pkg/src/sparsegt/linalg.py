"""Small shared linear-algebra helpers (power iteration, normalized adjacency)."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import ContractError
from . import rngutil


def spectral_norm(m, tol: float = 1e-6, max_iter: int = 5000, seed: int = 0) -> float:
    """Largest singular value of ``m`` by power iteration on ``m.T @ m``.

    Accepts a dense array or any scipy sparse matrix.  Iterates until the
    eigenvalue estimate is stable to ``tol`` relative, which is plenty for
    the error-norm ratios reported by the sampling checks.
    """
    n = m.shape[1]
    if n == 0:
        return 0.0
    rng = rngutil.derive(seed, 0xB0)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    prev = 0.0
    for _ in range(max_iter):
        y = m @ x
        z = m.T @ y
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return 0.0
        x = z / nz
        est = float(np.sqrt(nz))
        if abs(est - prev) <= tol * max(est, 1e-30):
            return est
        prev = est
    return prev


def normalized_adjacency(adj: sp.spmatrix) -> sp.csr_matrix:
    """D^{-1/2} A D^{-1/2} for a symmetric adjacency with no zero-degree rows."""
    adj = sp.csr_matrix(adj, dtype=np.float64)
    deg = np.asarray(adj.sum(axis=1)).ravel()
    if np.any(deg <= 0):
        raise ContractError("normalized adjacency undefined for isolated nodes")
    dinv = sp.diags(1.0 / np.sqrt(deg))
    return sp.csr_matrix(dinv @ adj @ dinv)
