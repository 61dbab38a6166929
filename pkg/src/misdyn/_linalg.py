"""Cholesky factorization with a fixed jitter escalation ladder."""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import IllConditionedError

JITTER_START = 1e-12
JITTER_STOP = 1e-4
JITTER_FACTOR = 10.0


def _try_cholesky(M):
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return None
    piv = np.diag(L)
    # A numerically singular matrix can slip through with a near-zero pivot.
    if not np.all(np.isfinite(L)) or piv.min() ** 2 <= M.shape[0] * np.finfo(float).eps * np.abs(np.diag(M)).max():
        return None
    return L


def jittered_cholesky(M: np.ndarray, scale: float = 1.0):
    """Lower Cholesky factor of ``M + jitter * I``.

    The first attempt uses no jitter; on failure jitter starts at
    ``1e-12 * scale`` and grows tenfold up to ``1e-4 * scale``.

    Returns
    -------
    L : ndarray
    jitter : float
        The jitter that was added (0.0 if none).
    """
    M = np.asarray(M, dtype=float)
    L = _try_cholesky(M)
    if L is not None:
        return L, 0.0
    jitter = JITTER_START * scale
    ident = np.eye(M.shape[0])
    while jitter <= JITTER_STOP * scale * (1 + 1e-9):
        L = _try_cholesky(M + jitter * ident)
        if L is not None:
            return L, jitter
        jitter *= JITTER_FACTOR
    raise IllConditionedError(
        f"Cholesky factorization failed; final jitter {jitter / JITTER_FACTOR:.3g}", jitter=jitter / JITTER_FACTOR)


def chol_logdet(L: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def chol_solve(L: np.ndarray, B: np.ndarray) -> np.ndarray:
    return cho_solve((L, True), B, check_finite=False)


def forward(L: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``L X = B`` for lower-triangular ``L``."""
    return solve_triangular(L, B, lower=True, check_finite=False)
