"""Cholesky factorization with escalating diagonal jitter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .errors import IllConditionedKernelError

JITTER_LEVELS = (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8)


@dataclass
class SPDFactor:
    chol: np.ndarray  # lower triangular
    jitter: float  # absolute amount added to the diagonal

    def solve(self, b):
        return la.cho_solve((self.chol, True), b, check_finite=False)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def inv_quad(self, b) -> float:
        """``b^T M^{-1} b`` for a vector ``b``."""
        z = la.solve_triangular(self.chol, b, lower=True, check_finite=False)
        return float(z @ z)


def jitter_cholesky(M: np.ndarray) -> SPDFactor:
    """Factor a symmetric PSD matrix, adding ``delta * mean(diag) * I`` on failure.

    ``delta`` escalates from 1e-12 to 1e-8.
    """
    n = M.shape[0]
    if n == 0:
        return SPDFactor(np.zeros((0, 0)), 0.0)
    if not np.all(np.isfinite(M)):
        raise IllConditionedKernelError("kernel matrix has non-finite entries")
    scale = float(np.trace(M)) / n
    for delta in JITTER_LEVELS:
        jit = delta * scale
        try:
            L = la.cholesky(M + jit * np.eye(n) if jit else M, lower=True, check_finite=False)
        except la.LinAlgError:
            continue
        if np.all(np.diag(L) > 0):
            return SPDFactor(L, jit)
    try:
        cond = float(np.linalg.cond(M))
    except np.linalg.LinAlgError:
        cond = float("inf")
    raise IllConditionedKernelError(
        f"Cholesky failed even with jitter {JITTER_LEVELS[-1]:g} * mean diagonal "
        f"(condition estimate {cond:.3g})",
        condition_estimate=cond,
    )
