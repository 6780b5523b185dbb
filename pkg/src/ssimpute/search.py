"""Grid search plus bounded Nelder-Mead refinement over kernel shape parameters.

The enrichment pair is searched through its reflection coefficients
``(k1, k2)``: ``varphi = k2`` and ``phi = k1 (1 + k2)``.  The stability
triangle is exactly the open square ``|k1| < 1, |k2| < 1``, so box bounds
keep every evaluated point stable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import optimize

from .errors import ConfigurationError, NumericalError, OptimizationFailureError


@dataclass(frozen=True)
class SearchConfig:
    beta_bounds: Tuple[float, float] = (0.01, 2.0)
    n_beta: int = 25
    enrich_grid: int = 7
    enrich_margin: float = 0.02
    max_evals: int = 200
    xtol: float = 1e-4
    refine: bool = True

    def __post_init__(self):
        lo, hi = self.beta_bounds
        if not 0 < lo < hi:
            raise ConfigurationError("beta_bounds must satisfy 0 < lo < hi")
        if self.n_beta < 1 or self.enrich_grid < 1:
            raise ConfigurationError("grid sizes must be >= 1")
        if not 0 < self.enrich_margin < 1:
            raise ConfigurationError("enrich_margin must lie in (0, 1)")


def reflection_to_enrichment(k1: float, k2: float) -> Tuple[float, float]:
    return k1 * (1.0 + k2), k2


def enrichment_to_reflection(phi: float, varphi: float) -> Tuple[float, float]:
    return phi / (1.0 + varphi), varphi


@dataclass
class SearchResult:
    beta: float
    enrichment: Optional[Tuple[float, float]]
    value: float
    grid_value: float
    n_evals: int


def search_shape(
    objective: Callable[[float, Optional[Tuple[float, float]]], float],
    enriched: bool,
    search: SearchConfig,
) -> SearchResult:
    """Minimize ``objective(beta, enrichment)``.

    Points where the objective raises a :class:`NumericalError` count as
    +inf.  The refined point is only accepted if it improves on the best
    grid value.
    """
    lo, hi = search.beta_bounds
    kmax = 1.0 - search.enrich_margin
    n_evals = 0

    def f(x):
        nonlocal n_evals
        n_evals += 1
        beta = math.exp(x[0])
        enr = reflection_to_enrichment(x[1], x[2]) if enriched else None
        try:
            v = objective(beta, enr)
        except NumericalError:
            return math.inf
        return v if np.isfinite(v) else math.inf

    log_betas = np.linspace(math.log(lo), math.log(hi), search.n_beta)
    ks = np.linspace(-kmax, kmax, search.enrich_grid) if enriched else np.zeros(1)
    best_x, best_v = None, math.inf
    for lb in log_betas:
        for k1 in ks:
            for k2 in ks if enriched else ks[:1]:
                x = np.array([lb, k1, k2]) if enriched else np.array([lb])
                v = f(x)
                if v < best_v:
                    best_x, best_v = x, v
    if best_x is None:
        raise OptimizationFailureError("objective failed at every grid point")
    grid_v = best_v

    if search.refine and search.max_evals > 0:
        bounds = [(math.log(lo), math.log(hi))] + ([(-kmax, kmax)] * 2 if enriched else [])
        steps = [
            (log_betas[1] - log_betas[0]) if len(log_betas) > 1 else 0.1
        ] + ([(ks[1] - ks[0]) if len(ks) > 1 else 0.1] * 2 if enriched else [])
        simplex = [best_x]
        for i, st in enumerate(steps):
            v = best_x.copy()
            # step toward the interior so the vertex stays within bounds
            mid = 0.5 * (bounds[i][0] + bounds[i][1])
            v[i] += 0.5 * st if v[i] <= mid else -0.5 * st
            simplex.append(v)
        res = optimize.minimize(
            f,
            best_x,
            method="Nelder-Mead",
            bounds=bounds,
            options=dict(
                maxfev=search.max_evals,
                xatol=search.xtol,
                fatol=1e-10,
                initial_simplex=np.array(simplex),
            ),
        )
        if res.fun < best_v:
            best_x, best_v = np.asarray(res.x), float(res.fun)

    beta = math.exp(best_x[0])
    enr = reflection_to_enrichment(best_x[1], best_x[2]) if enriched else None
    return SearchResult(beta, enr, best_v, grid_v, n_evals)
