"""Stable spline imputation of missing output samples.

The observed outputs are modeled as ``lam * (P + R)`` where ``P`` is the
output kernel (stable spline prior on the input impulse responses pushed
through the observed inputs) and ``R`` the stationary RBF kernel of the
disturbance.  Hyperparameters are tuned on the profiled marginal
likelihood and missing samples are filled with their minimum-variance
linear estimates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np

from .armax import Dataset
from .errors import ConfigurationError, DataError
from .kernels import KernelSpec, impulse_kernel_matrix, rbf_h_continuous, rbf_h_discrete
from .linalg import SPDFactor, jitter_cholesky
from .search import SearchConfig, search_shape

log = logging.getLogger(__name__)

__all__ = [
    "Hyperparameters",
    "ImputationResult",
    "input_windows",
    "output_kernel_matrix",
    "impute",
    "marginal_likelihood",
    "optimize_hyperparameters",
    "stable_spline_imputation",
]


@dataclass(frozen=True)
class Hyperparameters:
    beta: float
    lam: float = 1.0
    enrichment: Optional[Tuple[float, float]] = None
    q: int = 2

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigurationError("beta must be positive")
        if not self.lam > 0:
            raise ConfigurationError("lam must be positive")

    def apply(self, spec: KernelSpec) -> KernelSpec:
        return spec.with_(beta=self.beta, order_q=self.q, enrichment=self.enrichment)

    def as_dict(self) -> dict:
        phi, varphi = self.enrichment if self.enrichment is not None else (None, None)
        return {"beta": self.beta, "lambda": self.lam, "phi": phi, "varphi": varphi, "q": self.q}


@dataclass
class ImputationResult:
    coefficients: np.ndarray
    targets: np.ndarray
    values: np.ndarray
    variances: np.ndarray
    fitted: Hyperparameters
    log_objective: float = float("nan")
    condition_estimate: float = float("nan")
    n_observed: int = 0
    n_missing: int = 0

    @property
    def estimates(self) -> Dict[int, Tuple[float, float]]:
        return {int(t): (float(v), float(s)) for t, v, s in zip(self.targets, self.values, self.variances)}

    def completed(self, dataset: Dataset) -> Dataset:
        """``dataset`` with every target time filled by its estimate."""
        return dataset.completed(self.targets, self.values)

    def report(self) -> dict:
        hp = self.fitted.as_dict()
        return {
            "beta": hp["beta"],
            "lambda": hp["lambda"],
            "phi": hp["phi"],
            "varphi": hp["varphi"],
            "J": self.log_objective,
            "n_observed": self.n_observed,
            "n_missing": self.n_missing,
            "condition_estimate": self.condition_estimate,
        }


# ---------------------------------------------------------------------------
# kernel matrices


def input_windows(inputs, times, length, start=0) -> np.ndarray:
    """Past-input windows ``W[l, i, k-1] = u_l(times[i] - k)`` for ``k = 1..length``.

    ``inputs[:, 0]`` is the sample at instant ``start``; samples before it
    are taken as zero.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    times = np.asarray(times, dtype=np.int64)
    m, N = inputs.shape
    idx = times[:, None] - np.arange(1, length + 1)[None, :] - start
    if idx.size and idx.max() >= N:
        raise ConfigurationError("inputs do not cover the requested times")
    valid = idx >= 0
    safe = np.where(valid, idx, 0)
    return np.ascontiguousarray(np.where(valid[None, :, :], inputs[:, safe], 0.0))


def _output_kernel_from_windows(Wa, Wb, Kimp):
    out = np.zeros((Wa.shape[1], Wb.shape[1]))
    for wa, wb in zip(Wa, Wb):
        out += (wa @ Kimp) @ wb.T
    return out


def output_kernel_matrix(inputs, obs_times, eval_times, spec: KernelSpec, start=0) -> np.ndarray:
    """Output kernel ``P(eval_times, obs_times)``.

    Entry ``(a, b)`` is ``sum_l W_l(t_a) K W_l(t_b)^T`` where ``K`` is the
    (possibly enriched) stable spline Gram over lags ``1..T_f``.
    """
    T = spec.truncation_len
    Wo = input_windows(inputs, obs_times, T, start)
    We = input_windows(inputs, eval_times, T, start)
    P = _output_kernel_from_windows(We, Wo, impulse_kernel_matrix(spec))
    if np.array_equal(np.asarray(obs_times), np.asarray(eval_times)):
        P = (P + P.T) / 2.0
    return P


def _rbf_table(span, spec):
    if spec.continuous:
        raise ConfigurationError("integer lag table requested for a continuous kernel")
    return np.asarray(rbf_h_discrete(np.arange(span + 1), spec), dtype=float)


class _Problem:
    """Kernel assembly for one dataset, reused across hyperparameter values."""

    def __init__(self, dataset: Dataset, spec: KernelSpec):
        if dataset.observed.sum() < 1:
            raise DataError("at least one observed output is required")
        self.dataset = dataset
        self.spec = spec
        self.start = int(dataset.times[0]) if dataset.n else 0
        self.obs_times = dataset.observed_times
        self.y = dataset.outputs[dataset.observed]
        self.has_inputs = dataset.num_inputs > 0 and np.any(dataset.inputs != 0)
        if spec.continuous and dataset.num_inputs > 0:
            raise ConfigurationError(
                "continuous-time imputation supports the pure-disturbance case only"
            )
        if self.has_inputs:
            self.Wo = input_windows(dataset.inputs, self.obs_times, spec.truncation_len, self.start)

    def _R(self, ta, tb, spec):
        lag = np.subtract.outer(np.asarray(ta), np.asarray(tb))
        if spec.continuous:
            return np.asarray(rbf_h_continuous(lag.astype(float), spec), dtype=float)
        lag = np.abs(lag)
        table = _rbf_table(int(lag.max(initial=0)), spec)
        return table[lag]

    def matrix(self, spec: KernelSpec) -> np.ndarray:
        M = self._R(self.obs_times, self.obs_times, spec)
        if self.has_inputs:
            P = _output_kernel_from_windows(self.Wo, self.Wo, impulse_kernel_matrix(spec))
            M = M + (P + P.T) / 2.0
        return M

    def profiled(self, spec: KernelSpec):
        factor = jitter_cholesky(self.matrix(spec))
        n = len(self.y)
        quad = factor.inv_quad(self.y)
        lam = quad / n
        if not lam > 0:
            lam = np.finfo(float).tiny
        J = n + n * np.log(lam) + factor.logdet()
        return J, lam, factor


def _spec_for(hp_shape: Hyperparameters, spec: KernelSpec) -> KernelSpec:
    return hp_shape.apply(spec)


# ---------------------------------------------------------------------------
# public operations


def marginal_likelihood(dataset: Dataset, hp_shape: Hyperparameters, spec: KernelSpec):
    """Profiled objective ``J(theta)`` and the optimal scale ``lam*``.

    ``lam* = y^T M^{-1} y / n`` with ``M = P + R``; the returned
    ``J = n + n log(lam*) + log det M`` equals
    ``y^T (lam M)^{-1} y + log det(lam M)`` at ``lam = lam*``.
    """
    problem = _Problem(dataset, spec)
    J, lam, _ = problem.profiled(_spec_for(hp_shape, spec))
    return float(J), float(lam)


def marginal_likelihood_direct(dataset: Dataset, hp: Hyperparameters, spec: KernelSpec) -> float:
    """Unprofiled objective at an explicit ``lam`` (dense solve, no profiling)."""
    problem = _Problem(dataset, spec)
    M = hp.lam * problem.matrix(_spec_for(hp, spec))
    sign, logdet = np.linalg.slogdet(M)
    if sign <= 0:
        return float("inf")
    return float(problem.y @ np.linalg.solve(M, problem.y) + logdet)


def impute(
    dataset: Dataset,
    targets=None,
    hp: Hyperparameters = None,
    spec: KernelSpec = KernelSpec(),
) -> ImputationResult:
    """Minimum-variance linear estimates and posterior variances at ``targets``.

    ``targets`` defaults to the missing times of ``dataset``.  Estimates do
    not depend on ``hp.lam``; variances are proportional to it.
    """
    if hp is None:
        raise ConfigurationError("impute needs hyperparameters")
    spec_t = _spec_for(hp, spec)
    problem = _Problem(dataset, spec_t)
    targets = dataset.missing_times if targets is None else np.asarray(targets, dtype=np.int64)
    M = problem.matrix(spec_t)
    factor = jitter_cholesky(M)
    c = factor.solve(problem.y)

    A = problem._R(targets, problem.obs_times, spec_t)
    diag = np.full(len(targets), problem._R([0], [0], spec_t)[0, 0])
    if problem.has_inputs and len(targets):
        Kimp = impulse_kernel_matrix(spec_t)
        Wt = input_windows(dataset.inputs, targets, spec_t.truncation_len, problem.start)
        A = A + _output_kernel_from_windows(Wt, problem.Wo, Kimp)
        for w in Wt:
            diag += np.einsum("ij,jk,ik->i", w, Kimp, w)
    values = A @ c
    if len(targets):
        reduction = np.einsum("ij,ji->i", A, factor.solve(A.T))
    else:
        reduction = np.zeros(0)
    variances = np.maximum(hp.lam * (diag - reduction), 0.0)
    return ImputationResult(
        coefficients=c,
        targets=targets,
        values=values,
        variances=variances,
        fitted=hp,
        n_observed=len(problem.y),
        n_missing=int(dataset.missing.sum()),
    )


def optimize_hyperparameters(
    dataset: Dataset, spec: KernelSpec = KernelSpec(), search: SearchConfig = SearchConfig()
) -> Tuple[Hyperparameters, float]:
    """Grid search and simplex refinement of the profiled objective.

    Searches ``beta`` (and the enrichment pair when ``spec.enrichment`` is
    set).  Returns the fitted hyperparameters with ``lam = lam*`` and the
    attained ``J``.
    """
    problem = _Problem(dataset, spec)
    enriched = spec.enrichment is not None

    def objective(beta, enrichment):
        s = spec.with_(beta=beta, enrichment=enrichment)
        return problem.profiled(s)[0]

    res = search_shape(objective, enriched, search)
    J, lam, _ = problem.profiled(spec.with_(beta=res.beta, enrichment=res.enrichment))
    log.debug("fitted beta=%.4g enrichment=%s J=%.6g after %d evaluations",
              res.beta, res.enrichment, J, res.n_evals)
    hp = Hyperparameters(beta=res.beta, lam=lam, enrichment=res.enrichment, q=spec.order_q)
    return hp, float(J)


def stable_spline_imputation(
    dataset: Dataset, spec: KernelSpec = KernelSpec(), search: SearchConfig = SearchConfig()
) -> ImputationResult:
    """Fit hyperparameters, then estimate every missing output."""
    hp, J = optimize_hyperparameters(dataset, spec, search)
    result = impute(dataset, None, hp, spec)
    result.log_objective = J
    problem = _Problem(dataset, hp.apply(spec))
    result.condition_estimate = float(np.linalg.cond(problem.matrix(hp.apply(spec))))
    return result
