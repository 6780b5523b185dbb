"""Kernel-regularized one-step predictor estimation, k-step prediction and COD metrics.

Every predictor impulse response (one per input plus one on past outputs)
gets the prior ``eta * sigma2 * K`` with ``K`` the enriched stable spline
Gram over lags ``1..T_g``; the residual is white with variance ``sigma2``.
``sigma2`` is profiled in closed form and ``(beta, eta, phi, varphi)`` are
tuned on the marginal likelihood.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.linalg as la
from scipy import optimize

from .armax import ArmaxModel, Dataset, true_predictor_responses
from .errors import ConfigurationError, DataError, InsufficientDataError, NumericalError, UndefinedCODError
from .imputer import Hyperparameters, input_windows
from .kernels import KernelSpec, impulse_kernel_matrix
from .linalg import jitter_cholesky
from .search import SearchConfig, enrichment_to_reflection, reflection_to_enrichment, search_shape

log = logging.getLogger(__name__)

__all__ = [
    "PredictorModel",
    "regressors",
    "predictor_coefficients",
    "fit_predictor",
    "predictor_from_armax",
    "kstep_predict",
    "cod",
    "cod_miss",
    "cod_k",
]

DEFAULT_PREDICTOR_SPEC = KernelSpec(order_q=2, beta=0.5, enrichment=(0.0, 0.0), truncation_len=100)
MIN_ROWS = 10
LOG_ETA_BOUNDS = (-25.0, 25.0)


@dataclass
class PredictorModel:
    """One-step predictor ``y(t) = sum_l (g_l * u_l)(t) + (g_y * y)(t)``.

    ``g_inputs[l, j-1]`` and ``g_output[j-1]`` hold the coefficient at lag ``j``.
    """

    g_inputs: np.ndarray
    g_output: np.ndarray
    hyperparameters: Optional[Hyperparameters] = None
    noise_variance: float = float("nan")
    log_objective: float = float("nan")

    def __post_init__(self):
        self.g_inputs = np.atleast_2d(np.asarray(self.g_inputs, dtype=float))
        if self.g_inputs.size == 0:
            self.g_inputs = np.zeros((0, len(self.g_output)))
        self.g_output = np.asarray(self.g_output, dtype=float)
        if not (np.all(np.isfinite(self.g_inputs)) and np.all(np.isfinite(self.g_output))):
            raise NumericalError("predictor coefficients must be finite")

    @property
    def num_lags(self) -> int:
        return len(self.g_output)

    @property
    def num_inputs(self) -> int:
        return self.g_inputs.shape[0]


def regressors(dataset: Dataset, lags: int) -> np.ndarray:
    """Regressor windows, shape ``(num_inputs + 1, n, lags)``; last channel is past y.

    Samples before the first record instant enter as zero.
    """
    signals = np.vstack([dataset.inputs, dataset.outputs[None, :]])
    start = int(dataset.times[0])
    return input_windows(signals, dataset.times, lags, start)


def _row_scale(n, imputed_mask, imputed_weight):
    if imputed_mask is None or imputed_weight == 1.0:
        return None
    if not imputed_weight > 0:
        raise ConfigurationError("imputed_weight must be positive")
    w = np.where(np.asarray(imputed_mask, dtype=bool), imputed_weight, 1.0)
    return np.sqrt(w)


class _Regression:
    def __init__(self, dataset, lags, imputed_mask=None, imputed_weight=1.0):
        if np.any(dataset.missing):
            raise DataError("fit_predictor needs a complete record; impute the missing outputs first")
        if dataset.n < MIN_ROWS:
            raise InsufficientDataError(f"need at least {MIN_ROWS} rows, got {dataset.n}")
        self.lags = lags
        self.phi = regressors(dataset, lags)
        self.y = dataset.outputs.copy()
        scale = _row_scale(dataset.n, imputed_mask, imputed_weight)
        # residual covariance diag(1/w): rescale rows so it becomes the identity
        if scale is not None:
            self.phi = self.phi * scale[None, :, None]
            self.y = self.y * scale
        self.n = len(self.y)

    def gram(self, spec):
        K = impulse_kernel_matrix(spec.with_(truncation_len=self.lags))
        G = np.zeros((self.n, self.n))
        for ph in self.phi:
            G += (ph @ K) @ ph.T
        return (G + G.T) / 2.0, K

    def profile_eta(self, spec):
        """Minimize over ``eta`` exactly via an eigendecomposition of the Gram."""
        G, _ = self.gram(spec)
        s, V = np.linalg.eigh(G)
        s = np.clip(s, 0.0, None)
        z2 = (V.T @ self.y) ** 2
        n = self.n

        def J(log_eta):
            d = 1.0 + math.exp(log_eta) * s
            return n + n * math.log(max(np.sum(z2 / d) / n, 1e-300)) + float(np.sum(np.log(d)))

        res = optimize.minimize_scalar(J, bounds=LOG_ETA_BOUNDS, method="bounded",
                                       options=dict(xatol=1e-6))
        return float(res.fun), float(res.x)

    def objective(self, spec, log_eta):
        G, _ = self.gram(spec)
        factor = jitter_cholesky(np.eye(self.n) + math.exp(log_eta) * G)
        sigma2 = factor.inv_quad(self.y) / self.n
        return self.n + self.n * math.log(max(sigma2, 1e-300)) + factor.logdet()

    def solve(self, spec, eta):
        G, K = self.gram(spec)
        factor = jitter_cholesky(np.eye(self.n) + eta * G)
        alpha = factor.solve(self.y)
        sigma2 = float(self.y @ alpha) / self.n
        coeffs = np.array([eta * (K @ (ph.T @ alpha)) for ph in self.phi])
        J = self.n + self.n * math.log(max(sigma2, 1e-300)) + factor.logdet()
        return coeffs, sigma2, J


def predictor_coefficients(
    dataset: Dataset,
    hp: Hyperparameters,
    spec: KernelSpec = DEFAULT_PREDICTOR_SPEC,
    lags: Optional[int] = None,
) -> PredictorModel:
    """Regularized least-squares predictor at fixed hyperparameters.

    ``hp.lam`` is the prior scale relative to a unit-variance residual.
    """
    lags = spec.truncation_len if lags is None else lags
    reg = _Regression(dataset, lags)
    coeffs, sigma2, J = reg.solve(hp.apply(spec), hp.lam)
    return PredictorModel(coeffs[:-1], coeffs[-1], hp, sigma2, J)


def fit_predictor(
    dataset: Dataset,
    spec: KernelSpec = DEFAULT_PREDICTOR_SPEC,
    search: SearchConfig = SearchConfig(),
    lags: Optional[int] = None,
    imputed_mask=None,
    imputed_weight: float = 1.0,
) -> PredictorModel:
    """Estimate the one-step predictor on a complete record.

    The shape parameters are grid-searched with the prior/residual ratio
    profiled exactly at each grid point; a bounded Nelder-Mead pass over
    ``(log beta, k1, k2, log eta)`` then refines the best point.  Rows in
    ``imputed_mask`` can be down-weighted through ``imputed_weight``.
    """
    lags = spec.truncation_len if lags is None else lags
    reg = _Regression(dataset, lags, imputed_mask, imputed_weight)
    enriched = spec.enrichment is not None
    best_eta = {}

    def grid_objective(beta, enrichment):
        v, log_eta = reg.profile_eta(spec.with_(beta=beta, enrichment=enrichment))
        best_eta[(beta, enrichment)] = log_eta
        return v

    coarse = search_shape(grid_objective, enriched, replace(search, refine=False))
    beta, enr, log_eta = coarse.beta, coarse.enrichment, best_eta[(coarse.beta, coarse.enrichment)]
    best_v = coarse.value

    if search.refine and search.max_evals > 0:
        lo, hi = search.beta_bounds
        kmax = 1.0 - search.enrich_margin

        def unpack(x):
            b = math.exp(x[0])
            e = reflection_to_enrichment(x[1], x[2]) if enriched else None
            return b, e, x[-1]

        def f(x):
            b, e, le = unpack(x)
            try:
                return reg.objective(spec.with_(beta=b, enrichment=e), le)
            except NumericalError:
                return math.inf

        x0 = [math.log(beta)]
        bounds = [(math.log(lo), math.log(hi))]
        if enriched:
            x0 += list(enrichment_to_reflection(*enr))
            bounds += [(-kmax, kmax)] * 2
        x0.append(log_eta)
        bounds.append(LOG_ETA_BOUNDS)
        x0 = np.clip(np.array(x0), [b[0] for b in bounds], [b[1] for b in bounds])
        steps = np.array([0.2] + ([0.1, 0.1] if enriched else []) + [0.5])
        simplex = [x0]
        for i, st in enumerate(steps):
            v = x0.copy()
            mid = 0.5 * (bounds[i][0] + bounds[i][1])
            v[i] += st if v[i] <= mid else -st
            simplex.append(v)
        res = optimize.minimize(
            f, x0, method="Nelder-Mead", bounds=bounds,
            options=dict(maxfev=search.max_evals, xatol=search.xtol, fatol=1e-10,
                         initial_simplex=np.array(simplex)),
        )
        if res.fun < best_v:
            beta, enr, log_eta = unpack(res.x)
            best_v = float(res.fun)

    fitted_spec = spec.with_(beta=beta, enrichment=enr)
    coeffs, sigma2, J = reg.solve(fitted_spec, math.exp(log_eta))
    hp = Hyperparameters(beta=beta, lam=math.exp(log_eta), enrichment=enr, q=spec.order_q)
    log.debug("predictor fit: %s sigma2=%.4g J=%.6g", hp, sigma2, J)
    return PredictorModel(coeffs[:-1], coeffs[-1], hp, sigma2, J)


def predictor_from_armax(model: ArmaxModel, lags: int) -> PredictorModel:
    """True one-step predictor of an ARMAX model, truncated to ``lags`` lags."""
    g_in, g_out = true_predictor_responses(model, lags)
    return PredictorModel(np.array(g_in) if g_in else np.zeros((0, lags)), g_out,
                          noise_variance=model.noise_std**2)


# ---------------------------------------------------------------------------
# prediction


def _causal_filter(x, g, delay):
    """``out(t) = sum_r g[r] x(t - delay - r)`` with ``x`` zero before index 0."""
    N = len(x)
    out = np.zeros(N)
    if delay < N and len(g):
        out[delay:] = np.convolve(x, g)[: N - delay]
    return out


def kstep_predict(model: PredictorModel, dataset: Dataset, k: int) -> np.ndarray:
    """k-step-ahead predictions by iterating the one-step predictor.

    Element ``i`` predicts ``outputs[i]`` from outputs up to
    ``times[i] - k``; outputs inside the horizon are replaced by the
    predictor's own forecasts, inputs are known throughout and everything
    before the record start is zero.
    """
    if not 1 <= k:
        raise ConfigurationError("k must be >= 1")
    if np.any(dataset.missing):
        raise DataError("kstep_predict needs a fully observed record")
    if model.num_inputs != dataset.num_inputs:
        raise ConfigurationError("model and dataset disagree on the number of inputs")
    y = dataset.outputs
    N = len(y)
    gp = model.g_output
    uin = np.zeros(N)
    for g, u in zip(model.g_inputs, dataset.inputs):
        uin += _causal_filter(u, g, 1)

    def at(arr, idx):
        # arr indexed by record position; positions before the record are zero
        out = np.zeros(len(idx))
        ok = idx >= 0
        out[ok] = arr[idx[ok]]
        return out

    targets = np.arange(N)
    origins = targets - k
    preds = {}
    for j in range(1, k + 1):
        pos = origins + j
        known = _causal_filter(y, gp[j - 1:], j) if j - 1 < len(gp) else np.zeros(N)
        acc = at(uin, pos) + at(known, pos)
        for i in range(1, min(j, len(gp) + 1)):
            acc += gp[i - 1] * preds[j - i]
        preds[j] = acc
    return preds[k]


# ---------------------------------------------------------------------------
# metrics


def cod(truth, estimate) -> float:
    """Coefficient of determination ``1 - ||y - yhat||^2 / ||y - mean(y)||^2``."""
    truth = np.asarray(truth, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if truth.shape != estimate.shape or truth.size < 1:
        raise UndefinedCODError("truth and estimate must be nonempty and equally long")
    den = float(np.sum((truth - truth.mean()) ** 2))
    if den <= 0:
        raise UndefinedCODError("COD undefined for a constant truth vector")
    return 1.0 - float(np.sum((truth - estimate) ** 2)) / den


def cod_miss(true_missing, estimates) -> float:
    return cod(true_missing, estimates)


def cod_k(test_truth, predictions_k) -> float:
    return cod(test_truth, predictions_k)
