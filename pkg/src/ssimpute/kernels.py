"""Stable spline kernels and the stationary RBF kernels derived from them.

All kernels here are unscaled: the common scale factor ``lam`` multiplies
them at the point of use.  Discrete-time impulse responses are indexed by
lag ``1..truncation_len`` when assembled into Gram matrices (unit
input-output delay).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from scipy import integrate

from .errors import (
    AccuracyNotReachedError,
    ConfigurationError,
    StabilityError,
    UnsupportedOrderError,
)

__all__ = [
    "KernelSpec",
    "GramMatrix",
    "check_stability_triangle",
    "spline_kernel_w",
    "spline_kernel_quadrature_oracle",
    "stable_spline_k",
    "rbf_h_continuous",
    "rbf_h_discrete",
    "enrichment_impulse",
    "enriched_kernel",
    "impulse_kernel_matrix",
    "gram_matrix_rbf",
    "rbf_h_discrete_summation",
    "rbf_h_continuous_quadrature",
]


def check_stability_triangle(phi, varphi):
    """Raise StabilityError unless z**2 + phi*z + varphi has roots in |z| < 1."""
    if not (abs(varphi) < 1.0 and abs(phi) < 1.0 + varphi):
        raise StabilityError(
            f"enrichment (phi={phi}, varphi={varphi}) is outside the "
            "stability triangle |varphi| < 1, |phi| < 1 + varphi"
        )


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family and its shape hyperparameters.

    Parameters
    ----------
    order_q : int
        Spline order; closed forms exist for 1 and 2.
    beta : float
        Exponential decay rate of the prior variance.
    enrichment : (phi, varphi) or None
        Denominator coefficients of ``H(z) = z^2 / (z^2 + phi z + varphi)``.
    truncation_len : int
        Number of impulse-response lags kept in discrete convolutions.
    continuous : bool
        Use the continuous-time RBF kernel for the disturbance.
    """

    order_q: int = 2
    beta: float = 0.5
    enrichment: Optional[Tuple[float, float]] = None
    truncation_len: int = 100
    continuous: bool = False

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigurationError(f"beta must be positive, got {self.beta}")
        if self.order_q not in (1, 2):
            raise UnsupportedOrderError(
                f"closed forms exist only for order_q in {{1, 2}}, got {self.order_q}"
            )
        if self.truncation_len < 1:
            raise ConfigurationError("truncation_len must be >= 1")
        if self.enrichment is not None:
            phi, varphi = self.enrichment
            check_stability_triangle(phi, varphi)
            if self.continuous:
                raise ConfigurationError("enrichment is defined for discrete time only")
            object.__setattr__(self, "enrichment", (float(phi), float(varphi)))

    def with_(self, **changes) -> "KernelSpec":
        return replace(self, **changes)


@dataclass(frozen=True)
class GramMatrix:
    entries: np.ndarray
    times: np.ndarray

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.entries)[0]) if len(self.times) else 0.0

    def is_psd(self) -> bool:
        n = len(self.times)
        if n == 0:
            return True
        scale = float(np.max(np.diag(self.entries)))
        return self.min_eigenvalue() >= -1e-8 * n * scale


def _as_output(value, *inputs):
    if all(np.ndim(v) == 0 for v in inputs):
        return float(value)
    return value


# ---------------------------------------------------------------------------
# spline kernels on [0, 1]


def spline_kernel_w(s, t, q):
    """Spline kernel ``W_q(s, t)`` on the unit square (q = 1 or 2)."""
    if q not in (1, 2):
        raise UnsupportedOrderError(
            f"closed form available for q in {{1, 2}} only (got {q}); "
            "use spline_kernel_quadrature_oracle for general q"
        )
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    lo = np.minimum(s, t)
    if q == 1:
        out = lo
    else:
        hi = np.maximum(s, t)
        out = hi * lo**2 / 2.0 - lo**3 / 6.0
    return _as_output(out, s, t)


def spline_kernel_quadrature_oracle(s, t, q, tol=1e-10):
    """Integrate ``G_q(s,u) G_q(t,u)`` over ``u`` in [0, 1] numerically.

    Works for any integer ``q >= 1``; used to check the closed forms.

    Raises
    ------
    AccuracyNotReachedError
        If the quadrature error estimate exceeds ``tol``.
    """
    if q < 1 or int(q) != q:
        raise UnsupportedOrderError(f"q must be a positive integer, got {q}")
    if not tol > 0:
        raise ConfigurationError("tol must be positive")
    q = int(q)
    upper = min(s, t, 1.0)
    if upper <= 0.0:
        return 0.0
    norm = math.factorial(q - 1) ** 2

    def integrand(u):
        return ((s - u) ** (q - 1)) * ((t - u) ** (q - 1)) / norm

    with warnings.catch_warnings():
        # shortfalls are reported through AccuracyNotReachedError instead
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        value, abserr = integrate.quad(integrand, 0.0, upper, epsabs=tol, epsrel=0.0, limit=200)
    if abserr > tol:
        raise AccuracyNotReachedError(
            f"quadrature error {abserr:.3g} exceeds tol {tol:.3g}", value, abserr
        )
    return value


# ---------------------------------------------------------------------------
# stable spline kernel


def _check_nonnegative(*args):
    for a in args:
        if np.any(np.asarray(a) < 0):
            raise ConfigurationError("stable spline kernel arguments must be >= 0")


def stable_spline_k(s, t, spec: KernelSpec):
    """Stable spline kernel ``W_q(exp(-beta s), exp(-beta t))``."""
    _check_nonnegative(s, t)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    b = spec.beta
    hi = np.maximum(s, t)
    if spec.order_q == 1:
        out = np.exp(-b * hi)
    else:
        out = np.exp(-b * (s + t + hi)) / 2.0 - np.exp(-3.0 * b * hi) / 6.0
    return _as_output(out, s, t)


def _k_origin(d, spec):
    """``K(0, d)`` for ``d >= 0``."""
    b = spec.beta
    if spec.order_q == 1:
        return np.exp(-b * d)
    return np.exp(-2.0 * b * d) / 2.0 - np.exp(-3.0 * b * d) / 6.0


# ---------------------------------------------------------------------------
# RBF kernels


def rbf_h_continuous(x, spec: KernelSpec):
    """Stationary covariance ``h(x) = int_0^inf K(y, y + |x|) dy``."""
    if spec.enrichment is not None:
        raise ConfigurationError("enriched kernels have no continuous-time RBF form")
    ax = np.abs(np.asarray(x, dtype=float))
    b = spec.beta
    if spec.order_q == 1:
        out = np.exp(-b * ax) / b
    else:
        out = (3.0 * np.exp(-2.0 * b * ax) - np.exp(-3.0 * b * ax)) / (18.0 * b)
    return _as_output(out, x)


def _rbf_plain_discrete(ax, spec):
    b = spec.beta
    if spec.order_q == 1:
        return np.exp(-b * (ax + 1.0)) / -np.expm1(-b)
    return (3.0 * np.exp(-2.0 * b * ax) - np.exp(-3.0 * b * ax)) / 6.0 * (
        np.exp(-3.0 * b) / -np.expm1(-3.0 * b)
    )


def _rbf_enriched_discrete(ax, spec):
    # sum_j K_enr(j, j + x) = sum_m c(m) S(|x + m|) - h(0) sum_{b <= x} h(b) K(0, x - b)
    # with c the autocorrelation of the truncated enrichment response and
    # S(d) = sum_{i >= 0} K(i, i + d) = K(0, d) + plain RBF(d)
    h = enrichment_impulse(*spec.enrichment, spec.truncation_len)
    T = len(h)
    flat = np.rint(ax.reshape(-1)).astype(np.int64)
    span = int(flat.max(initial=0))
    corr = np.correlate(h, h, mode="full")
    d = np.abs(np.arange(-(T - 1), span + T)).astype(float)
    s_ext = _k_origin(d, spec) + _rbf_plain_discrete(d, spec)
    total = np.convolve(s_ext, corr, mode="valid")
    k0 = _k_origin(np.arange(span + 1, dtype=float), spec)
    total -= h[0] * np.convolve(h, k0)[: span + 1]
    return total[flat].reshape(ax.shape)


def rbf_h_discrete(x, spec: KernelSpec):
    """Stationary covariance ``h(x) = sum_{j>=1} K(j, j + |x|)`` on integer lags.

    With an enrichment the sum runs over the enriched kernel.
    """
    ax = np.abs(np.asarray(x, dtype=float))
    if spec.enrichment is None:
        out = _rbf_plain_discrete(ax, spec)
    else:
        out = _rbf_enriched_discrete(ax, spec)
    return _as_output(out, x)


# ---------------------------------------------------------------------------
# enrichment


def enrichment_impulse(phi, varphi, length):
    """First ``length`` samples of the impulse response of z^2/(z^2 + phi z + varphi)."""
    check_stability_triangle(phi, varphi)
    if length < 1:
        raise ConfigurationError("length must be >= 1")
    h = np.zeros(length)
    h[0] = 1.0
    if length > 1:
        h[1] = -phi
    for k in range(2, length):
        h[k] = -phi * h[k - 1] - varphi * h[k - 2]
    return h


def enriched_kernel(s, t, spec: KernelSpec):
    """Covariance of ``g (*) h`` where ``g`` has the stable spline covariance.

    ``sum_{a,b < T_f} h(a) h(b) K(s - a, t - b)`` with ``K`` zero at negative
    arguments.  Exact whenever ``s, t < truncation_len``.
    """
    if spec.enrichment is None:
        raise ConfigurationError("enriched_kernel needs spec.enrichment")
    s = int(s)
    t = int(t)
    _check_nonnegative(s, t)
    h = enrichment_impulse(*spec.enrichment, spec.truncation_len)
    a = np.arange(min(s, len(h) - 1) + 1)
    b = np.arange(min(t, len(h) - 1) + 1)
    k = stable_spline_k((s - a)[:, None], (t - b)[None, :], spec)
    return float(h[a] @ k @ h[b])


def impulse_kernel_matrix(spec: KernelSpec) -> np.ndarray:
    """Prior covariance of the impulse response at lags ``1..T_f``.

    Enriched when ``spec.enrichment`` is set.
    """
    T = spec.truncation_len
    if spec.enrichment is None:
        lags = np.arange(1, T + 1, dtype=float)
        return stable_spline_k(lags[:, None], lags[None, :], spec)
    idx = np.arange(T + 1, dtype=float)
    base = stable_spline_k(idx[:, None], idx[None, :], spec)
    h = enrichment_impulse(*spec.enrichment, T)
    hfull = np.zeros(T + 1)
    hfull[:T] = h
    diff = np.subtract.outer(np.arange(T + 1), np.arange(T + 1))
    conv = np.where(diff >= 0, hfull[np.clip(diff, 0, T)], 0.0)
    full = conv @ base @ conv.T
    out = full[1:, 1:]
    return (out + out.T) / 2.0


def gram_matrix_rbf(times, spec: KernelSpec) -> GramMatrix:
    """RBF kernel matrix ``[R]_ij = h(t_i - t_j)``."""
    times = np.asarray(times)
    if times.size and np.any(np.diff(times) <= 0):
        raise ConfigurationError("times must be strictly increasing")
    if spec.continuous:
        lag = np.subtract.outer(times.astype(float), times.astype(float))
        return GramMatrix(np.asarray(rbf_h_continuous(lag, spec)), times)
    it = times.astype(np.int64)
    if times.size == 0:
        return GramMatrix(np.zeros((0, 0)), times)
    span = int(it[-1] - it[0])
    table = np.asarray(rbf_h_discrete(np.arange(span + 1), spec), dtype=float)
    lag = np.abs(np.subtract.outer(it, it))
    return GramMatrix(table[lag], times)


# ---------------------------------------------------------------------------
# independent numerical oracles for the RBF closed forms


def rbf_h_discrete_summation(x, spec: KernelSpec, rtol=1e-16, max_terms=10_000_000):
    """Direct summation of ``sum_{j>=1} K(j, j + |x|)``.

    Stops once the current term drops below ``rtol`` times the running sum.
    Enriched kernels are summed through :func:`enriched_kernel`.
    """
    ax = abs(int(x))
    if spec.enrichment is None:
        def term(j):
            return stable_spline_k(float(j), float(j + ax), spec)
    else:
        def term(j):
            return enriched_kernel(j, j + ax, spec)
    acc = 0.0
    j = 1
    # enriched terms can start at (or pass through) zero before decaying
    warmup = 0 if spec.enrichment is None else spec.truncation_len + ax
    while j <= max_terms:
        v = term(j)
        acc += v
        if j > warmup and abs(v) < rtol * abs(acc):
            return acc
        j += 1
    raise AccuracyNotReachedError("summation did not converge", acc, float("nan"))


def rbf_h_continuous_quadrature(x, spec: KernelSpec, tol=1e-11):
    """Adaptive quadrature of ``int_0^inf K(y, y + |x|) dy``.

    The range is split at ``60 / beta``; the tail beyond it is bounded by the
    first-order envelope ``exp(-beta y) / beta`` and checked against ``tol``.
    """
    ax = abs(float(x))
    b = spec.beta
    cut = 60.0 / b

    def f(y):
        return stable_spline_k(y, y + ax, spec)

    edges = np.linspace(0.0, cut, 13)
    value = 0.0
    err = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        v, e = integrate.quad(f, lo, hi, epsabs=tol / 20, epsrel=1e-14, limit=200)
        value += v
        err += e
    tail = math.exp(-b * (cut + ax)) / b
    if err + tail > tol:
        raise AccuracyNotReachedError(
            f"quadrature error {err + tail:.3g} exceeds tol {tol:.3g}", value, err + tail
        )
    return value
