"""Random ARMAX systems, simulation, missing-data masks and true-model prediction.

Polynomials are stored as coefficient arrays in powers of the backward shift
(``scipy.signal.lfilter`` convention): ``A = [1, a1, ..., an]`` corresponds
to ``z^n + a1 z^(n-1) + ... + an``.  Input polynomials carry a leading zero
(unit delay).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import signal

from .errors import ConfigurationError, GenerationFailureError, PredictorInstabilityError

__all__ = [
    "ArmaxModel",
    "Dataset",
    "random_stable_poly",
    "random_armax",
    "add_resonance",
    "impulse_response",
    "norm_ratio",
    "white_inputs",
    "lowpass_inputs",
    "simulate",
    "mask_missing",
    "kstep_predict_true",
    "true_predictor_responses",
    "derive_seed",
]

NOISE = "noise"


@dataclass(frozen=True)
class ArmaxModel:
    """``A(q) y = sum_l B_l(q) u_l + C(q) noise_std e`` with unit-variance ``e``."""

    a_coeffs: np.ndarray
    b_coeffs: Tuple[np.ndarray, ...]
    c_coeffs: np.ndarray
    noise_std: float = 1.0
    resonance: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        a = np.asarray(self.a_coeffs, dtype=float)
        c = np.asarray(self.c_coeffs, dtype=float)
        if a[0] != 1.0 or c[0] != 1.0:
            raise ConfigurationError("A and C must be monic")
        bs = tuple(np.asarray(b, dtype=float) for b in self.b_coeffs)
        for b in bs:
            if b.size and b[0] != 0.0:
                raise ConfigurationError("input polynomials need a unit delay (b[0] == 0)")
        if not self.noise_std >= 0:
            raise ConfigurationError("noise_std must be nonnegative")
        object.__setattr__(self, "a_coeffs", a)
        object.__setattr__(self, "c_coeffs", c)
        object.__setattr__(self, "b_coeffs", bs)

    @property
    def num_inputs(self) -> int:
        return len(self.b_coeffs)

    @property
    def order(self) -> int:
        return len(self.a_coeffs) - 1

    def poles(self) -> np.ndarray:
        return np.roots(self.a_coeffs)

    def predictor_poles(self) -> np.ndarray:
        return np.roots(self.c_coeffs)


@dataclass
class Dataset:
    """An input/output record on integer sampling instants.

    ``outputs`` holds NaN wherever ``missing`` is True.
    """

    times: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray
    missing: np.ndarray = None
    test: Optional["Dataset"] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.int64)
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        if self.inputs.shape[1] != len(self.times) and self.inputs.size == 0:
            self.inputs = np.zeros((0, len(self.times)))
        self.outputs = np.asarray(self.outputs, dtype=float)
        if self.missing is None:
            self.missing = np.isnan(self.outputs)
        self.missing = np.asarray(self.missing, dtype=bool)
        n = len(self.times)
        if self.inputs.shape[1] != n or self.outputs.shape != (n,) or self.missing.shape != (n,):
            raise ConfigurationError("times, inputs, outputs and missing must agree in length")
        if n > 1 and np.any(np.diff(self.times) <= 0):
            raise ConfigurationError("times must be strictly increasing")
        self.outputs = np.where(self.missing, np.nan, self.outputs)

    @property
    def n(self) -> int:
        return len(self.times)

    @property
    def num_inputs(self) -> int:
        return self.inputs.shape[0]

    @property
    def observed(self) -> np.ndarray:
        return ~self.missing

    @property
    def observed_times(self) -> np.ndarray:
        return self.times[~self.missing]

    @property
    def missing_times(self) -> np.ndarray:
        return self.times[self.missing]

    def completed(self, times, values) -> "Dataset":
        """Copy with the given outputs filled in (and marked observed)."""
        out = self.outputs.copy()
        idx = np.searchsorted(self.times, np.asarray(times))
        out[idx] = values
        return replace(self, outputs=out, missing=np.isnan(out))


def derive_seed(master_seed: int, index: int) -> int:
    """Per-run seed: splitmix64 finalizer of ``master ^ index``."""
    mask = (1 << 64) - 1
    z = ((int(master_seed) ^ int(index)) + 0x9E3779B97F4A7C15) & mask
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    return z ^ (z >> 31)


# ---------------------------------------------------------------------------
# generation


def random_stable_poly(order: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Monic real polynomial with random roots of modulus < rho.

    Roots come as real singletons or complex-conjugate pairs with modulus
    uniform on [0, rho) and angle uniform.
    """
    roots = []
    while len(roots) < order:
        if order - len(roots) >= 2 and rng.random() < 0.5:
            r = rho * rng.random()
            ang = rng.uniform(0.0, math.pi)
            z = r * complex(math.cos(ang), math.sin(ang))
            roots.extend([z, z.conjugate()])
        else:
            roots.append(rho * rng.random() * (1.0 if rng.random() < 0.5 else -1.0))
    return np.real(np.poly(roots)) if roots else np.array([1.0])


def _norm_length(a_coeffs, base=1000):
    radius = max(np.abs(np.roots(a_coeffs)).max(initial=0.0), 1e-3)
    if radius >= 1.0:
        return base
    # extra factor covers polynomial growth from repeated poles
    need = math.ceil(math.log(1e-12) / math.log(radius)) * 2
    return max(base, need)


def norm_ratio(model: ArmaxModel, length: int = 1000) -> float:
    """``sum_l ||f_l||_2 / ||f_p||_2`` over the impulse responses."""
    length = max(length, _norm_length(model.a_coeffs, length))
    num = sum(np.linalg.norm(impulse_response(model, i, length)) for i in range(model.num_inputs))
    den = np.linalg.norm(impulse_response(model, NOISE, length))
    return num / den


def random_armax(
    order: int,
    rho: float,
    norm_ratio_range: Sequence[float] = (1.0, 5.0),
    rng_seed: int = 0,
    num_inputs: int = 3,
    max_attempts: int = 10_000,
    norm_length: int = 1000,
) -> ArmaxModel:
    """Draw a random stable ARMAX model by rejection sampling.

    A and C have roots of modulus below ``rho``, each B has ``order``
    standard-normal coefficients after a unit delay, and the model is redrawn
    until the input/noise norm ratio falls in ``norm_ratio_range``.
    """
    if order < 1:
        raise ConfigurationError("order must be >= 1")
    if not 0 < rho < 1:
        raise ConfigurationError("rho must lie in (0, 1)")
    lo, hi = norm_ratio_range
    rng = np.random.default_rng(rng_seed)
    for _ in range(max_attempts):
        a = random_stable_poly(order, rho, rng)
        c = random_stable_poly(order, rho, rng)
        bs = tuple(np.concatenate(([0.0], rng.standard_normal(order))) for _ in range(num_inputs))
        model = ArmaxModel(a, bs, c)
        r = norm_ratio(model, norm_length)
        if lo <= r <= hi:
            return model
    raise GenerationFailureError(
        f"no model with norm ratio in [{lo}, {hi}] after {max_attempts} attempts"
    )


def add_resonance(model: ArmaxModel, b: float, a: float) -> ArmaxModel:
    """Multiply every transfer function by z^2 / (z^2 + 2ab z + b^2)."""
    if not abs(b) < 1:
        raise ConfigurationError("|b| must be < 1")
    if not abs(a) <= 1:
        raise ConfigurationError("|a| must be <= 1")
    factor = np.array([1.0, 2.0 * a * b, b * b])
    return replace(
        model,
        a_coeffs=np.convolve(model.a_coeffs, factor),
        resonance=(float(a), float(b)),
    )


def impulse_response(model: ArmaxModel, channel, length: int) -> np.ndarray:
    """First ``length`` samples of B_l/A (``channel`` an input index) or C/A."""
    if length < 1:
        raise ConfigurationError("length must be >= 1")
    num = model.c_coeffs if channel == NOISE else model.b_coeffs[channel]
    impulse = np.zeros(length)
    impulse[0] = 1.0
    return signal.lfilter(num, model.a_coeffs, impulse)


# ---------------------------------------------------------------------------
# simulation


def white_inputs(num_inputs: int, length: int, rng_seed: int) -> np.ndarray:
    rng = np.random.default_rng(rng_seed)
    return rng.standard_normal((num_inputs, length))


def lowpass_inputs(num_inputs: int, length: int, rng_seed: int, rho: float = 0.95) -> np.ndarray:
    """White noise through one random strictly proper second-order filter.

    The filter is drawn with the same root sampler as the systems and is
    normalized to unit l2 gain, so the inputs keep unit variance.
    """
    rng = np.random.default_rng(rng_seed)
    den = random_stable_poly(2, rho, rng)
    num = np.concatenate(([0.0], rng.standard_normal(2)))
    impulse = np.zeros(_norm_length(den))
    impulse[0] = 1.0
    gain = np.linalg.norm(signal.lfilter(num, den, impulse))
    white = rng.standard_normal((num_inputs, length))
    return signal.lfilter(num / gain, den, white, axis=1)


def simulate(
    model: ArmaxModel,
    inputs: np.ndarray,
    n: int,
    burn_in: int = 500,
    rng_seed: int = 0,
    test_n: int = 0,
) -> Dataset:
    """Run the difference equation from zero state and split the record.

    The first ``burn_in`` samples are discarded; the next ``n`` form the
    training record and the following ``test_n`` the test split.
    """
    if burn_in < 0:
        raise ConfigurationError("burn_in must be >= 0")
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if model.num_inputs == 0:
        inputs = np.zeros((0, burn_in + n + test_n))
    total = burn_in + n + test_n
    if inputs.shape[0] != model.num_inputs or inputs.shape[1] < total:
        raise ConfigurationError(
            f"need inputs of shape ({model.num_inputs}, >={total}), got {inputs.shape}"
        )
    inputs = inputs[:, :total]
    rng = np.random.default_rng(rng_seed)
    e = rng.standard_normal(total) * model.noise_std
    y = signal.lfilter(model.c_coeffs, model.a_coeffs, e)
    for b, u in zip(model.b_coeffs, inputs):
        y = y + signal.lfilter(b, model.a_coeffs, u)
    train = slice(burn_in, burn_in + n)
    test = None
    if test_n:
        tsl = slice(burn_in + n, total)
        test = Dataset(np.arange(n, n + test_n), inputs[:, tsl], y[tsl])
    return Dataset(np.arange(n), inputs[:, train], y[train], test=test)


def mask_missing(dataset: Dataset, prob: float, rng_seed: int) -> Dataset:
    """Drop each training output independently with probability ``prob``.

    At least one sample stays observed; the test split is untouched.
    """
    if not 0 <= prob < 1:
        raise ConfigurationError("prob must lie in [0, 1)")
    rng = np.random.default_rng(rng_seed)
    while True:
        drop = rng.random(dataset.n) < prob
        if not drop.all():
            break
    missing = dataset.missing | drop
    return replace(dataset, outputs=np.where(missing, np.nan, dataset.outputs), missing=missing)


# ---------------------------------------------------------------------------
# true-model prediction


def _check_predictor(model: ArmaxModel):
    poles = model.predictor_poles()
    if poles.size and np.abs(poles).max() >= 1.0:
        raise PredictorInstabilityError(
            "C(z) has roots on or outside the unit circle; the predictor is unstable"
        )


def true_predictor_responses(model: ArmaxModel, length: int):
    """Impulse responses of the one-step predictor at lags ``1..length``.

    Returns ``(g_inputs, g_output)`` with ``g_inputs[l] = B_l / C`` and
    ``g_output = (C - A) / C``.
    """
    _check_predictor(model)
    impulse = np.zeros(length + 1)
    impulse[0] = 1.0
    g_in = [signal.lfilter(b, model.c_coeffs, impulse)[1:] for b in model.b_coeffs]
    n = max(len(model.a_coeffs), len(model.c_coeffs))
    a = np.pad(model.a_coeffs, (0, n - len(model.a_coeffs)))
    c = np.pad(model.c_coeffs, (0, n - len(model.c_coeffs)))
    g_out = signal.lfilter(c - a, model.c_coeffs, impulse)[1:]
    return g_in, g_out


def kstep_predict_true(model: ArmaxModel, dataset: Dataset, k: int) -> np.ndarray:
    """k-step-ahead predictions of the true model over the whole record.

    Innovations are reconstructed by inverse filtering (zero state before
    the record); the difference equation is then iterated ``k`` steps from
    every origin with future innovations set to zero.  Element ``i`` of the
    result predicts ``outputs[i]`` from data up to ``times[i] - k``.
    """
    if not 1 <= k:
        raise ConfigurationError("k must be >= 1")
    if np.any(dataset.missing):
        raise ConfigurationError("kstep_predict_true needs a fully observed record")
    _check_predictor(model)
    y = dataset.outputs
    N = len(y)
    a = model.a_coeffs
    c = model.c_coeffs
    ub = np.zeros(N)
    for b, u in zip(model.b_coeffs, dataset.inputs):
        ub += signal.lfilter(b, [1.0], u)
    # innovations scaled by noise_std: C e = A y - B u
    e = signal.lfilter(a, c, y) - signal.lfilter([1.0], c, ub)

    pad = max(len(a), len(c)) + k
    ypad = np.concatenate((np.zeros(pad), y))
    epad = np.concatenate((np.zeros(pad), e))
    upad = np.concatenate((np.zeros(pad), ub))
    # origins s run over padded indices pad - k .. pad + N - 1 - k
    s = np.arange(pad - k, pad + N - k)
    preds = {}
    for j in range(1, k + 1):
        acc = upad[s + j].copy()
        for i in range(1, len(a)):
            if j - i <= 0:
                acc -= a[i] * ypad[s + j - i]
            else:
                acc -= a[i] * preds[j - i]
        for i in range(1, len(c)):
            if j - i <= 0:
                acc += c[i] * epad[s + j - i]
        preds[j] = acc
    return preds[k]
