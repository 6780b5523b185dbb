"""Monte Carlo driver: generate, simulate, mask, impute, identify and score.

Every run is a pure function of ``(config, run_index)`` so results do not
depend on scheduling.  Test-set predictions use the training record as
history: the estimators predict over the concatenated train+test record and
only the test instants are scored.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from .armax import (
    Dataset,
    add_resonance,
    derive_seed,
    kstep_predict_true,
    lowpass_inputs,
    mask_missing,
    random_armax,
    simulate,
    white_inputs,
)
from .errors import ConfigurationError, SSImputeError
from .identify import DEFAULT_PREDICTOR_SPEC, cod, fit_predictor, kstep_predict
from .imputer import stable_spline_imputation
from .kernels import KernelSpec
from .search import SearchConfig

log = logging.getLogger(__name__)

VARIANTS = ("white", "lowpass", "resonant")
ESTIMATORS = ("ss_imputation", "ss_full", "true_oracle")
RESONANT_RADIUS = 0.999
DEFAULT_RADIUS = 0.95
MAX_FAILURE_FRACTION = 0.2

# coarser than the library default: about 10 s per run on one core
EXPERIMENT_SEARCH = SearchConfig(n_beta=12, enrich_grid=5, max_evals=150)


@dataclass(frozen=True)
class ExperimentConfig:
    runs: int = 30
    train_n: int = 300
    test_n: int = 1000
    num_inputs: int = 3
    order_range: Tuple[int, int] = (1, 30)
    pole_radius: Optional[float] = None
    missing_prob: float = 0.25
    variant: str = "white"
    k_max: int = 20
    master_seed: int = 0
    search: SearchConfig = EXPERIMENT_SEARCH
    burn_in: int = 500
    norm_ratio_range: Tuple[float, float] = (1.0, 5.0)
    predictor_lags: int = 100
    impute_enrichment: bool = True
    imputed_weight: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("runs", "train_n", "test_n", "k_max", "predictor_lags"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.num_inputs < 0 or self.burn_in < 0:
            raise ConfigurationError("num_inputs and burn_in must be nonnegative")
        lo, hi = (int(v) for v in self.order_range)
        if not 1 <= lo <= hi:
            raise ConfigurationError("order_range must satisfy 1 <= lo <= hi")
        object.__setattr__(self, "order_range", (lo, hi))
        object.__setattr__(self, "norm_ratio_range", tuple(float(v) for v in self.norm_ratio_range))
        if not 0 <= self.missing_prob < 1:
            raise ConfigurationError("missing_prob must lie in [0, 1)")
        if self.pole_radius is None:
            default = RESONANT_RADIUS if self.variant == "resonant" else DEFAULT_RADIUS
            object.__setattr__(self, "pole_radius", default)
        if not 0 < self.pole_radius < 1:
            raise ConfigurationError("pole_radius must lie in (0, 1)")
        if self.variant == "resonant" and self.pole_radius != RESONANT_RADIUS:
            raise ConfigurationError(f"the resonant variant requires pole_radius {RESONANT_RADIUS}")
        if self.k_max > self.test_n:
            raise ConfigurationError("k_max cannot exceed test_n")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExperimentConfig":
        """Build from a flat mapping; ``search_<field>`` keys set SearchConfig fields."""
        names = {f.name for f in fields(cls)} - {"search"}
        search_names = {f.name for f in fields(SearchConfig)}
        kw, skw = {}, {}
        for key, val in (mapping or {}).items():
            if key in names:
                kw[key] = tuple(val) if isinstance(val, list) else val
            elif key.startswith("search_") and key[7:] in search_names:
                skw[key[7:]] = tuple(val) if isinstance(val, list) else val
            else:
                raise ConfigurationError(f"unknown config key {key!r}")
        if skw:
            kw["search"] = replace(EXPERIMENT_SEARCH, **skw)
        return cls(**kw)

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"cannot parse config: {exc}") from None
        if data is not None and not isinstance(data, dict):
            raise ConfigurationError("config must be a key/value mapping")
        return cls.from_mapping(data or {})

    def to_mapping(self) -> dict:
        out = {}
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name == "search":
                for k, v in asdict(val).items():
                    out[f"search_{k}"] = list(v) if isinstance(v, tuple) else v
            else:
                out[f.name] = list(val) if isinstance(val, tuple) else val
        return out


@dataclass
class RunReport:
    run_index: int
    seed: int
    model_order: int
    estimator: str
    status: str = "ok"
    cod_miss: float = math.nan
    cod_miss_mean: float = math.nan
    cod_k: List[float] = field(default_factory=list)
    hyperparameters: dict = field(default_factory=dict)
    wall_time: float = math.nan


# ---------------------------------------------------------------------------
# one run


@dataclass
class RunData:
    """Everything generated for one run before any estimation."""

    seed: int
    model: object
    full: Dataset  # complete training record with its test split
    masked: Dataset


def _subseeds(run_seed: int, count: int) -> List[int]:
    return [int(s) for s in np.random.SeedSequence(run_seed).generate_state(count, dtype=np.uint64)]


def generate_run(config: ExperimentConfig, run_index: int) -> RunData:
    seed = derive_seed(config.master_seed, run_index)
    s_order, s_model, s_input, s_noise, s_mask, s_res = _subseeds(seed, 6)
    lo, hi = config.order_range
    order = int(np.random.default_rng(s_order).integers(lo, hi + 1))
    model = random_armax(order, config.pole_radius, config.norm_ratio_range, s_model, config.num_inputs)
    if config.variant == "resonant":
        a = float(np.random.default_rng(s_res).uniform(-1.0, 1.0))
        model = add_resonance(model, RESONANT_RADIUS, a)
    total = config.burn_in + config.train_n + config.test_n
    if config.variant == "lowpass":
        u = lowpass_inputs(config.num_inputs, total, s_input, rho=DEFAULT_RADIUS)
    else:
        u = white_inputs(config.num_inputs, total, s_input)
    full = simulate(model, u, config.train_n, config.burn_in, s_noise, config.test_n)
    masked = mask_missing(full, config.missing_prob, s_mask)
    return RunData(seed, model, full, masked)


def history_record(train: Dataset, test: Dataset) -> Dataset:
    """Concatenate a complete training record and its test split."""
    return Dataset(
        np.concatenate((train.times, test.times)),
        np.hstack((train.inputs, test.inputs)),
        np.concatenate((train.outputs, test.outputs)),
    )


def score_test_predictions(predict, record: Dataset, n_train: int, k_max: int) -> List[float]:
    """COD_k on the test part of ``record`` for k = 1..k_max."""
    truth = record.outputs[n_train:]
    return [cod(truth, predict(record, k)[n_train:]) for k in range(1, k_max + 1)]


def _hp_dict(prefix, hp, extra=None):
    out = {}
    if hp is not None:
        for k, v in hp.as_dict().items():
            if k != "q":
                out[f"{prefix}_{k}"] = math.nan if v is None else float(v)
    if extra:
        out.update({f"{prefix}_{k}": float(v) for k, v in extra.items()})
    return out


def run_single(config: ExperimentConfig, run_index: int) -> List[RunReport]:
    """Execute one Monte Carlo run; failures are recorded, not raised."""
    t0 = time.perf_counter()
    seed = derive_seed(config.master_seed, run_index)
    order = -1
    try:
        with threadpool_limits(limits=1):
            data = generate_run(config, run_index)
            order = data.model.order if data.model.resonance is None else data.model.order - 2
            masked, full = data.masked, data.full
            imp_spec = KernelSpec(enrichment=(0.0, 0.0) if config.impute_enrichment else None)
            pred_spec = DEFAULT_PREDICTOR_SPEC.with_(truncation_len=config.predictor_lags)

            reports = {e: RunReport(run_index, seed, order, e) for e in ESTIMATORS}
            ss = reports["ss_imputation"]
            if masked.missing.any():
                imp = stable_spline_imputation(masked, imp_spec, config.search)
                truth = full.outputs[masked.missing]
                ss.cod_miss = cod(truth, imp.values)
                baseline = np.full(truth.shape, np.mean(masked.outputs[masked.observed]))
                ss.cod_miss_mean = cod(truth, baseline)
                completed = imp.completed(masked)
                ss.hyperparameters.update(_hp_dict("imp", imp.fitted))
            else:
                completed = masked
            record = history_record(full, full.test)
            n = config.train_n

            pm = fit_predictor(completed, pred_spec, config.search,
                               imputed_mask=masked.missing, imputed_weight=config.imputed_weight)
            ss.cod_k = score_test_predictions(lambda d, k: kstep_predict(pm, d, k), record, n, config.k_max)
            ss.hyperparameters.update(_hp_dict("pred", pm.hyperparameters, {"sigma2": pm.noise_variance}))

            pf = fit_predictor(full, pred_spec, config.search)
            rf = reports["ss_full"]
            rf.cod_k = score_test_predictions(lambda d, k: kstep_predict(pf, d, k), record, n, config.k_max)
            rf.hyperparameters.update(_hp_dict("pred", pf.hyperparameters, {"sigma2": pf.noise_variance}))

            rt = reports["true_oracle"]
            rt.cod_k = score_test_predictions(lambda d, k: kstep_predict_true(data.model, d, k), record, n, config.k_max)
    except (SSImputeError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.warning("run %d failed: %s", run_index, exc)
        status = f"failed: {type(exc).__name__}: {exc}"
        reports = {e: RunReport(run_index, seed, order, e, status=status) for e in ESTIMATORS}
    wall = time.perf_counter() - t0
    for r in reports.values():
        r.wall_time = wall
        if r.status == "ok" and not all(np.isfinite(r.cod_k)):
            r.status = "failed: non-finite COD"
    return [reports[e] for e in ESTIMATORS]


# ---------------------------------------------------------------------------
# many runs


def default_threads() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:  # pragma: no cover - non-Linux
        return max(1, os.cpu_count() or 1)


def _run_star(args):
    return run_single(*args)


def run_experiment(config: ExperimentConfig, threads: int = 1) -> List[RunReport]:
    """All runs, rows ordered by run index then estimator."""
    jobs = [(config, i) for i in range(config.runs)]
    if threads <= 1 or config.runs == 1:
        results = [_run_star(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(threads, config.runs)) as pool:
            results = list(pool.map(_run_star, jobs))
    return [row for rows in results for row in rows]


def failed_runs(reports: Sequence[RunReport]) -> int:
    return len({r.run_index for r in reports if r.status != "ok"})


def too_many_failures(reports: Sequence[RunReport], runs: int) -> bool:
    return failed_runs(reports) > MAX_FAILURE_FRACTION * runs


HP_COLUMNS = (
    "imp_beta", "imp_lambda", "imp_phi", "imp_varphi",
    "pred_beta", "pred_lambda", "pred_phi", "pred_varphi", "pred_sigma2",
)


def _f(x) -> str:
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def runs_csv(reports: Sequence[RunReport], k_max: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run_index", "seed", "model_order", "estimator", "status", "cod_miss", "cod_miss_mean"]
               + [f"cod_{k}" for k in range(1, k_max + 1)] + list(HP_COLUMNS) + ["wall_time"])
    for r in reports:
        cods = list(r.cod_k) + [math.nan] * (k_max - len(r.cod_k))
        w.writerow([r.run_index, r.seed, r.model_order, r.estimator, r.status,
                    _f(r.cod_miss), _f(r.cod_miss_mean)]
                   + [_f(c) for c in cods]
                   + [_f(r.hyperparameters.get(c, math.nan)) for c in HP_COLUMNS]
                   + [f"{r.wall_time:.3f}"])
    return buf.getvalue()


def metric_values(reports: Sequence[RunReport], estimator: str, metric: str) -> np.ndarray:
    """Values of ``metric`` over the successful runs of ``estimator``."""
    vals = []
    for r in reports:
        if r.estimator != estimator or r.status != "ok":
            continue
        if metric.startswith("cod_") and metric[4:].isdigit():
            k = int(metric[4:])
            v = r.cod_k[k - 1] if k <= len(r.cod_k) else math.nan
        else:
            v = getattr(r, metric)
        vals.append(v)
    vals = np.array(vals, dtype=float)
    return vals[np.isfinite(vals)]


def aggregate(reports: Sequence[RunReport], k_max: int) -> List[dict]:
    rows = []
    metrics = ["cod_miss", "cod_miss_mean"] + [f"cod_{k}" for k in range(1, k_max + 1)]
    for est in ESTIMATORS:
        for m in metrics:
            v = metric_values(reports, est, m)
            if v.size == 0:
                continue
            q1, med, q3 = np.percentile(v, [25, 50, 75])
            rows.append(dict(estimator=est, metric=m, n=int(v.size), mean=float(v.mean()),
                             median=float(med), q1=float(q1), q3=float(q3)))
    return rows


def aggregate_csv(reports: Sequence[RunReport], k_max: int) -> str:
    """Summary table; contains no timing so it is reproducible byte for byte."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["estimator", "metric", "n", "mean", "median", "q1", "q3"])
    for row in aggregate(reports, k_max):
        w.writerow([row["estimator"], row["metric"], row["n"]]
                   + [format(row[k], ".12g") for k in ("mean", "median", "q1", "q3")])
    return buf.getvalue()
