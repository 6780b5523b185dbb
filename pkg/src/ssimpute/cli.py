"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 data or parse
error (including I/O), 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import dataio
from .errors import ConfigurationError, DataError, NumericalError, SSImputeError
from .experiment import (
    ExperimentConfig,
    aggregate_csv,
    default_threads,
    failed_runs,
    generate_run,
    history_record,
    run_experiment,
    runs_csv,
    score_test_predictions,
    too_many_failures,
)
from .identify import DEFAULT_PREDICTOR_SPEC, cod_miss, fit_predictor, kstep_predict
from .imputer import stable_spline_imputation
from .kernels import KernelSpec, enriched_kernel, rbf_h_continuous, rbf_h_discrete, stable_spline_k

log = logging.getLogger("ssimpute")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _global_flags(parser, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    g = parser.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=d(None), help="master seed")
    g.add_argument("--config", type=Path, default=d(None), help="YAML key/value experiment config")
    g.add_argument("--threads", type=int, default=d(None), help="worker processes (default: all cores)")
    g.add_argument("--out-dir", type=Path, default=d(None), help="output directory")
    g.add_argument("--truth", type=Path, default=d(None), help="complete dataset CSV for COD_miss")
    g.add_argument("-v", "--verbose", action="count", default=d(0))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ssimpute", description="Stable spline imputation and identification.")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        _global_flags(sp, suppress=True)
        return sp

    s = add("simulate", "generate one random ARMAX system and its train/test records")
    s.add_argument("--order", type=int)
    s.add_argument("--variant", choices=("white", "lowpass", "resonant"))
    s.add_argument("--missing-prob", type=float)
    s.add_argument("--train-n", type=int)
    s.add_argument("--test-n", type=int)

    s = add("impute", "fill missing outputs of a dataset CSV")
    s.add_argument("train", type=Path)
    s.add_argument("--q", type=int, default=2, choices=(1, 2))
    s.add_argument("--no-enrichment", action="store_true")

    s = add("identify", "estimate a one-step predictor, imputing first if needed")
    s.add_argument("train", type=Path)
    s.add_argument("--test", type=Path, help="test CSV to score COD_k on")
    s.add_argument("--k-max", type=int, default=20)
    s.add_argument("--lags", type=int, default=DEFAULT_PREDICTOR_SPEC.truncation_len)

    s = add("experiment", "Monte Carlo study with aggregate report and figures")
    s.add_argument("--runs", type=int)
    s.add_argument("--variant", choices=("white", "lowpass", "resonant"))
    s.add_argument("--no-figures", action="store_true")

    s = add("kernel", "tabulate a kernel on a grid")
    s.add_argument("--kind", required=True, choices=("ss", "rbf-ct", "rbf-dt"))
    s.add_argument("--q", type=int, default=2)
    s.add_argument("--beta", type=float, default=0.5)
    s.add_argument("--grid", default="0:10",
                   help="comma list or start:stop[:step] with stop included; empty for none")
    s.add_argument("--t", type=float, help="second argument for ss (default: the diagonal s = t)")
    s.add_argument("--phi", type=float)
    s.add_argument("--varphi", type=float)
    s.add_argument("--truncation", type=int, default=100)
    return p


# ---------------------------------------------------------------------------
# helpers


def parse_grid(text: str) -> np.ndarray:
    text = text.strip()
    if not text:
        return np.zeros(0)
    try:
        if ":" in text:
            parts = [float(v) for v in text.split(":")]
            if len(parts) not in (2, 3):
                raise ValueError
            start, stop = parts[:2]
            step = parts[2] if len(parts) == 3 else 1.0
            if step <= 0:
                raise ValueError
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            return start + step * np.arange(max(n, 0))
        return np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise UsageError(f"bad grid {text!r}") from None


def _out_dir(args, default=".") -> Path:
    out = args.out_dir if args.out_dir is not None else Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_config(args, **overrides) -> ExperimentConfig:
    mapping = {}
    if args.config is not None:
        mapping.update(ExperimentConfig.from_yaml(args.config.read_text()).to_mapping())
    if args.seed is not None:
        mapping["master_seed"] = args.seed
    mapping.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_mapping(mapping)


def _write(path: Path, text: str):
    path.write_text(text)
    log.info("wrote %s", path)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    over = dict(variant=args.variant, missing_prob=args.missing_prob,
                train_n=args.train_n, test_n=args.test_n)
    if args.order is not None:
        over["order_range"] = (args.order, args.order)
    cfg = _load_config(args, **over)
    run = generate_run(replace(cfg, runs=1), 0)
    out = _out_dir(args)
    _write(out / "train.csv", dataio.dataset_to_csv(run.masked))
    _write(out / "train_full.csv", dataio.dataset_to_csv(run.full))
    _write(out / "test.csv", dataio.dataset_to_csv(run.full.test))
    _write(out / "model.csv", dataio.model_to_csv(run.model))
    print(f"simulated order {run.model.order} model; {int(run.masked.missing.sum())} of "
          f"{run.masked.n} training outputs missing")
    return EXIT_OK


def _impute(train, q=2, enrich=True, search=None):
    spec = KernelSpec(order_q=q, enrichment=(0.0, 0.0) if enrich else None)
    kw = {} if search is None else {"search": search}
    return stable_spline_imputation(train, spec, **kw)


def cmd_impute(args) -> int:
    train = dataio.read_dataset(args.train)
    result = _impute(train, args.q, not args.no_enrichment)
    report = result.report()
    if args.truth is not None:
        truth = dataio.read_dataset(args.truth)
        if not np.array_equal(truth.times, train.times):
            raise DataError("truth file times do not match the training file")
        if result.n_missing:
            idx = np.searchsorted(truth.times, result.targets)
            report["cod_miss"] = cod_miss(truth.outputs[idx], result.values)
            print(f"COD_miss = {report['cod_miss']:.6f}")
    out = _out_dir(args)
    _write(out / "completed.csv", dataio.dataset_to_csv(train, result))
    rep = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in report.items()}
    _write(out / "fit_report.json", json.dumps(rep, indent=2) + "\n")
    print(f"imputed {result.n_missing} of {train.n} outputs (beta={result.fitted.beta:.4g})")
    return EXIT_OK


def cmd_identify(args) -> int:
    train = dataio.read_dataset(args.train)
    mask = train.missing.copy()
    if mask.any():
        train = _impute(train).completed(train)
    spec = DEFAULT_PREDICTOR_SPEC.with_(truncation_len=args.lags)
    model = fit_predictor(train, spec, imputed_mask=mask)
    out = _out_dir(args)
    _write(out / "predictor.csv", dataio.predictor_to_csv(model))
    if args.test is not None:
        test = dataio.read_dataset(args.test)
        if test.missing.any():
            raise DataError("test file must be complete")
        if args.k_max < 1 or args.k_max > test.n:
            raise UsageError("--k-max must lie in [1, test rows]")
        record = history_record(train, test)
        cods = score_test_predictions(lambda d, k: kstep_predict(model, d, k), record, train.n, args.k_max)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "cod"])
        for k, c in enumerate(cods, start=1):
            w.writerow([k, dataio.fmt(c)])
        _write(out / "cod.csv", buf.getvalue())
        print(f"COD_1 = {cods[0]:.6f}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _load_config(args, runs=args.runs, variant=args.variant)
    threads = args.threads if args.threads is not None else default_threads()
    if threads < 1:
        raise UsageError("--threads must be >= 1")
    reports = run_experiment(cfg, threads)
    out = _out_dir(args)
    _write(out / "config.yaml", yaml.safe_dump(cfg.to_mapping(), sort_keys=True))
    _write(out / "runs.csv", runs_csv(reports, cfg.k_max))
    _write(out / "aggregate.csv", aggregate_csv(reports, cfg.k_max))
    if not args.no_figures:
        from .plotting import experiment_figures

        for path in experiment_figures(reports, cfg.k_max, out):
            log.info("wrote %s", path)
    nfail = failed_runs(reports)
    print(f"{cfg.runs - nfail} of {cfg.runs} runs succeeded")
    if too_many_failures(reports, cfg.runs):
        print(f"error: {nfail} of {cfg.runs} runs failed (more than 20%)", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def kernel_table(kind, q, beta, grid, t=None, enrichment=None, truncation=100) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if kind == "ss":
        spec = KernelSpec(order_q=q, beta=beta, enrichment=enrichment, truncation_len=truncation)
        w.writerow(["s", "t", "value"])
        for s in grid:
            tt = s if t is None else t
            if enrichment is None:
                v = stable_spline_k(s, tt, spec)
            else:
                if s != int(s) or tt != int(tt):
                    raise UsageError("the enriched kernel is defined on integer arguments only")
                v = enriched_kernel(int(s), int(tt), spec)
            w.writerow([dataio.fmt(s), dataio.fmt(tt), dataio.fmt(v)])
        return buf.getvalue()
    w.writerow(["x", "value"])
    if kind == "rbf-ct":
        spec = KernelSpec(order_q=q, beta=beta, continuous=True)
        values = np.asarray(rbf_h_continuous(grid, spec), dtype=float).reshape(-1)
    elif kind == "rbf-dt":
        if np.any(grid != np.round(grid)):
            raise UsageError("rbf-dt needs integer lags")
        spec = KernelSpec(order_q=q, beta=beta, enrichment=enrichment, truncation_len=truncation)
        values = np.asarray(rbf_h_discrete(grid, spec), dtype=float).reshape(-1) if grid.size else []
    else:
        raise UsageError(f"unknown kernel kind {kind!r}")
    for x, v in zip(grid, values):
        w.writerow([dataio.fmt(x), dataio.fmt(v)])
    return buf.getvalue()


def cmd_kernel(args) -> int:
    if (args.phi is None) != (args.varphi is None):
        raise UsageError("--phi and --varphi go together")
    enr = None if args.phi is None else (args.phi, args.varphi)
    if args.kind == "rbf-ct" and enr is not None:
        raise UsageError("rbf-ct has no enriched form")
    text = kernel_table(args.kind, args.q, args.beta, parse_grid(args.grid), args.t, enr, args.truncation)
    if args.out_dir is not None:
        _write(_out_dir(args) / "kernel.csv", text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "impute": cmd_impute,
    "identify": cmd_identify,
    "experiment": cmd_experiment,
    "kernel": cmd_kernel,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SSImputeError as exc:  # pragma: no cover - every subclass is mapped above
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
