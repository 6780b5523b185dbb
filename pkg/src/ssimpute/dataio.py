"""Flat-file formats: dataset CSV, model CSV, predictor CSV and the fit report."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Optional

import numpy as np

from .armax import ArmaxModel, Dataset
from .errors import DatasetParseError
from .identify import PredictorModel
from .imputer import Hyperparameters, ImputationResult


def fmt(x) -> str:
    """Shortest round-tripping text for a float; empty for NaN."""
    x = float(x)
    if math.isnan(x):
        return ""
    return repr(x)


# ---------------------------------------------------------------------------
# datasets


def dataset_to_csv(dataset: Dataset, imputation: Optional[ImputationResult] = None) -> str:
    """Render ``t,u1,...,uM,y`` rows; missing outputs are empty fields.

    With an imputation result the imputed values are filled in and two
    columns are appended: ``imputed`` (0/1) and ``y_std`` (posterior
    standard deviation, 0 at observed samples).
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["t"] + [f"u{i + 1}" for i in range(dataset.num_inputs)] + ["y"]
    y = dataset.outputs.copy()
    flag = np.zeros(dataset.n, dtype=int)
    std = np.zeros(dataset.n)
    if imputation is not None:
        header += ["imputed", "y_std"]
        idx = np.searchsorted(dataset.times, imputation.targets)
        y[idx] = imputation.values
        flag[idx] = 1
        std[idx] = np.sqrt(np.maximum(imputation.variances, 0.0))
    w.writerow(header)
    for i in range(dataset.n):
        row = [str(int(dataset.times[i]))] + [fmt(v) for v in dataset.inputs[:, i]] + [fmt(y[i])]
        if imputation is not None:
            row += [str(flag[i]), fmt(std[i])]
        w.writerow(row)
    return buf.getvalue()


def write_dataset(path, dataset: Dataset, imputation: Optional[ImputationResult] = None) -> None:
    Path(path).write_text(dataset_to_csv(dataset, imputation))


def parse_dataset(text: str) -> Dataset:
    """Parse a dataset CSV.  Columns other than t, u*, y are ignored."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetParseError("empty file", line=1)
    header = [h.strip() for h in header]
    if "t" not in header or "y" not in header:
        raise DatasetParseError("header must contain 't' and 'y' columns", line=1)
    u_cols = sorted(
        (i for i, h in enumerate(header) if h.startswith("u") and h[1:].isdigit()),
        key=lambda i: int(header[i][1:]),
    )
    ti, yi = header.index("t"), header.index("y")
    times, inputs, outputs = [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DatasetParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
        try:
            times.append(int(row[ti]))
            inputs.append([float(row[i]) for i in u_cols])
            cell = row[yi].strip()
            outputs.append(float(cell) if cell else math.nan)
        except ValueError as exc:
            raise DatasetParseError(str(exc), line=lineno) from None
    n = len(times)
    if n and np.any(np.diff(times) <= 0):
        raise DatasetParseError("times must be strictly increasing")
    u = np.array(inputs, dtype=float).T if n else np.zeros((len(u_cols), 0))
    return Dataset(np.array(times, dtype=np.int64), u.reshape(len(u_cols), n), np.array(outputs))


def read_dataset(path) -> Dataset:
    return parse_dataset(Path(path).read_text())


# ---------------------------------------------------------------------------
# ARMAX models


def model_to_csv(model: ArmaxModel) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["polynomial", "power", "coefficient"])
    polys = [("A", model.a_coeffs)] + [(f"B{i + 1}", b) for i, b in enumerate(model.b_coeffs)]
    polys.append(("C", model.c_coeffs))
    for name, coeffs in polys:
        for p, c in enumerate(coeffs):
            w.writerow([name, p, fmt(c)])
    w.writerow(["noise_std", 0, fmt(model.noise_std)])
    if model.resonance is not None:
        w.writerow(["resonance_a", 0, fmt(model.resonance[0])])
        w.writerow(["resonance_b", 0, fmt(model.resonance[1])])
    return buf.getvalue()


def parse_model(text: str) -> ArmaxModel:
    reader = csv.DictReader(io.StringIO(text))
    polys = {}
    for lineno, row in enumerate(reader, start=2):
        try:
            polys.setdefault(row["polynomial"], {})[int(row["power"])] = float(row["coefficient"])
        except (KeyError, ValueError, TypeError) as exc:
            raise DatasetParseError(f"bad model row: {exc}", line=lineno) from None

    def arr(name):
        d = polys[name]
        return np.array([d[p] for p in range(max(d) + 1)])

    try:
        bs = [arr(k) for k in sorted((k for k in polys if k.startswith("B")), key=lambda k: int(k[1:]))]
        res = None
        if "resonance_a" in polys:
            res = (polys["resonance_a"][0], polys["resonance_b"][0])
        return ArmaxModel(arr("A"), tuple(bs), arr("C"), polys.get("noise_std", {0: 1.0})[0], res)
    except KeyError as exc:
        raise DatasetParseError(f"model file lacks polynomial {exc}") from None


# ---------------------------------------------------------------------------
# predictors and reports


def predictor_to_csv(model: PredictorModel) -> str:
    buf = io.StringIO()
    hp = model.hyperparameters
    if hp is not None:
        for key, val in hp.as_dict().items():
            buf.write(f"# {key}={'' if val is None else val}\n")
    buf.write(f"# noise_variance={fmt(model.noise_variance)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["channel", "lag", "coefficient"])
    for i, g in enumerate(model.g_inputs):
        for lag, c in enumerate(g, start=1):
            w.writerow([f"u{i + 1}", lag, fmt(c)])
    for lag, c in enumerate(model.g_output, start=1):
        w.writerow(["y", lag, fmt(c)])
    return buf.getvalue()


def parse_predictor(text: str) -> PredictorModel:
    meta = {}
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            meta[key.strip()] = val.strip()
        else:
            body.append(line)
    rows = list(csv.DictReader(body))
    chans = {}
    for lineno, row in enumerate(rows, start=2):
        try:
            chans.setdefault(row["channel"], {})[int(row["lag"])] = float(row["coefficient"])
        except (KeyError, ValueError, TypeError) as exc:
            raise DatasetParseError(f"bad predictor row: {exc}", line=lineno) from None
    lags = max(max(d) for d in chans.values())

    def arr(name):
        d = chans.get(name, {})
        return np.array([d.get(j, 0.0) for j in range(1, lags + 1)])

    inputs = sorted((c for c in chans if c != "y"), key=lambda c: int(c[1:]))
    hp = None
    if meta.get("beta"):
        enr = None
        if meta.get("phi"):
            enr = (float(meta["phi"]), float(meta["varphi"]))
        hp = Hyperparameters(float(meta["beta"]), float(meta["lambda"]), enr, int(meta.get("q", 2)))
    g_in = np.array([arr(c) for c in inputs]) if inputs else np.zeros((0, lags))
    nv = meta.get("noise_variance")
    return PredictorModel(g_in, arr("y"), hp, float(nv) if nv else math.nan)


def fit_report_json(result: ImputationResult) -> str:
    rep = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in result.report().items()}
    return json.dumps(rep, indent=2, sort_keys=False) + "\n"
