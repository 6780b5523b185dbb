import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssimpute import dataio
from ssimpute.armax import Dataset, random_armax, simulate, white_inputs
from ssimpute.cli import main, parse_grid
from ssimpute.errors import ConfigurationError, DatasetParseError
from ssimpute.experiment import ExperimentConfig, aggregate_csv, run_experiment, runs_csv
from ssimpute.identify import PredictorModel
from ssimpute.imputer import Hyperparameters

TINY = {"search_n_beta": 3, "search_enrich_grid": 2, "search_max_evals": 10}


def _write_config(path, **kw):
    import yaml

    path.write_text(yaml.safe_dump({**TINY, **kw}))
    return path


# ---------------------------------------------------------------------------
# file formats


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=50, deadline=None)
@given(data=st.data(), n=st.integers(0, 20), m=st.integers(0, 3))
def test_dataset_round_trip(data, n, m):
    u = np.array(data.draw(st.lists(finite, min_size=n * m, max_size=n * m))).reshape(m, n)
    y = np.array(data.draw(st.lists(st.one_of(finite, st.just(math.nan)), min_size=n, max_size=n)))
    d = Dataset(np.arange(n) + 3, u, y)
    back = dataio.parse_dataset(dataio.dataset_to_csv(d))
    np.testing.assert_array_equal(back.times, d.times)
    np.testing.assert_array_equal(back.missing, d.missing)
    np.testing.assert_allclose(back.inputs, d.inputs, rtol=1e-12)
    np.testing.assert_allclose(back.outputs[d.observed], d.outputs[d.observed], rtol=1e-12)


def test_dataset_csv_layout():
    d = Dataset([0, 1], [[1.5, 2.0]], [0.25, math.nan])
    assert dataio.dataset_to_csv(d) == "t,u1,y\n0,1.5,0.25\n1,2.0,\n"


@pytest.mark.parametrize(
    "text,line",
    [("t,u1,y\n0,1,2\n1,x,3\n", 3), ("t,u1,y\n0,1\n", 2), ("a,b\n1,2\n", 1), ("", 1), ("t,y\n0.5,1\n", 2)],
)
def test_parse_errors_carry_line(text, line):
    with pytest.raises(DatasetParseError) as info:
        dataio.parse_dataset(text)
    assert info.value.line == line
    assert str(info.value).startswith(f"line {line}:")


def test_model_round_trip():
    m = random_armax(3, 0.95, (1, 5), 4)
    back = dataio.parse_model(dataio.model_to_csv(m))
    np.testing.assert_array_equal(back.a_coeffs, m.a_coeffs)
    np.testing.assert_array_equal(back.c_coeffs, m.c_coeffs)
    for a, b in zip(back.b_coeffs, m.b_coeffs):
        np.testing.assert_array_equal(a, b)


def test_predictor_round_trip():
    rng = np.random.default_rng(0)
    pm = PredictorModel(rng.standard_normal((2, 5)), rng.standard_normal(5),
                        Hyperparameters(0.3, 12.0, (0.1, -0.2)), 0.7)
    back = dataio.parse_predictor(dataio.predictor_to_csv(pm))
    np.testing.assert_array_equal(back.g_inputs, pm.g_inputs)
    np.testing.assert_array_equal(back.g_output, pm.g_output)
    assert back.hyperparameters == pm.hyperparameters
    assert back.noise_variance == pm.noise_variance


# ---------------------------------------------------------------------------
# experiment configuration


def test_config_defaults_and_invariants():
    c = ExperimentConfig()
    assert (c.train_n, c.test_n, c.num_inputs, c.order_range, c.missing_prob, c.k_max) == (
        300, 1000, 3, (1, 30), 0.25, 20)
    assert c.pole_radius == 0.95
    assert ExperimentConfig(variant="resonant").pole_radius == 0.999
    for bad in (dict(variant="resonant", pole_radius=0.95), dict(runs=0), dict(missing_prob=1.0),
                dict(variant="pink"), dict(order_range=(3, 2))):
        with pytest.raises(ConfigurationError):
            ExperimentConfig(**bad)


def test_config_mapping_round_trip():
    c = ExperimentConfig.from_mapping({"runs": 4, "order_range": [2, 5], "search_n_beta": 9})
    assert c.runs == 4 and c.order_range == (2, 5) and c.search.n_beta == 9
    assert ExperimentConfig.from_mapping(c.to_mapping()) == c
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_mapping({"nonsense": 1})


def test_experiment_smoke_and_report_shape():
    cfg = ExperimentConfig.from_mapping({"runs": 1, "order_range": [1, 1], "test_n": 200, **TINY})
    rows = run_experiment(cfg)
    assert [r.estimator for r in rows] == ["ss_imputation", "ss_full", "true_oracle"]
    assert all(r.status == "ok" and len(r.cod_k) == 20 for r in rows)
    text = runs_csv(rows, 20)
    assert len(text.strip().splitlines()) == 4
    agg = aggregate_csv(rows, 20)
    assert agg.splitlines()[0] == "estimator,metric,n,mean,median,q1,q3"


# ---------------------------------------------------------------------------
# command line


def test_kernel_subcommand(capsys):
    assert main(["kernel", "--kind", "rbf-dt", "--q", "1", "--beta", repr(math.log(2)), "--grid", "0:3"]) == 0
    rows = capsys.readouterr().out.strip().splitlines()
    assert rows[0] == "x,value"
    np.testing.assert_allclose([float(r.split(",")[1]) for r in rows[1:]], [1, 0.5, 0.25, 0.125], rtol=1e-14)

    beta = 0.4
    assert main(["kernel", "--kind", "ss", "--q", "2", "--beta", str(beta), "--grid", "0,1.5,4"]) == 0
    rows = capsys.readouterr().out.strip().splitlines()[1:]
    for r in rows:
        s, t, v = map(float, r.split(","))
        assert s == t and v == pytest.approx(math.exp(-3 * beta * t) / 3, rel=1e-14)

    for kind in ("ss", "rbf-ct", "rbf-dt"):
        assert main(["kernel", "--kind", kind, "--grid", ""]) == 0
        assert len(capsys.readouterr().out.strip().splitlines()) == 1


def test_usage_errors_exit_one(capsys):
    assert _exit(["kernel", "--kind", "bogus"]) == 1
    assert _exit(["nosuchcommand"]) == 1
    assert main(["kernel", "--kind", "rbf-dt", "--grid", "0:x"]) == 1
    assert main(["kernel", "--kind", "rbf-dt", "--q", "3"]) == 1


def _exit(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    return info.value.code


def test_parse_grid():
    np.testing.assert_array_equal(parse_grid("0:3"), [0, 1, 2, 3])
    np.testing.assert_allclose(parse_grid("0:1:0.25"), [0, 0.25, 0.5, 0.75, 1])
    np.testing.assert_array_equal(parse_grid("1,5"), [1, 5])
    assert parse_grid(" ").size == 0


def test_simulate_impute_identify(tmp_path, capsys):
    cfg = _write_config(tmp_path / "c.yaml", test_n=200)
    out = tmp_path / "sim"
    argv = ["--config", str(cfg), "--seed", "5", "--out-dir", str(out), "simulate", "--order", "2"]
    assert main(argv) == 0
    assert len((out / "train.csv").read_text().splitlines()) == 301
    assert len((out / "test.csv").read_text().splitlines()) == 201
    first = (out / "train.csv").read_bytes()
    assert main(argv) == 0
    assert (out / "train.csv").read_bytes() == first
    train = dataio.read_dataset(out / "train.csv")
    assert 0 < train.missing.sum() < 150

    imp = tmp_path / "imp"
    assert main(["impute", str(out / "train.csv"), "--truth", str(out / "train_full.csv"),
                 "--out-dir", str(imp)]) == 0
    report = json.loads((imp / "fit_report.json").read_text())
    assert report["n_missing"] == train.missing.sum() and "cod_miss" in report
    lines = (imp / "completed.csv").read_text().splitlines()
    header = lines[0].split(",")
    assert header[-2:] == ["imputed", "y_std"]
    flags = [int(r.split(",")[-2]) for r in lines[1:]]
    stds = [float(r.split(",")[-1]) for r in lines[1:]]
    assert sum(flags) == train.missing.sum() and min(stds) >= 0
    completed = dataio.read_dataset(imp / "completed.csv")
    assert not completed.missing.any()

    idf = tmp_path / "idf"
    assert main(["identify", str(out / "train.csv"), "--test", str(out / "test.csv"),
                 "--k-max", "3", "--out-dir", str(idf)]) == 0
    assert len((idf / "cod.csv").read_text().splitlines()) == 4
    pm = dataio.parse_predictor((idf / "predictor.csv").read_text())
    assert pm.g_inputs.shape == (3, 100)


def test_impute_without_missing_is_identity(tmp_path):
    m = random_armax(2, 0.95, (1, 5), 0)
    d = simulate(m, white_inputs(3, 150, 0), 50, 100, 0)
    dataio.write_dataset(tmp_path / "full.csv", d)
    assert main(["impute", str(tmp_path / "full.csv"), "--out-dir", str(tmp_path)]) == 0
    back = dataio.read_dataset(tmp_path / "completed.csv")
    np.testing.assert_array_equal(back.outputs, d.outputs)
    assert json.loads((tmp_path / "fit_report.json").read_text())["n_missing"] == 0


def test_data_errors_exit_two(tmp_path):
    (tmp_path / "bad.csv").write_text("t,u1,y\n0,1,2\n1,oops,3\n")
    assert main(["impute", str(tmp_path / "bad.csv")]) == 2
    (tmp_path / "empty.csv").write_text("t,u1,y\n0,1,\n1,2,\n")
    assert main(["impute", str(tmp_path / "empty.csv"), "--out-dir", str(tmp_path)]) == 2
    assert main(["impute", str(tmp_path / "missing.csv")]) == 2


def test_resonant_models_carry_resonator(tmp_path):
    cfg = _write_config(tmp_path / "c.yaml", variant="resonant", test_n=50)
    for seed in range(3):
        out = tmp_path / f"r{seed}"
        assert main(["--config", str(cfg), "--seed", str(seed), "--out-dir", str(out), "simulate"]) == 0
        model = dataio.parse_model((out / "model.csv").read_text())
        a, b = model.resonance
        assert b == 0.999 and -1 <= a <= 1
        # the resonator divides A exactly
        q, r = np.polydiv(model.a_coeffs, [1.0, 2 * a * b, b * b])
        assert np.max(np.abs(r)) < 1e-10


def test_experiment_command(tmp_path, capsys):
    cfg = _write_config(tmp_path / "c.yaml", runs=2, order_range=[1, 2], test_n=100, k_max=5)
    out = tmp_path / "exp"
    assert main(["--config", str(cfg), "--threads", "1", "--out-dir", str(out), "experiment"]) == 0
    for name in ("runs.csv", "aggregate.csv", "config.yaml", "cod_k_mean.png", "cod_miss_boxplot.png"):
        assert (out / name).exists()
    assert len((out / "runs.csv").read_text().splitlines()) == 7


def test_experiment_failure_threshold(tmp_path, monkeypatch):
    import ssimpute.experiment as ex
    from ssimpute.errors import OptimizationFailureError

    def boom(*a, **k):
        raise OptimizationFailureError("forced")

    monkeypatch.setattr(ex, "stable_spline_imputation", boom)
    cfg = _write_config(tmp_path / "c.yaml", runs=2, order_range=[1, 1], test_n=50, k_max=2)
    assert main(["--config", str(cfg), "--threads", "1", "--out-dir", str(tmp_path), "experiment",
                 "--no-figures"]) == 3
    assert "failed: OptimizationFailureError" in (tmp_path / "runs.csv").read_text()
