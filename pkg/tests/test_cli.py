import csv

import numpy as np
import pytest

from tresnet.cli import main
from tresnet.config import ConfigError, RunConfig, load_config, parse_lines
from tresnet.data import generate
from tresnet.model import ModelConfig, TresnetModel, load_model, save_model
from tresnet.training import refit_epsilon

TINY = ["--set", "n=120", "--set", "epochs=2", "--set", "lr=1e-2", "--set", "backbone_widths=6",
        "--set", "head_widths=4"]


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _write_cfg(tmp_path, text):
    p = tmp_path / "run.cfg"
    p.write_text(text)
    return p


# --------------------------------------------------------------------------- #
# config
# --------------------------------------------------------------------------- #


def test_config_round_trip(tmp_path):
    cfg = RunConfig(dgp="nonlinear", head_widths=(8, 4), batch_size=None, alpha=0.5, bases=("spline",))
    p = _write_cfg(tmp_path, cfg.dumps())
    assert load_config(p) == cfg


def test_config_errors_carry_line_numbers():
    with pytest.raises(ConfigError, match=":2:"):
        parse_lines(["n = 3", "bogus = 1"])
    with pytest.raises(ConfigError, match="duplicate"):
        parse_lines(["n = 3", "n = 4"])
    with pytest.raises(ConfigError):
        load_config(None, {"n": "many"})
    with pytest.raises(ConfigError):
        load_config(None, {"shifts": "percent:2"})


def test_comments_and_blank_lines(tmp_path):
    p = _write_cfg(tmp_path, "# header\n\nn = 7  # trailing\ndetach_ratio_in_tr = yes\nbatch_size = none\n")
    cfg = load_config(p)
    assert cfg.n == 7 and cfg.detach_ratio_in_tr is True and cfg.batch_size is None


# --------------------------------------------------------------------------- #
# simulate
# --------------------------------------------------------------------------- #


def test_simulate_linear_truth_rows(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--out", str(out), "--set", "n=20000", "--set", "shifts=grid:percent:0:0.5:20"]) == 0
    rows = _rows(out / "truth.csv")
    assert len(rows) == 20
    # MC s.e. of mean(AX) is sqrt(3/n); of mean(0.5 AX) half that
    se = np.sqrt(3.0 / 20000)
    assert abs(float(rows[0]["psi_true"]) - 1.0) < 3 * se
    assert abs(float(rows[-1]["psi_true"]) - 0.5) < 3 * se / 2
    assert (out / "data.csv").exists() and "family=gaussian" in (out / "data.csv.meta").read_text()


def test_simulate_is_reproducible(tmp_path):
    for d in ("a", "b"):
        assert main(["simulate", "--out", str(tmp_path / d), "--seed", "5", "--set", "dgp=nonlinear"]) == 0
    for name in ("data.csv", "data.csv.meta", "truth.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_simulate_n_zero_writes_nothing(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--out", str(out), "--set", "n=0"]) == 1
    assert not out.exists() or not any(out.iterdir())


def test_bad_config_exit_code(tmp_path):
    p = _write_cfg(tmp_path, "nonsense = 1\n")
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path)]) == 1
    assert main(["simulate", "--out", str(tmp_path), "--set", "dgp=csv", "--set", "data_path=x.csv"]) == 1
    assert main(["train", "--out", str(tmp_path), "--jobs", "0"]) == 1


# --------------------------------------------------------------------------- #
# train / estimate
# --------------------------------------------------------------------------- #


def test_train_outputs_and_determinism(tmp_path):
    for d in ("a", "b"):
        assert main(["train", "--out", str(tmp_path / d), "--set", "dgp=nonlinear", *TINY]) == 0
    assert (tmp_path / "a" / "model.bin").read_bytes() == (tmp_path / "b" / "model.bin").read_bytes()
    hist = _rows(tmp_path / "a" / "history.csv")
    assert [r["epoch"] for r in hist] == ["1", "2"]


def test_train_missing_dataset(tmp_path):
    out = tmp_path / "t"
    code = main(["train", "--out", str(out), "--set", "dgp=csv", "--set", f"data_path={tmp_path / 'nope.csv'}"])
    assert code == 3
    assert not (out / "model.bin").exists()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_is_numeric_failure(tmp_path):
    out = tmp_path / "t"
    code = main(["train", "--out", str(out), "--set", "dgp=nonlinear", "--set", "family=poisson",
                 "--set", "lr=1e6", "--set", "epochs=30", "--set", "n=60"])
    assert code == 2
    assert not (out / "model.bin").exists()


def test_estimate_curve(tmp_path):
    shifts = "grid:percent:0:0.4:3"
    assert main(["train", "--out", str(tmp_path), "--set", f"shifts={shifts}", *TINY]) == 0
    assert main(["estimate", "--out", str(tmp_path), "--set", f"shifts={shifts}", *TINY]) == 0
    rows = _rows(tmp_path / "curve.csv")
    assert len(rows) == 3
    assert float(rows[0]["percent_change"]) == 0.0
    assert all(r["q25"] == "" for r in rows)
    assert main(["estimate", "--out", str(tmp_path), "--set", "shifts=percent:0.3", *TINY]) == 1


def _monotone_model(dataset, labels):
    """eta(x, a) = a exactly on the exposure range; w = 1."""
    m = TresnetModel(dataset.d, len(labels), "gaussian", ModelConfig((2,), (), "piecewise-linear"), labels)
    m.fit_normalization(dataset.A)
    lo, hi = m.normalizer.lo, m.normalizer.hi
    for name in m.params:
        m.params[name][:] = 0.0
    m.params["backbone.0.bias"][:] = [1.0, 0.0]
    coef = np.zeros((8, 1))
    coef[0, 0], coef[2, 0] = lo, hi - lo
    m.params["outcome.0.coef"][:] = coef
    refit_epsilon(m, dataset)
    return m


def test_percent_change_monotone_in_cutoff_under_monotone_mu(tmp_path):
    cfg = RunConfig(n=500, shifts="percent:0,cutoff:-1,cutoff:0,cutoff:1,cutoff:2")
    data = generate("linear", cfg.n, cfg.seed)
    model = _monotone_model(data, list(cfg.shift_family().labels))
    save_model(model, tmp_path / "mono.bin")
    code = main(["estimate", "--out", str(tmp_path), "--model", str(tmp_path / "mono.bin"),
                 "--set", "n=500", "--set", f"shifts={cfg.shifts}"])
    assert code == 0
    pc = [float(r["percent_change"]) for r in _rows(tmp_path / "curve.csv")]
    assert pc[0] == 0.0
    assert np.all(np.diff(pc[1:]) >= 0) and np.all(np.array(pc[1:]) <= 1e-12)
    assert load_model(tmp_path / "mono.bin").epsilon_fresh


# --------------------------------------------------------------------------- #
# benchmark / ensemble
# --------------------------------------------------------------------------- #


def test_benchmark_table_structure(tmp_path):
    args = ["benchmark", "--out", str(tmp_path), "--set", "dgp=nonlinear", "--set", "seeds=1",
            "--set", "bases=spline,piecewise-linear", "--set", "shifts=percent:0.1,percent:0.2", *TINY]
    assert main(args) == 0
    rows = _rows(tmp_path / "benchmark.csv")
    seed_rows = [r for r in rows if r["kind"] == "seed"]
    summary = [r for r in rows if r["kind"] == "summary"]
    assert len(seed_rows) == 6 and len(summary) == 6
    assert {(r["basis"], r["estimator"]) for r in summary} == {
        (b, e) for b in ("spline", "piecewise-linear") for e in ("plugin", "aipw", "tr")}
    for s in summary:  # a single seed: the median is that seed's value
        match = [r for r in seed_rows if (r["basis"], r["estimator"]) == (s["basis"], s["estimator"])]
        assert s["sqrt_mise"] == match[0]["sqrt_mise"]
        assert s["frac_tr_beats_plugin"] in ("0.0", "1.0")


def test_benchmark_family_comparison_structure(tmp_path):
    args = ["benchmark", "--out", str(tmp_path), "--set", "dgp=nonlinear", "--set", "family=poisson",
            "--set", "fit_families=poisson,gaussian", "--set", "estimators=tr", "--set", "seeds=2",
            "--set", "shifts=percent:0.1", "--jobs", "2", *TINY]
    assert main(args) == 0
    rows = _rows(tmp_path / "benchmark.csv")
    assert sorted({r["family"] for r in rows}) == ["gaussian", "poisson"]
    assert len([r for r in rows if r["kind"] == "seed"]) == 4


def test_ensemble_bands(tmp_path):
    args = ["ensemble", "--out", str(tmp_path), "--set", "ensemble_size=3", "--set", "shifts=percent:0,percent:0.3",
            *TINY]
    assert main(args) == 0
    rows = _rows(tmp_path / "ensemble.csv")
    assert len(rows) == 2
    for r in rows:
        assert float(r["q25"]) <= float(r["q50"]) <= float(r["q75"])
    assert main(["ensemble", "--out", str(tmp_path), "--set", "ensemble_size=0"]) == 1
