import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from cocp import cli, experiment
from cocp.distributions import ConditionalFamily
from cocp.experiment import (ConfigError, ExperimentConfig, load_config, run_ablation_T,
                             run_experiment, stream_seed, summarize)

TINY_TRAIN = {"max_epochs": 4, "patience": 2, "batch_size": 64}
TINY_COCP = {"hidden": [8, 8], "T": 1, "phase_epochs": 3, "phase_patience": 1}


def tiny(**kw):
    base = dict(dataset={"kind": "normal", "n": 600}, methods=["split", "cqr", "cocp"], repetitions=1,
                train=TINY_TRAIN, cocp=TINY_COCP, metrics=["conmae"])
    base.update(kw)
    return ExperimentConfig(**base)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- config ------------------------------------------------------------------------

def test_unknown_config_keys_are_errors(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"methods": ["split"], "epochs": 3})
    with pytest.raises(ConfigError):
        tiny(cocp={"gamma": 1.0})
    with pytest.raises(ConfigError):
        tiny(train={"rng_seed": 1})
    with pytest.raises(ConfigError):
        tiny(dataset={"kind": "normal", "size": 10})
    p = tmp_path / "c.yaml"
    p.write_text("methods: [split]\nrepetitons: 3\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_config_file_roundtrip(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("dataset: {kind: exponential, n: 1000}\nmethods: [oracle, cocp]\nrepetitions: 2\n"
                 "cocp: {T: 3, beta: 0.02}\n")
    cfg = load_config(p)
    assert cfg.cocp_config().T == 3 and cfg.cocp_config().beta == 0.02
    q = tmp_path / "c.json"
    q.write_text(json.dumps({"methods": ["split"], "alpha": 0.2}))
    assert load_config(q).alpha == 0.2


@pytest.mark.parametrize("kw", [dict(methods=["magic"]), dict(methods=[]), dict(repetitions=0),
                                dict(alpha=0.0), dict(metrics=["rmse"]),
                                dict(dataset={"kind": "gamma"}), dict(dataset={"n": 3})])
def test_bad_config_values(kw):
    with pytest.raises(ConfigError):
        tiny(**kw)


def test_oracle_needs_synthetic_data():
    with pytest.raises(ConfigError):
        tiny(dataset={"csv": "x.csv", "target": "y"}, methods=["oracle"])


def test_cocp_overrides_reach_config():
    c = tiny(cocp={**TINY_COCP, "beta": 0.05, "K": 4}).cocp_config()
    assert (c.beta, c.K, c.hidden, c.phase.max_epochs, c.warmup.max_epochs) == (0.05, 4, (8, 8), 3, 4)


def test_stream_seeds_are_distinct_and_stable():
    seeds = {stream_seed(0, r, role) for r in range(20) for role in ("data", "split", "init:cocp")}
    assert len(seeds) == 60
    assert stream_seed(3, 1, "data") == stream_seed(3, 1, "data")
    assert all(0 <= s < 2**32 for s in seeds)


# --- runs --------------------------------------------------------------------------------

def test_single_rep_summary_has_zero_std(tmp_path):
    summary, rows = run_experiment(tiny(out=str(tmp_path)))
    assert [r["status"] for r in rows] == ["ok"] * 3
    for e in summary:
        assert e["coverage_std"] == 0.0 and e["n_ok"] == 1
    assert len(read_rows(tmp_path / "results.csv")) == 3
    assert json.loads((tmp_path / "summary.json").read_text())[0]["method"] == "split"


def test_oracle_rerun_is_byte_identical(tmp_path):
    cfg = tiny(methods=["oracle"], repetitions=3, metrics=["conmae", "msce", "wsc", "ert"],
               wsc_directions=20, dataset={"kind": "lognormal", "n": 1000})
    run_experiment(cfg.replace(out=str(tmp_path / "a")))
    run_experiment(cfg.replace(out=str(tmp_path / "b")))
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()
    rows = read_rows(tmp_path / "a" / "results.csv")
    assert all(float(r["conmae"]) <= 1e-6 for r in rows)


def test_failed_fit_is_tagged_and_run_continues(monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("diverged")

    monkeypatch.setattr(experiment, "fit_cqr_baseline", boom)
    summary, rows = run_experiment(tiny(repetitions=2))
    cqr = [r for r in rows if r["method"] == "cqr"]
    assert all(r["status"] == "error:RuntimeError:diverged" for r in cqr)
    assert all(r["status"] == "ok" for r in rows if r["method"] != "cqr")
    entry = next(e for e in summary if e["method"] == "cqr")
    assert entry["n_failed"] == 2 and entry["coverage"] is None


def test_summary_skips_infinite_lengths():
    rows = [{"method": "m", "status": "ok", "coverage": 0.9, "length": 2.0},
            {"method": "m", "status": "infinite_interval", "coverage": 1.0, "length": float("inf")}]
    e = summarize(rows)[0]
    assert e["length"] == 2.0 and e["coverage"] == pytest.approx(0.95)


def test_ablation_writes_t_column(tmp_path):
    summary, rows = run_ablation_T(tiny(out=str(tmp_path)), T_values=(0, 2))
    assert [e["T"] for e in summary] == [0, 2]
    written = read_rows(tmp_path / "ablation.csv")
    assert [r["T"] for r in written] == ["0", "2"]
    assert all(r["method"] == "cocp" for r in written)


def test_csv_dataset_run(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(500, 3))
    y = X[:, 0] + 0.3 * rng.normal(size=500)
    p = tmp_path / "d.csv"
    p.write_text("a,b,c,y\n" + "\n".join(",".join(map(str, r)) for r in np.column_stack([X, y])) + "\n")
    summary, rows = run_experiment(tiny(dataset={"csv": str(p), "target": "y"},
                                        metrics=["conmae", "msce"]))
    assert all(r["status"] == "ok" for r in rows)
    assert all(r["conmae"] is None and r["msce"] is not None for r in rows)


# --- CLI ------------------------------------------------------------------------------------

def test_cli_oracle(tmp_path, capsys):
    code = cli.main(["oracle", "--dataset", "exponential", "--n", "2000", "--reps", "2",
                     "--fast-metrics", "--out", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "oracle" in out
    rows = read_rows(tmp_path / "results.csv")
    assert len(rows) == 2 and all(r["msce"] == "" for r in rows)


def test_cli_run_with_config(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"dataset": {"kind": "normal", "n": 600}, "methods": ["split", "cocp"],
                               "repetitions": 1, "train": TINY_TRAIN, "cocp": TINY_COCP}))
    assert cli.main(["run", "--config", str(cfg), "--fast-metrics", "--out", str(tmp_path / "o")]) == 0
    assert len(read_rows(tmp_path / "o" / "results.csv")) == 2


def test_cli_config_error_exit_code(tmp_path, capsys):
    assert cli.main(["run", "--dataset", "some.csv"]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_ablate(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"dataset": {"kind": "normal", "n": 600}, "repetitions": 1,
                               "train": TINY_TRAIN, "cocp": TINY_COCP}))
    assert cli.main(["ablate-t", "--config", str(cfg), "--t-values", "0,1", "--beta", "0.05",
                     "--fast-metrics", "--out", str(tmp_path / "o")]) == 0
    assert [r["T"] for r in read_rows(tmp_path / "o" / "ablation.csv")] == ["0", "1"]


def test_cli_theory_passes(tmp_path, capsys):
    out = tmp_path / "t.json"
    assert cli.main(["theory", "--families", "exponential", "--skip-trained", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "FAIL" not in text and "checks passed" in text
    assert all(r["passed"] for r in json.loads(out.read_text()))


def test_cli_theory_fails_on_broken_radius(monkeypatch, capsys):
    orig = ConditionalFamily.folded_radius
    monkeypatch.setattr(ConditionalFamily, "folded_radius",
                        lambda self, x, c, alpha: 1.05 * orig(self, x, c, alpha))
    assert cli.main(["theory", "--families", "normal", "--skip-trained"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_module_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "cocp", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("run", "oracle", "ablate-t", "theory"):
        assert cmd in res.stdout
