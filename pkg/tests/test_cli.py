import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from masgan.calibration import Grid, calibrate, read_matrix_csv
from masgan.cli import main
from masgan.config import load_config, parse_config
from masgan.errors import ConfigError
from masgan.evaluation import ks_two_sample
from masgan.gan import realism_score
from masgan.manifest import file_digest, verify_manifest
from masgan.marketdata import NormStats, load_dataset
from masgan.nn import Network
from masgan.simulator import SimParams

CONFIG = {
    "output_dir": "out",
    "seed": 3,
    "simulator": {"n_noise": 60, "value_rate": "1e-12", "n_value": 4, "session_seconds": 900},
    "data": {"bar_seconds": 60, "window_len": 10, "sessions": 4},
    "gan": {"channels": 8, "kernel": 3, "latent_dim": 10, "batch_size": 4, "max_iterations": 3, "eval_interval": 2, "eval_samples": 8},
    "calibration": {"n_values": [40, 60], "lambda_values": [1e-12, 3e-12], "seeds": [0, 1]},
    "evaluation": {"n_samples": 16},
}


def write_config(tmp_path, cfg=CONFIG, name="run.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg), encoding="utf-8")
    return p


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    cfg = write_config(root)
    for cmd in ("simulate", "build-dataset", "train", "calibrate", "evaluate"):
        assert main([cmd, "--config", str(cfg)]) == 0, cmd
    return root, cfg


def test_simulate_outputs_and_manifest(pipeline):
    root, _ = pipeline
    csvs = sorted((root / "out" / "sessions").glob("*.csv"))
    assert [p.name for p in csvs] == [f"session_{s:06d}.csv" for s in (3, 4, 5, 6)]
    m = json.loads((root / "out" / "manifests" / "simulate.json").read_text())
    assert m["seeds"] == [3, 4, 5, 6]
    for rel, digest in m["artifacts"].items():
        assert file_digest(root / "out" / rel) == digest
    assert verify_manifest(root / "out" / "manifests" / "simulate.json") == []


def test_every_manifest_verifies(pipeline):
    root, _ = pipeline
    for name in ("simulate", "build-dataset", "train", "calibrate", "evaluate"):
        m = root / "out" / "manifests" / f"{name}.json"
        assert verify_manifest(m) == [], name
        d = json.loads(m.read_text())
        assert d["started"] <= d["finished"] and d["config_hash"]


def test_rerun_byte_identical(pipeline, tmp_path):
    root, _ = pipeline
    cfg = write_config(tmp_path)
    for cmd in ("simulate", "build-dataset", "train", "calibrate", "evaluate"):
        assert main([cmd, "--config", str(cfg), "--jobs", "2"]) == 0
    a = json.loads((root / "out" / "manifests" / "evaluate.json").read_text())["artifacts"]
    for name in ("simulate", "build-dataset", "train", "calibrate", "evaluate"):
        first = json.loads((root / "out" / "manifests" / f"{name}.json").read_text())
        second = json.loads((tmp_path / "out" / "manifests" / f"{name}.json").read_text())
        assert first["artifacts"] == second["artifacts"], name
    assert a


def test_dataset_matches_sessions(pipeline):
    root, _ = pipeline
    ds = load_dataset(root / "out" / "dataset")
    assert len(ds.vectors) == 4 and ds.window_len == 10
    X = ds.as_array()
    assert abs(X[:, :10].mean()) < 1e-9 and abs(X[:, :10].std() - 1) < 1e-9


def test_train_artifacts(pipeline):
    root, _ = pipeline
    out = root / "out"
    lines = (out / "train_report.csv").read_text().splitlines()
    assert len(lines) == 1 + 3
    for name in ("training_curves.svg", "train_snapshots.csv"):
        assert (out / name).is_file()
    critic = Network.load(out / "checkpoints" / "critic")
    assert critic.meta["window_len"] == 10 and critic.meta["bar_seconds"] == 60
    assert NormStats.from_dict(critic.meta["norm"]) == load_dataset(out / "dataset").norm


def test_calibration_matches_scripted_rerun(pipeline):
    root, cfg_path = pipeline
    out = root / "out"
    critic = Network.load(out / "checkpoints" / "critic")
    cfg = load_config(cfg_path)
    res = calibrate(Grid([40, 60], [1e-12, 3e-12]), cfg.simulator, [0, 1], critic, NormStats.from_dict(critic.meta["norm"]))
    grid, m = read_matrix_csv(out / "calibration" / "score_matrix.csv")
    assert m.shape == (2, 2)
    np.testing.assert_array_equal(m, res.score_matrix.mean_score)
    js = json.loads((out / "calibration" / "calibration.json").read_text())
    bi, bj = js["best_point"]["row"], js["best_point"]["col"]
    assert (bi, bj) == res.best_index
    assert f'id="argmax-row{bi}-col{bj}"' in (out / "calibration" / "heatmap.svg").read_text()
    assert js["seeds"] == [0, 1] and js["checkpoint_hash"] and js["config_hash"]


def test_evaluate_bundle(pipeline):
    root, _ = pipeline
    ev = root / "out" / "evaluation"
    for name in ("scores_real.csv", "scores_generated.csv", "scores_random.csv", "ks_report.json", "score_kde.svg"):
        assert (ev / name).is_file(), name
    for sub in ("real", "generated"):
        for name in ("returns_hist_1.csv", "returns_stats.json", "returns_hist.svg"):
            assert (ev / sub / name).is_file()
    real = np.loadtxt(ev / "scores_real.csv", skiprows=1)
    gen = np.loadtxt(ev / "scores_generated.csv", skiprows=1)
    ks = json.loads((ev / "ks_report.json").read_text())
    direct = ks_two_sample(real, gen)
    assert ks["statistic"] == direct.statistic and ks["p_value"] == direct.p_value
    swapped = ks_two_sample(gen, real)
    assert swapped.statistic == ks["statistic"] and swapped.p_value == ks["p_value"]
    critic = Network.load(root / "out" / "checkpoints" / "critic")
    X = load_dataset(root / "out" / "dataset").as_array()
    np.testing.assert_array_equal(real, realism_score(critic, X))


def test_validation_lists_every_field(tmp_path, capsys):
    bad = json.loads(json.dumps(CONFIG))
    bad["simulator"]["n_noise"] = -1
    bad["simulator"]["tick_size"] = 0
    bad["gan"]["n_critic"] = 0
    bad["data"]["window_len"] = 0
    bad["bogus"] = 1
    cfg = write_config(tmp_path, bad)
    assert main(["simulate", "--config", str(cfg)]) == 2
    err = capsys.readouterr().err
    for field in ("n_noise", "tick_size", "n_critic", "window_len", "bogus"):
        assert field in err
    assert not (tmp_path / "out").exists()


def test_yaml_exponent_without_dot_is_a_number():
    cfg = parse_config({**CONFIG, "simulator": {"value_rate": "1e-13"}})
    assert cfg.simulator.value_rate == 1e-13


def test_unknown_nested_field():
    with pytest.raises(ConfigError, match="simulator.ou.foo"):
        parse_config({**CONFIG, "simulator": {"ou": {"foo": 1}}})


def test_env_overrides_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("MASGAN_OUT", str(tmp_path / "elsewhere"))
    cfg = write_config(tmp_path, {**CONFIG, "data": {**CONFIG["data"], "sessions": 1}})
    assert main(["simulate", "--config", str(cfg)]) == 0
    assert (tmp_path / "elsewhere" / "sessions" / "session_000003.csv").is_file()
    assert not (tmp_path / "out").exists()


def test_seed_flag(tmp_path):
    cfg = write_config(tmp_path, {**CONFIG, "data": {**CONFIG["data"], "sessions": 2}})
    assert main(["simulate", "--config", str(cfg), "--seed", "10"]) == 0
    assert sorted(p.name for p in (tmp_path / "out" / "sessions").glob("*.csv")) == ["session_000010.csv", "session_000011.csv"]


def test_missing_inputs_exit_3(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["train", "--config", str(cfg)]) == 3
    assert main(["calibrate", "--config", str(cfg)]) == 3


def test_window_mismatch_is_compatibility_error(pipeline, tmp_path, capsys):
    root, _ = pipeline
    other = {**CONFIG, "output_dir": str(root / "out"), "data": {**CONFIG["data"], "window_len": 8}}
    cfg = write_config(tmp_path, other)
    assert main(["calibrate", "--config", str(cfg)]) == 3
    assert "CompatibilityError" in capsys.readouterr().err


def test_mixed_bar_lengths_rejected(pipeline, tmp_path, capsys):
    root, _ = pipeline
    sessions = root / "out" / "sessions"
    index = json.loads((sessions / "sessions.json").read_text())
    src = tmp_path / "in"
    src.mkdir()
    for name in index:
        (src / name).write_bytes((sessions / name).read_bytes())
    first = sorted(index)[0]
    index[first]["bar_seconds"] = 30
    (src / "sessions.json").write_text(json.dumps(index))
    cfg = write_config(tmp_path, {**CONFIG, "data": {**CONFIG["data"], "input_dir": str(src)}})
    assert main(["build-dataset", "--config", str(cfg)]) == 3
    assert "mix bar lengths" in capsys.readouterr().err


def test_simparams_round_trip_through_config():
    cfg = parse_config(CONFIG)
    assert cfg.simulator == SimParams(n_noise=60, value_rate=1e-12, n_value=4, session_seconds=900)


@pytest.mark.parametrize("name", ["quickstart", "recovery"])
def test_shipped_configs_parse(name, monkeypatch):
    monkeypatch.delenv("MASGAN_OUT", raising=False)
    path = Path(__file__).resolve().parent.parent / "configs" / f"{name}.yaml"
    cfg = load_config(path)
    assert cfg.grid.shape == (3, 3)
    assert cfg.output_dir.resolve() == (path.parent.parent / "runs" / name).resolve()
