# Config resolution rules and the command-line entry points.
import json

import numpy as np
import pytest

from ernie_lab.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_OK, main
from ernie_lab.config import (
    ConfigError,
    echo_config,
    load_config,
    resolve_config,
)


def test_empty_doc_resolves_to_defaults():
    cfg = resolve_config({})
    assert cfg.algo == "qcombo"
    assert cfg.env == "gridq"
    assert cfg.n_agents == 4
    assert cfg.seeds == [0]
    assert cfg["ernie"]["enabled"] is False
    assert cfg["gamma"] == 0.95


def test_coopnav_default_agents():
    cfg = resolve_config({"algo": "ddpg", "env": "coopnav"})
    assert cfg.n_agents == 3


def test_algo_env_compatibility():
    with pytest.raises(ConfigError):
        resolve_config({"algo": "qcombo", "env": "coopnav"})
    with pytest.raises(ConfigError):
        resolve_config({"algo": "ddpg", "env": "gridq"})
    with pytest.raises(ConfigError):
        resolve_config({"algo": "mf_ddpg", "env": "gridq"})


def test_ernie_a_requires_gridq():
    with pytest.raises(ConfigError):
        resolve_config({"algo": "ddpg", "env": "coopnav",
                        "ernie_a": {"enabled": True}})
    cfg = resolve_config({"ernie_a": {"enabled": True}})
    assert cfg["ernie_a"]["enabled"] is True


def test_gridq_agents_must_be_square():
    with pytest.raises(ConfigError):
        resolve_config({"n_agents": 5})
    cfg = resolve_config({"n_agents": 9})
    assert cfg.n_agents == 9


def test_start_frac_range_checked():
    cfg = resolve_config({"ernie": {"start_frac": 0.5}})
    assert cfg["ernie"]["start_frac"] == 0.5
    with pytest.raises(ConfigError):
        resolve_config({"ernie": {"start_frac": 1.5}})
    with pytest.raises(ConfigError):
        resolve_config({"ernie": {"start_frac": -0.1}})


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        resolve_config({"learning_rate": 0.1})
    with pytest.raises(ConfigError):
        resolve_config({"ernie": {"epsilonn": 0.5}})


def test_resolved_config_round_trips(tmp_path):
    cfg = resolve_config({"algo": "ddpg", "env": "coopnav",
                          "ernie": {"enabled": True, "epsilon": 0.3}})
    path = echo_config(cfg, tmp_path)
    again = load_config(path)
    assert again.raw == cfg.raw
    assert again.to_json() == cfg.to_json()


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(arr)


def _write_cfg(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def test_cli_train_and_evaluate_ok(tmp_path):
    cfg_path = _write_cfg(tmp_path, {
        "algo": "ddpg", "env": "coopnav", "train_steps": 5,
        "warmup": 2, "batch": 4,
        "eval": {"obs_noise_sigmas": [0.0], "episodes": 2},
    })
    out = tmp_path / "out"
    assert main(["train", "--config", cfg_path, "--out", str(out)]) == EXIT_OK
    assert (out / "config.resolved.json").exists()
    assert (out / "seed_0" / "metrics.csv").exists()
    ckpt = out / "seed_0" / "ckpt_000005"
    assert main(["evaluate", "--config", cfg_path, "--checkpoint", str(ckpt),
                 "--out", str(out)]) == EXIT_OK
    assert (out / "eval" / "results.csv").exists()
    assert (out / "eval" / "summary.json").exists()


def test_cli_train_bad_config_exits_2(tmp_path):
    cfg_path = _write_cfg(tmp_path, {"algo": "qcombo", "env": "coopnav"})
    assert main(["train", "--config", cfg_path,
                 "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_cli_evaluate_env_mismatch_exits_2(tmp_path):
    train_cfg = _write_cfg(tmp_path, {
        "algo": "ddpg", "env": "coopnav", "train_steps": 2, "warmup": 1,
        "batch": 2}, name="train.json")
    out = tmp_path / "out"
    assert main(["train", "--config", train_cfg, "--out", str(out)]) == EXIT_OK
    other_cfg = _write_cfg(tmp_path, {"algo": "qcombo", "env": "gridq"},
                           name="other.json")
    ckpt = out / "seed_0" / "ckpt_000002"
    assert main(["evaluate", "--config", other_cfg, "--checkpoint", str(ckpt),
                 "--out", str(out)]) == EXIT_CONFIG


def test_cli_certify_writes_report(tmp_path):
    out = tmp_path / "cert"
    assert main(["certify", "--instances", "8", "--seed", "0",
                 "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "theory_report.json").read_text())
    assert report["passed"] is True
    for key in ("theorem1", "theorem2", "theorem3", "negative_control"):
        assert report[key]["passed"] is True


def test_cli_out_env_var(tmp_path, monkeypatch):
    out = tmp_path / "envout"
    monkeypatch.setenv("ERNIE_LAB_OUT", str(out))
    cfg_path = _write_cfg(tmp_path, {
        "algo": "ddpg", "env": "coopnav", "train_steps": 1, "warmup": 1,
        "batch": 2})
    assert main(["train", "--config", cfg_path]) == EXIT_OK
    assert (out / "seed_0" / "metrics.csv").exists()
    # explicit --out beats the environment variable
    flag_out = tmp_path / "flagout"
    assert main(["train", "--config", cfg_path, "--out", str(flag_out)]) == EXIT_OK
    assert (flag_out / "seed_0" / "metrics.csv").exists()


def test_cli_seed_override(tmp_path):
    cfg_path = _write_cfg(tmp_path, {
        "algo": "ddpg", "env": "coopnav", "train_steps": 1, "warmup": 1,
        "batch": 2, "seeds": [3, 4]})
    out = tmp_path / "out"
    assert main(["train", "--config", cfg_path, "--seed", "7",
                 "--out", str(out)]) == EXIT_OK
    assert (out / "seed_7" / "metrics.csv").exists()
    assert not (out / "seed_3").exists()
