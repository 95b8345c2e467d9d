# Trainer and evaluation harness behavior: artifacts, byte determinism, and
# the disabled-regularizer identity.
import json
from pathlib import Path

import numpy as np
import pytest

from ernie_lab.config import resolve_config
from ernie_lab.evaluate import evaluate_checkpoint, load_checkpoint, sweep_specs
from ernie_lab.train import DDPG_HEADER, QCOMBO_HEADER, train_run


def _ddpg_doc(**over):
    doc = {"algo": "ddpg", "env": "coopnav", "train_steps": 250,
           "warmup": 200, "batch": 8, "hidden": 8,
           "eval": {"obs_noise_sigmas": [0.0, 0.2], "episodes": 2}}
    doc.update(over)
    return doc


def _qcombo_doc(**over):
    doc = {"algo": "qcombo", "env": "gridq", "train_steps": 250,
           "warmup": 200, "batch": 8, "hidden": 8,
           "eval": {"obs_noise_sigmas": [0.0, 0.2], "episodes": 2}}
    doc.update(over)
    return doc


def test_zero_steps_writes_initial_artifacts(tmp_path):
    cfg = resolve_config(_ddpg_doc(train_steps=0))
    res = train_run(cfg, tmp_path)
    run_dir = Path(res[0]["out_dir"])
    metrics = (run_dir / "metrics.csv").read_text().splitlines()
    assert metrics == [DDPG_HEADER]
    ckpt = run_dir / "ckpt_000000"
    assert ckpt.is_dir()
    manifest = json.loads((ckpt / "manifest.json").read_text())
    assert manifest["step"] == 0 and manifest["algo"] == "ddpg"


def test_metrics_headers():
    assert QCOMBO_HEADER.startswith("step,seed,episodic_return_mean")
    assert "loss_ind" in QCOMBO_HEADER and "loss_critic" in DDPG_HEADER
    assert QCOMBO_HEADER.endswith("attack_norm_mean")


@pytest.mark.parametrize("doc_fn", [_ddpg_doc, _qcombo_doc])
def test_rerun_is_byte_identical(doc_fn, tmp_path):
    cfg = resolve_config(doc_fn())
    a = Path(train_run(cfg, tmp_path / "a")[0]["out_dir"])
    b = Path(train_run(cfg, tmp_path / "b")[0]["out_dir"])
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    for f in sorted(p.name for p in (a / "ckpt_000250").iterdir()):
        if f == "manifest.json":
            continue
        assert (a / "ckpt_000250" / f).read_bytes() == \
            (b / "ckpt_000250" / f).read_bytes()


@pytest.mark.parametrize("doc_fn", [_ddpg_doc, _qcombo_doc])
def test_disabled_regularizer_matches_baseline(doc_fn, tmp_path):
    # lambda=0, epsilon=0, K=0 must leave the update stream untouched
    base = resolve_config(doc_fn())
    off = resolve_config(doc_fn(ernie={"enabled": True, "epsilon": 0.0,
                                       "k_steps": 0, "lambda": 0.0}))
    a = Path(train_run(base, tmp_path / "base")[0]["out_dir"])
    b = Path(train_run(off, tmp_path / "off")[0]["out_dir"])
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()


def test_ernie_changes_metrics(tmp_path):
    base = resolve_config(_ddpg_doc())
    reg = resolve_config(_ddpg_doc(ernie={"enabled": True, "epsilon": 0.5,
                                          "k_steps": 1, "lambda": 0.1,
                                          "reg_rows": 4}))
    a = Path(train_run(base, tmp_path / "base")[0]["out_dir"])
    b = Path(train_run(reg, tmp_path / "reg")[0]["out_dir"])
    assert (a / "metrics.csv").read_bytes() != (b / "metrics.csv").read_bytes()


def test_start_frac_delays_regularizer(tmp_path):
    # rows before the start step must match the baseline stream exactly
    base = resolve_config(_ddpg_doc(log_interval=10))
    late = resolve_config(_ddpg_doc(log_interval=10,
                                    ernie={"enabled": True, "epsilon": 0.5,
                                           "k_steps": 1, "lambda": 0.1,
                                           "reg_rows": 4, "start_frac": 0.88}))
    a = Path(train_run(base, tmp_path / "base")[0]["out_dir"])
    b = Path(train_run(late, tmp_path / "late")[0]["out_dir"])
    rows_a = (a / "metrics.csv").read_text().splitlines()
    rows_b = (b / "metrics.csv").read_text().splitlines()
    start = 0.88 * 250
    for ra, rb in zip(rows_a[1:], rows_b[1:]):
        if int(ra.split(",")[0]) < start:
            assert ra == rb
    assert rows_a != rows_b


def test_sweep_specs_order_and_content():
    cfg = resolve_config(_qcombo_doc(eval={
        "obs_noise_sigmas": [0.5, 0.0, 0.2], "dynamics_scales": [1.0, 0.8],
        "malicious_rates": [0.0, 0.05], "malicious_mode": "adversarial",
        "episodes": 2}))
    specs = sweep_specs(cfg)
    sigmas = [s.obs_noise_sigma for s in specs if s.dynamics_scale == 1.0
              and s.malicious_rate == 0.0]
    assert sigmas == sorted(sigmas)
    assert any(s.dynamics_scale == 0.8 for s in specs)
    assert any(s.malicious_rate == 0.05 and s.malicious_mode == "adversarial"
               for s in specs)


def test_evaluate_outputs_rows_per_spec(tmp_path):
    cfg = resolve_config(_ddpg_doc(train_steps=5, warmup=2, batch=4))
    res = train_run(cfg, tmp_path)
    out = tmp_path / "eval"
    doc = evaluate_checkpoint(cfg, res[0]["final_checkpoint"], out)
    lines = (out / "results.csv").read_text().splitlines()
    n_specs = len(sweep_specs(cfg))
    assert len(lines) == 1 + 2 * n_specs  # header + episodes per spec
    assert len(doc["specs"]) == n_specs
    for row in doc["specs"]:
        assert row["p10"] <= row["p50"] <= row["p90"]
    # repeat evaluation is byte identical
    out2 = tmp_path / "eval2"
    evaluate_checkpoint(cfg, res[0]["final_checkpoint"], out2)
    assert (out / "results.csv").read_bytes() == (out2 / "results.csv").read_bytes()


def test_checkpoint_round_trip(tmp_path):
    cfg = resolve_config(_qcombo_doc(train_steps=3, warmup=1, batch=4))
    res = train_run(cfg, tmp_path)
    ckpt = load_checkpoint(res[0]["final_checkpoint"])
    assert ckpt["manifest"]["env"] == "gridq"
    assert ckpt["manifest"]["step"] == 3
    assert len(ckpt["nets"]) >= 2


def test_evaluate_env_mismatch_raises(tmp_path):
    cfg = resolve_config(_ddpg_doc(train_steps=2, warmup=1, batch=2))
    res = train_run(cfg, tmp_path)
    other = resolve_config(_qcombo_doc())
    with pytest.raises(ValueError):
        evaluate_checkpoint(other, res[0]["final_checkpoint"], tmp_path / "e")


def test_mf_ddpg_runs_and_differs_from_ddpg(tmp_path):
    base = resolve_config(_ddpg_doc())
    mf = resolve_config(_ddpg_doc(algo="mf_ddpg",
                                  meanfield={"enabled": True},
                                  ernie={"enabled": True, "epsilon": 0.5,
                                         "k_steps": 1, "lambda": 0.1,
                                         "reg_rows": 4}))
    a = Path(train_run(base, tmp_path / "ddpg")[0]["out_dir"])
    b = Path(train_run(mf, tmp_path / "mf")[0]["out_dir"])
    assert (b / "metrics.csv").exists()
    assert (a / "metrics.csv").read_bytes() != (b / "metrics.csv").read_bytes()
