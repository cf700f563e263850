import json

import numpy as np
import pytest
import torch

from cssep.checkpoint import load_checkpoint, save_checkpoint
from cssep.config import apply_overrides, dataset_config, load_config, train_config
from cssep.dsp import FeatureStats, StftConfig, Waveform, read_wav, write_wav
from cssep.errors import (
    CheckpointError,
    ConfigurationError,
    InvalidInputError,
    UndefinedMetricError,
)
from cssep.evaluate import (
    EvalReport,
    best_assignment_si_snr,
    condition_label,
    evaluate,
    evaluate_mixture_baseline,
    si_snr,
)
from cssep.model import CounterConfig, build_counter, build_separator, PROFILES
from cssep.train import TrainConfig, compute_feature_stats, pool_counter_labels, train
from cssep import cli

TINY_TRAIN = dict(steps=2, batch_size=2, val_every=2, stats_examples=2, profile="toy")


# ---------------------------------------------------------------------------
# SI-SNR


def test_si_snr_perfect_is_capped():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(8000)
    assert si_snr(x, x) == 60.0
    assert si_snr(2.0 * x, x) == 60.0  # scale invariance at the cap


def test_si_snr_scale_invariance():
    rng = np.random.default_rng(1)
    ref = rng.standard_normal(8000)
    est = ref + 0.1 * rng.standard_normal(8000)
    assert abs(si_snr(est, ref) - si_snr(5.0 * est, ref)) < 1e-9


def test_si_snr_known_noise_level():
    rng = np.random.default_rng(2)
    ref = rng.standard_normal(16000)
    noise = rng.standard_normal(16000)
    noise *= np.sqrt(np.sum(ref**2) / np.sum(noise**2) / 10.0)  # 10 dB down
    value = si_snr(ref + noise, ref)
    assert abs(value - 10.0) < 0.5


def test_si_snr_zero_reference_error():
    with pytest.raises(UndefinedMetricError):
        si_snr(np.ones(100), np.zeros(100))


def test_si_snr_length_mismatch():
    with pytest.raises(InvalidInputError):
        si_snr(np.ones(10), np.ones(11))


def test_best_assignment_prefers_correct_pairing():
    rng = np.random.default_rng(3)
    refs = rng.standard_normal((2, 8000))
    streams = refs[[1, 0]] + 0.01 * rng.standard_normal((2, 8000))
    score, perm, _ = best_assignment_si_snr(streams, refs)
    assert perm == (1, 0)
    assert score > 30.0


# ---------------------------------------------------------------------------
# reports


def test_condition_labels():
    assert condition_label(0.0) == "0S"
    assert condition_label(0.3) == "30%"


def test_eval_report_replayable():
    per_example = [
        {"id": "a", "condition": "0S", "si_snr": 12.5},
        {"id": "b", "condition": "30%", "si_snr": 4.25},
        {"id": "c", "condition": "30%", "si_snr": 6.75},
    ]
    report = EvalReport.from_scores("utterance", per_example)
    replay = EvalReport.from_scores("utterance", report.per_example)
    assert replay.to_json() == report.to_json()
    assert report.conditions["30%"]["count"] == 2
    assert abs(report.conditions["30%"]["mean_si_snr"] - 5.5) < 1e-12


# ---------------------------------------------------------------------------
# config


def test_config_load_and_overrides(tmp_path):
    path = tmp_path / "conf.yaml"
    path.write_text("train:\n  steps: 12\n  criterion: pit\n")
    data = load_config(path)
    apply_overrides(data, ["train.steps=20", "train.multiresolution=false"])
    cfg = train_config(data["train"], train_manifest="m.jsonl")
    assert cfg.steps == 20 and cfg.criterion == "pit" and cfg.multiresolution is False


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigurationError):
        train_config({"stepz": 5}, train_manifest="m.jsonl")


def test_config_rejects_bad_values():
    with pytest.raises(ConfigurationError):
        TrainConfig(train_manifest="m", criterion="nearest")
    with pytest.raises(ConfigurationError):
        TrainConfig(train_manifest="m", profile="huge")


def test_dataset_config_builder():
    cfg = dataset_config({"seed": 3, "sim": {"overlap_ratios": [0.0, 0.4],
                                             "overlap_weights": [0.5, 0.5]}})
    assert cfg.seed == 3
    assert cfg.sim.overlap_ratios == (0.0, 0.4)


def test_criterion_matrix_from_config():
    # the five training configurations exist purely as configuration
    matrix = [
        ("pit", False), ("lbt-azimuth", False), ("pit", True),
        ("lbt-azimuth", True), ("lbt-distance", True),
    ]
    for criterion, multires in matrix:
        cfg = train_config(
            {"criterion": criterion, "multiresolution": multires},
            train_manifest="m.jsonl",
        )
        assert (cfg.criterion, cfg.multiresolution) == (criterion, multires)


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_roundtrip(tmp_path):
    separator = build_separator(PROFILES["toy"], seed=0)
    counter = build_counter(CounterConfig(encoder=PROFILES["toy"], hidden_size=8), seed=0)
    stats = FeatureStats(
        mean=np.random.default_rng(0).standard_normal((15, 257)),
        variance=np.ones((15, 257)),
    )
    path = tmp_path / "ckpt.pt"
    save_checkpoint(path, separator, stats, StftConfig(), seed=5, counter=counter,
                    history=[{"step": 1, "loss": 2.0}])
    bundle = load_checkpoint(path)
    assert bundle.seed == 5
    assert bundle.counter is not None
    np.testing.assert_allclose(bundle.feature_stats.mean, stats.mean)
    for pa, pb in zip(separator.parameters(), bundle.separator.parameters()):
        assert torch.equal(pa, pb)
    assert bundle.history[0]["loss"] == 2.0


def test_checkpoint_missing_file():
    with pytest.raises(CheckpointError):
        load_checkpoint("/nonexistent/ckpt.pt")


def test_checkpoint_bad_version(tmp_path):
    path = tmp_path / "bad.pt"
    torch.save({"format_version": 99}, path)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


# ---------------------------------------------------------------------------
# training smoke


def test_compute_feature_stats(tiny_manifest):
    from cssep.data import load_manifest

    records = load_manifest(tiny_manifest)
    stats = compute_feature_stats(records, StftConfig(), limit=2)
    assert stats.mean.shape == (15, 257)
    assert np.all(stats.variance > 0)


def test_train_smoke_and_checkpoint(tiny_manifest, tmp_path):
    cfg = TrainConfig(
        train_manifest=str(tiny_manifest),
        checkpoint_out=str(tmp_path / "ckpt.pt"),
        criterion="lbt-azimuth", multiresolution=True, seed=3, **TINY_TRAIN,
    )
    path = train(cfg)
    bundle = load_checkpoint(path)
    assert bundle.separator_config == PROFILES["toy"]
    assert len(bundle.history) == 2
    log = path.with_suffix(".log.jsonl").read_text().splitlines()
    assert any("val_loss" in line for line in log)


def test_train_deterministic(tiny_manifest, tmp_path):
    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        losses = []
        for run in range(2):
            cfg = TrainConfig(
                train_manifest=str(tiny_manifest),
                checkpoint_out=str(tmp_path / f"ckpt{run}.pt"),
                criterion="pit", multiresolution=False, seed=11, **TINY_TRAIN,
            )
            path = train(cfg)
            bundle = load_checkpoint(path)
            losses.append([h["loss"] for h in bundle.history])
        assert losses[0] == losses[1]
    finally:
        torch.set_num_threads(threads)


def test_pool_counter_labels_majority():
    labels = np.array([2, 2, 1, 0, 1, 1, 1, 0])
    pooled = pool_counter_labels(labels, 4)
    assert pooled.tolist() == [2, 1]
    # ties resolve toward fewer speakers
    assert pool_counter_labels(np.array([0, 2]), 2).tolist() == [0]


# ---------------------------------------------------------------------------
# evaluation plumbing


def test_evaluate_references_as_estimates(tiny_manifest):
    # feeding the references back as streams hits the SI-SNR cap everywhere
    from cssep.data import load_example, load_manifest
    from cssep.evaluate import _score_records

    records = load_manifest(tiny_manifest)[:3]

    def perfect(example):
        return np.stack([ref.samples[0] for ref in example.references])

    report = _score_records(records, perfect, "utterance")
    for row in report.per_example:
        assert row["si_snr"] == 60.0


def test_evaluate_partitions_match_manifest(tiny_manifest, tmp_path):
    cfg = TrainConfig(
        train_manifest=str(tiny_manifest),
        checkpoint_out=str(tmp_path / "ckpt.pt"),
        criterion="lbt-azimuth", multiresolution=False, seed=0, **TINY_TRAIN,
    )
    bundle = load_checkpoint(train(cfg))
    report = evaluate(bundle, tiny_manifest, mode="utterance", limit=4)
    assert report.overall["count"] == 4
    assert sum(c["count"] for c in report.conditions.values()) == 4
    baseline = evaluate_mixture_baseline(tiny_manifest, limit=4)
    assert baseline.overall["count"] == 4


# ---------------------------------------------------------------------------
# CLI


def test_cli_count_params(capsys):
    assert cli.main(["count-params", "--profile", "paper"]) == 0
    out = capsys.readouterr().out.strip()
    assert 6_555_000 <= int(out) <= 7_245_000


def test_cli_usage_error():
    assert cli.main(["train"]) == 1  # missing required args


def test_cli_runtime_error(tmp_path):
    rc = cli.main([
        "train", "--manifest", str(tmp_path / "missing.jsonl"),
        "--out", str(tmp_path / "x.pt"),
    ])
    assert rc == 2


def test_cli_simulate_train_separate_evaluate(tmp_path, capsys):
    data_dir = tmp_path / "data"
    rc = cli.main([
        "simulate", "--out", str(data_dir), "--count", "3",
        "--set", "synthetic_utterances=6",
        "--set", "utterance_seconds=[2.5, 2.8]",
    ])
    assert rc == 0
    manifest = data_dir / "manifest.jsonl"
    assert manifest.exists()

    ckpt = tmp_path / "ckpt.pt"
    rc = cli.main([
        "train", "--manifest", str(manifest), "--out", str(ckpt),
        "--criterion", "lbt-azimuth", "--steps", "2",
        "--set", "batch_size=2", "--set", "stats_examples=2", "--set", "val_every=2",
    ])
    assert rc == 0 and ckpt.exists()

    record = json.loads(manifest.read_text().splitlines()[0])
    out_dir = tmp_path / "sep"
    rc = cli.main([
        "separate", "--checkpoint", str(ckpt),
        "--input", str(data_dir / record["mixture_path"]),
        "--out-dir", str(out_dir),
    ])
    assert rc == 0
    assert (out_dir / "stream1.wav").exists()
    assert (out_dir / "stream2.wav").exists()
    trace = json.loads((out_dir / "trace.json").read_text())
    assert isinstance(trace, list) and "permutation" in trace[0]
    mix = read_wav(data_dir / record["mixture_path"])
    assert read_wav(out_dir / "stream1.wav").num_samples == mix.num_samples

    report_path = tmp_path / "report.json"
    rc = cli.main([
        "evaluate", "--checkpoint", str(ckpt), "--manifest", str(manifest),
        "--mode", "utterance", "--limit", "2", "--out", str(report_path),
    ])
    assert rc == 0 and report_path.exists()
    report = json.loads(report_path.read_text())
    assert report["overall"]["count"] == 2
