"""Training loops for the separator and the speaker counter."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .data import load_example, load_manifest, sample_crop_start, training_arrays
from .dsp import (
    FeatureStatsAccumulator,
    StftConfig,
    mixture_features,
    normalize_mixture,
)
from .errors import ConfigurationError, CssepError
from .losses import (
    lbt_assignment,
    lbt_loss,
    multires_loss,
    pit_loss,
    pit_multires_loss,
)
from .model import (
    PROFILES,
    CounterConfig,
    SeparatorOutput,
    build_counter,
    build_separator,
    count_params,
    pad_to_multiple,
)

CRITERIA = ("pit", "lbt-azimuth", "lbt-distance")


@dataclass
class TrainConfig:
    """Declarative training setup.

    criterion and multiresolution together select the training objective;
    every combination is runnable without code changes. profile picks the
    model size ("paper" or "toy").
    """

    train_manifest: str
    checkpoint_out: str = "checkpoint.pt"
    criterion: str = "lbt-azimuth"
    multiresolution: bool = True
    profile: str = "toy"
    steps: int = 500
    batch_size: int = 4
    learning_rate: float = 1e-3
    lr_halve_patience: int = 2
    seed: int = 0
    val_manifest: str | None = None
    val_every: int = 50
    val_examples: int = 8
    stats_examples: int = 200
    crop_seconds: float = 2.4
    log_path: str | None = None
    grad_clip: float = 5.0
    init_from: str | None = None
    counter_hidden: int = 64

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ConfigurationError(
                f"criterion must be one of {CRITERIA}, got {self.criterion!r}"
            )
        if self.profile not in PROFILES:
            raise ConfigurationError(f"unknown profile {self.profile!r}")
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigurationError("steps and batch_size must be positive")


def compute_feature_stats(records, stft_cfg: StftConfig, limit: int):
    """Streaming per-channel/per-bin moments over the normalized mixtures."""
    acc = None
    for record in records[: max(1, limit)]:
        example = load_example(record, stft_cfg)
        normalized, _ = normalize_mixture(example.mixture)
        features = mixture_features(normalized, stft_cfg)
        if acc is None:
            acc = FeatureStatsAccumulator(features.shape[0], features.shape[2])
        acc.add(features)
    return acc.finalize()


def _example_loss(cfg: TrainConfig, output: SeparatorOutput, targets: torch.Tensor,
                  meta, flags):
    if cfg.criterion == "pit":
        if cfg.multiresolution:
            loss, _, breakdown = pit_multires_loss(output, targets)
        else:
            loss, _, breakdown = pit_loss(output.final, targets)
        return loss, breakdown
    criterion = "azimuth" if cfg.criterion == "lbt-azimuth" else "distance"
    assign = lbt_assignment(meta, criterion, flags)
    if cfg.multiresolution:
        breakdown = multires_loss(output, targets, assign)
        return breakdown.total, breakdown
    loss, breakdown = lbt_loss(output.final, targets, assign)
    return loss, breakdown


class _BatchBuilder:
    def __init__(self, records, stats, stft_cfg, crop_samples, factor):
        self.records = records
        self.stats = stats
        self.stft_cfg = stft_cfg
        self.crop_samples = crop_samples
        self.factor = factor

    def build(self, indices, rng: np.random.Generator | None):
        features, targets, metas, flags = [], [], [], []
        for idx in indices:
            record = self.records[idx]
            example = load_example(record, self.stft_cfg)
            if rng is None:
                start = 0
            else:
                start = sample_crop_start(
                    rng, record.num_samples, self.crop_samples, self.stft_cfg.frame_shift
                )
            window = (start, start + self.crop_samples)
            feats, spec_targets, (_, speaker_flags) = training_arrays(
                example, window, self.stats, self.stft_cfg
            )
            features.append(feats)
            targets.append(spec_targets)
            metas.append(example.meta)
            flags.append(speaker_flags)
        feats = torch.from_numpy(np.stack(features)).float()
        feats = pad_to_multiple(feats, self.factor)
        pad_t, pad_f = feats.shape[-2], feats.shape[-1]
        padded = np.zeros((len(indices), 2, pad_t, pad_f), dtype=np.complex64)
        t, f = targets[0].shape[-2], targets[0].shape[-1]
        padded[:, :, :t, :f] = np.stack(targets)
        return feats, torch.from_numpy(padded), metas, flags


def _batch_loss(cfg, model, feats, target_tensor, metas, flags):
    output = model(feats)
    total = None
    evaluations = 0
    tap_count = len(output.taps)
    for b in range(feats.shape[0]):
        per_example = SeparatorOutput(
            final=output.final[b], taps=[output.taps[k][b] for k in range(tap_count)]
        )
        loss, breakdown = _example_loss(cfg, per_example, target_tensor[b], metas[b], flags[b])
        evaluations += breakdown.evaluations
        total = loss if total is None else total + loss
    return total / feats.shape[0], evaluations


def train(cfg: TrainConfig) -> Path:
    """Train a separator and write a checkpoint with its feature statistics.

    Divergence (non-finite loss) aborts after writing the last-good
    checkpoint. Runs are deterministic for a fixed seed and configuration in
    single-threaded mode.
    """
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    stft_cfg = StftConfig()
    records = load_manifest(cfg.train_manifest)
    if not records:
        raise CssepError(f"manifest {cfg.train_manifest} is empty")
    val_records = (
        load_manifest(cfg.val_manifest) if cfg.val_manifest else records
    )[: cfg.val_examples]

    stats = compute_feature_stats(records, stft_cfg, cfg.stats_examples)
    model_cfg = PROFILES[cfg.profile]
    model = build_separator(model_cfg, seed=cfg.seed)
    crop = int(round(cfg.crop_seconds * 16000))
    builder = _BatchBuilder(records, stats, stft_cfg, crop, model_cfg.downsample_factor)

    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, factor=0.5, patience=cfg.lr_halve_patience
    )
    log_path = Path(cfg.log_path) if cfg.log_path else Path(cfg.checkpoint_out).with_suffix(
        ".log.jsonl"
    )
    out_path = Path(cfg.checkpoint_out)
    out_path.parent.mkdir(parents=True, exist_ok=True)

    history = []
    last_good = copy.deepcopy(model.state_dict())

    def _save(state):
        snapshot = build_separator(model_cfg)
        snapshot.load_state_dict(state)
        save_checkpoint(
            out_path, snapshot, stats, stft_cfg, cfg.seed, history=history
        )

    with open(log_path, "w") as log:
        for step in range(1, cfg.steps + 1):
            indices = rng.integers(0, len(records), size=cfg.batch_size)
            feats, targets, metas, flags = builder.build(indices, rng)
            model.train()
            optimizer.zero_grad()
            loss, evaluations = _batch_loss(cfg, model, feats, targets, metas, flags)
            if not torch.isfinite(loss):
                _save(last_good)
                raise CssepError(
                    f"training diverged at step {step}; last-good checkpoint "
                    f"written to {out_path}"
                )
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            record = {
                "step": step,
                "loss": float(loss.detach()),
                "evaluations": evaluations,
                "lr": optimizer.param_groups[0]["lr"],
            }
            history.append({"step": step, "loss": record["loss"]})
            log.write(json.dumps(record) + "\n")

            if step % cfg.val_every == 0 or step == cfg.steps:
                val_builder = _BatchBuilder(
                    val_records, stats, stft_cfg, crop, model_cfg.downsample_factor
                )
                model.eval()
                with torch.no_grad():
                    val_feats, val_targets, val_metas, val_flags = val_builder.build(
                        range(len(val_records)), rng=None
                    )
                    val_loss, _ = _batch_loss(
                        cfg, model, val_feats, val_targets, val_metas, val_flags
                    )
                val_loss = float(val_loss)
                scheduler.step(val_loss)
                log.write(json.dumps({"step": step, "val_loss": val_loss}) + "\n")
                if np.isfinite(val_loss):
                    last_good = copy.deepcopy(model.state_dict())

    _save(model.state_dict())
    return out_path


# ---------------------------------------------------------------------------
# speaker counter


def pool_counter_labels(frame_labels: np.ndarray, pool_factor: int) -> np.ndarray:
    """Majority vote over pool windows; ties resolve to fewer speakers."""
    num_frames = frame_labels.shape[0]
    padded_len = -(-num_frames // pool_factor) * pool_factor
    padded = np.zeros(padded_len, dtype=np.int64)
    padded[:num_frames] = frame_labels
    windows = padded.reshape(-1, pool_factor)
    counts = np.stack([(windows == c).sum(axis=1) for c in range(3)], axis=1)
    return np.argmax(counts, axis=1)


def train_counter(cfg: TrainConfig) -> Path:
    """Train the speaker-counting head on simulation ground-truth activity.

    init_from must point at an existing separator checkpoint; the counter is
    added to it and the combined bundle is written to checkpoint_out.
    """
    if cfg.init_from is None:
        raise ConfigurationError("train_counter requires init_from (a separator checkpoint)")
    bundle = load_checkpoint(cfg.init_from)
    torch.manual_seed(cfg.seed + 1)
    rng = np.random.default_rng(cfg.seed + 1)
    stft_cfg = bundle.stft_config
    records = load_manifest(cfg.train_manifest)
    model_cfg = PROFILES[cfg.profile]
    counter_cfg = CounterConfig(
        encoder=model_cfg, hidden_size=cfg.counter_hidden, num_bins=stft_cfg.num_bins
    )
    counter = build_counter(counter_cfg, seed=cfg.seed + 1)
    crop = int(round(cfg.crop_seconds * 16000))
    optimizer = torch.optim.Adam(counter.parameters(), lr=cfg.learning_rate)
    factor = counter_cfg.pool_factor
    stats = bundle.feature_stats

    out_path = Path(cfg.checkpoint_out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    log_path = Path(cfg.log_path) if cfg.log_path else out_path.with_suffix(".log.jsonl")

    with open(log_path, "w") as log:
        for step in range(1, cfg.steps + 1):
            indices = rng.integers(0, len(records), size=cfg.batch_size)
            feats_list, labels_list = [], []
            for idx in indices:
                record = records[idx]
                example = load_example(record, stft_cfg)
                start = sample_crop_start(
                    rng, record.num_samples, crop, stft_cfg.frame_shift
                )
                feats, _, _ = training_arrays(
                    example, (start, start + crop), stats, stft_cfg
                )
                frame_start = start // stft_cfg.frame_shift
                window_activity = np.zeros((2, feats.shape[1]), dtype=bool)
                chunk = example.activity[:, frame_start : frame_start + feats.shape[1]]
                window_activity[:, : chunk.shape[1]] = chunk
                frame_labels = window_activity.sum(axis=0)
                feats_list.append(feats)
                labels_list.append(frame_labels)
            feats = pad_to_multiple(
                torch.from_numpy(np.stack(feats_list)).float(), factor
            )
            padded_frames = feats.shape[-2]
            labels = np.stack(
                [
                    pool_counter_labels(
                        np.pad(lab, (0, padded_frames - lab.shape[0])), factor
                    )
                    for lab in labels_list
                ]
            )
            counter.train()
            optimizer.zero_grad()
            probs = counter(feats)
            target = torch.from_numpy(labels)
            nll = -torch.log(
                probs.gather(-1, target.unsqueeze(-1)).squeeze(-1).clamp_min(1e-8)
            ).mean()
            if not torch.isfinite(nll):
                raise CssepError(f"counter training diverged at step {step}")
            nll.backward()
            torch.nn.utils.clip_grad_norm_(counter.parameters(), cfg.grad_clip)
            optimizer.step()
            log.write(json.dumps({"step": step, "loss": float(nll.detach())}) + "\n")

    counter.eval()
    save_checkpoint(
        out_path,
        bundle.separator,
        stats,
        stft_cfg,
        bundle.seed,
        counter=counter,
        history=bundle.history,
    )
    return out_path


def build_profile_separator(profile: str):
    if profile not in PROFILES:
        raise ConfigurationError(f"unknown profile {profile!r}")
    return build_separator(PROFILES[profile], seed=0)


def profile_param_count(profile: str) -> int:
    return count_params(build_profile_separator(profile))
