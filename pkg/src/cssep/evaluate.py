"""Scale-invariant SNR metric and manifest-level evaluation reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import load_example, load_manifest, training_arrays
from .dsp import StftConfig
from .errors import InvalidInputError, UndefinedMetricError
from .model import pad_to_multiple
from .pipeline import separate_stream

SI_SNR_CAP_DB = 60.0


def si_snr(est: np.ndarray, ref: np.ndarray, cap: float = SI_SNR_CAP_DB) -> float:
    """Scale-invariant SNR in dB, capped to +/- cap.

    Projects the estimate onto the reference (least-squares scale) and
    compares projection energy against residual energy, so any global gain on
    the estimate cancels.
    """
    est = np.asarray(est, dtype=float).ravel()
    ref = np.asarray(ref, dtype=float).ravel()
    if est.shape != ref.shape:
        raise InvalidInputError(f"length mismatch: {est.shape[0]} vs {ref.shape[0]}")
    ref_power = float(np.dot(ref, ref))
    if ref_power == 0.0:
        raise UndefinedMetricError("SI-SNR is undefined for a zero reference")
    alpha = float(np.dot(est, ref)) / ref_power
    target = alpha * ref
    residual = est - target
    p_target = float(np.dot(target, target))
    p_residual = float(np.dot(residual, residual))
    if p_target == 0.0:
        return -cap
    if p_residual == 0.0:
        return cap
    return float(np.clip(10.0 * np.log10(p_target / p_residual), -cap, cap))


def best_assignment_si_snr(streams: np.ndarray, refs: np.ndarray):
    """Mean SI-SNR under the better of the two stream/reference pairings."""
    best = None
    for perm in ((0, 1), (1, 0)):
        scores = [si_snr(streams[perm[n]], refs[n]) for n in range(2)]
        mean = float(np.mean(scores))
        if best is None or mean > best[0]:
            best = (mean, perm, scores)
    return best


def condition_label(overlap_ratio: float) -> str:
    if overlap_ratio == 0.0:
        return "0S"
    return f"{int(round(overlap_ratio * 100))}%"


@dataclass
class EvalReport:
    """Aggregated separation scores; reproducible from per_example alone."""

    mode: str
    per_example: list[dict] = field(default_factory=list)
    conditions: dict = field(default_factory=dict)
    overall: dict = field(default_factory=dict)

    @classmethod
    def from_scores(cls, mode: str, per_example: list[dict]) -> "EvalReport":
        report = cls(mode=mode, per_example=list(per_example))
        groups: dict[str, list[float]] = {}
        for row in per_example:
            groups.setdefault(row["condition"], []).append(row["si_snr"])
        report.conditions = {
            label: {
                "mean_si_snr": float(np.mean(scores)),
                "std_si_snr": float(np.std(scores)),
                "count": len(scores),
            }
            for label, scores in sorted(groups.items())
        }
        all_scores = [row["si_snr"] for row in per_example]
        report.overall = {
            "mean_si_snr": float(np.mean(all_scores)) if all_scores else 0.0,
            "count": len(all_scores),
        }
        return report

    def to_json(self) -> str:
        return json.dumps(
            {
                "mode": self.mode,
                "overall": self.overall,
                "conditions": self.conditions,
                "per_example": self.per_example,
            },
            sort_keys=True,
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def _score_records(records, streams_fn, mode: str) -> EvalReport:
    per_example = []
    for record in records:
        example = load_example(record)
        streams = streams_fn(example)
        refs = np.stack([ref.samples[0] for ref in example.references])
        mean, perm, scores = best_assignment_si_snr(streams, refs)
        per_example.append(
            {
                "id": record.id,
                "condition": condition_label(record.overlap_ratio),
                "si_snr": mean,
                "per_speaker": scores,
                "permutation": list(perm),
            }
        )
    return EvalReport.from_scores(mode, per_example)


def evaluate(bundle, manifest_path, mode: str = "utterance", limit: int | None = None,
             use_counter: bool = True) -> EvalReport:
    """Score a checkpoint on a manifest.

    Utterance mode scores each pre-segmented mixture with the best
    output/reference pairing; continuous mode expects a meeting manifest and
    scores the stitched full-length streams with one global pairing. Both run
    the same separation chain.
    """
    if mode not in ("utterance", "continuous"):
        raise InvalidInputError(f"unknown mode {mode!r}")
    records = load_manifest(manifest_path)
    if limit is not None:
        records = records[:limit]

    def run(example):
        return separate_stream(example.mixture, bundle, use_counter=use_counter).streams

    return _score_records(records, run, mode)


def evaluate_mixture_baseline(manifest_path, mode: str = "utterance",
                              limit: int | None = None) -> EvalReport:
    """Reference-mic mixture copied to both outputs; the no-separation floor."""
    records = load_manifest(manifest_path)
    if limit is not None:
        records = records[:limit]

    def run(example):
        channel = example.mixture.samples[0]
        return np.stack([channel, channel])

    return _score_records(records, run, mode)


def counter_frame_accuracy(bundle, manifest_path, limit: int | None = None) -> float:
    """Fraction of STFT frames where the counter predicts the true speaker
    count, over whole examples."""
    if bundle.counter is None:
        raise InvalidInputError("checkpoint contains no counter")
    records = load_manifest(manifest_path)
    if limit is not None:
        records = records[:limit]
    counter = bundle.counter
    counter.eval()
    stft_cfg = bundle.stft_config
    factor = counter.cfg.pool_factor
    correct = 0
    total = 0
    with torch.no_grad():
        for record in records:
            example = load_example(record, stft_cfg)
            feats, _, _ = training_arrays(
                example, (0, record.num_samples), bundle.feature_stats, stft_cfg
            )
            num_frames = feats.shape[1]
            tensor = pad_to_multiple(torch.from_numpy(feats).float(), factor)
            probs = counter(tensor).numpy()
            predicted = np.repeat(np.argmax(probs, axis=-1), factor)[:num_frames]
            truth = example.activity.sum(axis=0)[:num_frames]
            correct += int(np.sum(predicted == truth))
            total += num_frames
    return correct / total if total else 0.0
