"""Manifest records and training-example assembly."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import (
    StftConfig,
    Waveform,
    apply_feature_norm,
    mixture_features,
    normalize_mixture,
    read_wav,
)
from .errors import DataError
from .losses import make_segment_targets
from .spatialsim import SceneMeta


@dataclass
class ManifestRecord:
    id: str
    mixture_path: Path
    ref_paths: tuple[Path, Path]
    azimuth_deg: tuple[float, float]
    distance_m: tuple[float, float]
    overlap_ratio: float
    t60: float
    snr_db: float
    seed: int
    num_samples: int
    activity_spans: tuple[list, list]

    def meta(self) -> SceneMeta:
        return SceneMeta(azimuth_deg=self.azimuth_deg, distance_m=self.distance_m)


def load_manifest(path) -> list[ManifestRecord]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest {path} does not exist")
    base = path.parent
    records = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
                records.append(
                    ManifestRecord(
                        id=raw["id"],
                        mixture_path=base / raw["mixture_path"],
                        ref_paths=tuple(base / p for p in raw["ref_paths"]),
                        azimuth_deg=tuple(raw["azimuth_deg"]),
                        distance_m=tuple(raw["distance_m"]),
                        overlap_ratio=float(raw["overlap_ratio"]),
                        t60=float(raw["t60"]),
                        snr_db=float(raw["snr_db"]),
                        seed=int(raw["seed"]),
                        num_samples=int(raw["num_samples"]),
                        activity_spans=tuple(raw["activity"]),
                    )
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise DataError(f"{path}:{line_no}: malformed record ({exc})")
    return records


@dataclass
class LoadedExample:
    mixture: Waveform
    references: tuple[Waveform, Waveform]
    activity: np.ndarray  # bool [2, T]
    meta: SceneMeta
    overlap_ratio: float


def _spans_to_activity(spans, num_frames: int) -> np.ndarray:
    activity = np.zeros((2, num_frames), dtype=bool)
    for n, speaker_spans in enumerate(spans):
        for start, end in speaker_spans:
            activity[n, start:end] = True
    return activity


def load_example(record: ManifestRecord, stft_cfg: StftConfig = StftConfig()) -> LoadedExample:
    mixture = read_wav(record.mixture_path)
    references = tuple(read_wav(p) for p in record.ref_paths)
    num_frames = stft_cfg.num_frames(record.num_samples)
    return LoadedExample(
        mixture=mixture,
        references=references,
        activity=_spans_to_activity(record.activity_spans, num_frames),
        meta=record.meta(),
        overlap_ratio=record.overlap_ratio,
    )


def training_arrays(
    example: LoadedExample,
    window: tuple[int, int],
    stats,
    stft_cfg: StftConfig = StftConfig(),
):
    """Model inputs and loss targets for one frame-aligned crop.

    Normalizes the full mixture to unit variance, crops the window, stacks
    the 15-channel features (normalized with stats when given) and builds the
    reference spectrograms under the same scale. Returns (features [15,T,F]
    float32, targets complex [2,T,F], activity summary).
    """
    start, end = window
    normalized, scale = normalize_mixture(example.mixture)
    segment = np.zeros((normalized.num_channels, end - start))
    chunk = normalized.samples[:, start : min(end, normalized.num_samples)]
    segment[:, : chunk.shape[1]] = chunk
    features = mixture_features(Waveform(segment), stft_cfg)
    if stats is not None:
        features = apply_feature_norm(features, stats).astype(np.float32)
    targets, summary = make_segment_targets(example, window, scale, stft_cfg)
    return features, targets, summary


def sample_crop_start(
    rng: np.random.Generator, num_samples: int, crop_samples: int, frame_shift: int
) -> int:
    """Uniform frame-aligned crop start; 0 when the example is too short."""
    max_start = num_samples - crop_samples
    if max_start <= 0:
        return 0
    return int(rng.integers(0, max_start // frame_shift + 1)) * frame_shift
