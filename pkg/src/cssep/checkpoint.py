"""Self-describing checkpoint container.

A checkpoint is a torch-saved dict of primitives and tensors:

    format_version   int, currently 1
    separator_config dict of SeparatorConfig fields
    separator_state  state dict
    counter_config   dict of CounterConfig fields (minus encoder), or None
    counter_state    state dict or None
    feature_stats    {"mean": tensor [C, F], "variance": tensor [C, F]}
    stft             {"frame_length", "frame_shift", "window"}
    seed             training seed
    history          list of {"step", "loss"} records

The layout is stable across versions; loaders reject unknown versions.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch

from .dsp import FeatureStats, StftConfig
from .errors import CheckpointError
from .model import (
    CounterConfig,
    DenseUNetSeparator,
    SeparatorConfig,
    SpeakerCounter,
)

FORMAT_VERSION = 1


@dataclass
class CheckpointBundle:
    separator: DenseUNetSeparator
    counter: SpeakerCounter | None
    feature_stats: FeatureStats
    stft_config: StftConfig
    seed: int
    history: list

    @property
    def separator_config(self) -> SeparatorConfig:
        return self.separator.cfg


def save_checkpoint(
    path,
    separator: DenseUNetSeparator,
    feature_stats: FeatureStats,
    stft_config: StftConfig,
    seed: int,
    counter: SpeakerCounter | None = None,
    history: list | None = None,
) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "separator_config": asdict(separator.cfg),
        "separator_state": separator.state_dict(),
        "counter_config": None,
        "counter_state": None,
        "feature_stats": {
            "mean": torch.from_numpy(feature_stats.mean.copy()),
            "variance": torch.from_numpy(feature_stats.variance.copy()),
        },
        "stft": asdict(stft_config),
        "seed": int(seed),
        "history": list(history or []),
    }
    if counter is not None:
        cfg = asdict(counter.cfg)
        cfg["encoder"] = asdict(counter.cfg.encoder)
        payload["counter_config"] = cfg
        payload["counter_state"] = counter.state_dict()
    torch.save(payload, path)


def load_checkpoint(path) -> CheckpointBundle:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint {path} does not exist")
    except Exception as exc:
        raise CheckpointError(f"could not read checkpoint {path}: {exc}")
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format {version!r} (expected {FORMAT_VERSION})"
        )
    try:
        separator = DenseUNetSeparator(SeparatorConfig(**payload["separator_config"]))
        separator.load_state_dict(payload["separator_state"])
    except Exception as exc:
        raise CheckpointError(f"separator config/state mismatch in {path}: {exc}")
    counter = None
    if payload.get("counter_state") is not None:
        try:
            raw = dict(payload["counter_config"])
            raw["encoder"] = SeparatorConfig(**raw["encoder"])
            counter = SpeakerCounter(CounterConfig(**raw))
            counter.load_state_dict(payload["counter_state"])
        except Exception as exc:
            raise CheckpointError(f"counter config/state mismatch in {path}: {exc}")
        counter.eval()
    stats = FeatureStats(
        mean=payload["feature_stats"]["mean"].numpy(),
        variance=payload["feature_stats"]["variance"].numpy(),
    )
    separator.eval()
    return CheckpointBundle(
        separator=separator,
        counter=counter,
        feature_stats=stats,
        stft_config=StftConfig(**payload["stft"]),
        seed=int(payload["seed"]),
        history=list(payload.get("history", [])),
    )
