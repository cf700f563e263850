import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cssep.spatialsim import DatasetConfig, SimConfig, build_dataset


@pytest.fixture(scope="session")
def tiny_manifest(tmp_path_factory):
    """Eight heavily-overlapped mixtures; shared by smoke and overfit tests."""
    base = tmp_path_factory.mktemp("tiny_dataset")
    cfg = DatasetConfig(
        seed=101,
        synthetic_utterances=10,
        utterance_seconds=(2.6, 3.0),
        sim=SimConfig(overlap_ratios=(0.3, 0.4), overlap_weights=(0.5, 0.5)),
    )
    return build_dataset(base / "manifest.jsonl", 8, cfg)
