"""Continuous speech separation with location-based training.

A desk-scale toolkit for two-speaker multichannel separation: an image-method
spatial simulator, a Dense-UNet complex spectral mapping separator with
multi-resolution decoder supervision, permutation-invariant and
location-based training criteria, a segment-stitching inference pipeline with
speaker-counting residual suppression, and SI-SNR evaluation.
"""

from .checkpoint import CheckpointBundle, load_checkpoint, save_checkpoint
from .dsp import (
    ComplexSpectrogram,
    FeatureStats,
    FeatureStatsAccumulator,
    StftConfig,
    Waveform,
    apply_feature_norm,
    istft,
    mixture_features,
    normalize_mixture,
    read_wav,
    stft,
    write_wav,
)
from .errors import (
    CheckpointError,
    ConfigurationError,
    CssepError,
    DataError,
    DegenerateInputError,
    InvalidGeometryError,
    InvalidInputError,
    UndefinedMetricError,
)
from .evaluate import EvalReport, best_assignment_si_snr, evaluate, si_snr
from .losses import (
    Assignment,
    LossBreakdown,
    base_loss,
    lbt_assignment,
    lbt_loss,
    make_segment_targets,
    multires_loss,
    pit_loss,
    pit_multires_loss,
    pool_target,
)
from .model import (
    CounterConfig,
    DenseUNetSeparator,
    SeparatorConfig,
    SeparatorOutput,
    SpeakerCounter,
    build_counter,
    build_separator,
    count_params,
)
from .pipeline import (
    SegmentPlan,
    SpeakerStreams,
    plan_segments,
    separate_stream,
    stitch,
    suppress_residual,
)
from .spatialsim import (
    ArrayGeometry,
    DatasetConfig,
    MixtureExample,
    RoomSpec,
    SceneSpec,
    SimConfig,
    SpeakerPlacement,
    build_dataset,
    build_meetings,
    image_rir,
    mix_segment,
    render_source,
    sample_scene,
    synthetic_utterance,
)
from .train import TrainConfig, train, train_counter

__version__ = "0.1.0"
