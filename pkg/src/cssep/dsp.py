"""Waveform/spectrogram transforms and input normalization.

All signals are 16 kHz. The STFT uses a 32 ms frame (512 samples), an 8 ms
shift (128 samples) and a square-root Hann window for both analysis and
synthesis, which satisfies the COLA condition at this shift. Signals are
zero-padded by half of (frame_length - frame_shift) on each side before
framing, so a signal whose length is a multiple of the shift produces exactly
``len / frame_shift`` frames and the inverse transform reconstructs every
input sample. Spectrogram bins are normalized by the window's RMS energy so
their magnitudes sit at the time-domain signal scale, which keeps
spectrogram-regression targets well-conditioned.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.io import wavfile

from .errors import DegenerateInputError, InvalidInputError

SAMPLE_RATE = 16000


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis parameters of the STFT pair.

    frame_shift must divide frame_length; the default 512/128 pair gives
    F = 257 frequency bins at 16 kHz.
    """

    frame_length: int = 512
    frame_shift: int = 128
    window: str = "sqrt_hann"

    def __post_init__(self):
        if self.frame_length <= 0 or self.frame_shift <= 0:
            raise InvalidInputError("frame_length and frame_shift must be positive")
        if self.frame_length % self.frame_shift != 0:
            raise InvalidInputError(
                f"frame_shift {self.frame_shift} must divide frame_length {self.frame_length}"
            )
        if self.window != "sqrt_hann":
            raise InvalidInputError(f"unsupported window {self.window!r}")

    @property
    def num_bins(self) -> int:
        return self.frame_length // 2 + 1

    def num_frames(self, num_samples: int) -> int:
        """Frame count produced by :func:`stft` for a signal of this length."""
        if num_samples < self.frame_length:
            raise InvalidInputError(
                f"signal of {num_samples} samples is shorter than one frame "
                f"({self.frame_length})"
            )
        return -(-num_samples // self.frame_shift)


@dataclass
class Waveform:
    """A multichannel signal, samples shaped [channels, time]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples))
        if self.samples.ndim != 2:
            raise InvalidInputError("samples must be a 1-D or 2-D array")
        if self.sample_rate != SAMPLE_RATE:
            raise InvalidInputError(f"sample_rate must be {SAMPLE_RATE}")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidInputError("samples contain non-finite values")

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]


@dataclass
class ComplexSpectrogram:
    """Real/imaginary planes of one channel's STFT, each shaped [T, F]."""

    real: np.ndarray
    imag: np.ndarray

    def __post_init__(self):
        self.real = np.asarray(self.real)
        self.imag = np.asarray(self.imag)
        if self.real.shape != self.imag.shape:
            raise InvalidInputError("real and imag planes must share a shape")

    @classmethod
    def from_complex(cls, values: np.ndarray) -> "ComplexSpectrogram":
        return cls(real=values.real.copy(), imag=values.imag.copy())

    def to_complex(self) -> np.ndarray:
        return self.real + 1j * self.imag

    @property
    def shape(self):
        return self.real.shape


@lru_cache(maxsize=8)
def _sqrt_hann(frame_length: int) -> np.ndarray:
    # Periodic Hann; its square sums to a constant at a shift of L/4 or finer.
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(frame_length) / frame_length)
    return np.sqrt(hann)


@lru_cache(maxsize=8)
def _spectrum_scale(frame_length: int) -> float:
    # Normalizes bins to the windowed frame's RMS scale, so spectrogram
    # values are commensurate with the time-domain signal level.
    window = _sqrt_hann(frame_length)
    return float(np.sqrt(np.sum(window * window)))


def _pad_layout(num_samples: int, cfg: StftConfig):
    """(num_frames, pad_front, padded_length) for the framing convention."""
    frames = cfg.num_frames(num_samples)
    pad_front = (cfg.frame_length - cfg.frame_shift) // 2
    span = (frames - 1) * cfg.frame_shift + cfg.frame_length
    return frames, pad_front, span


def stft_signal(samples: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """STFT of a mono signal; returns a complex array [T, F]."""
    samples = np.asarray(samples)
    if samples.ndim != 1:
        raise InvalidInputError("stft_signal expects a 1-D signal")
    frames, pad_front, span = _pad_layout(samples.shape[0], cfg)
    padded = np.zeros(span, dtype=np.result_type(samples.dtype, np.float64))
    padded[pad_front : pad_front + samples.shape[0]] = samples
    idx = (
        np.arange(frames)[:, None] * cfg.frame_shift + np.arange(cfg.frame_length)[None, :]
    )
    window = _sqrt_hann(cfg.frame_length)
    return np.fft.rfft(padded[idx] * window, axis=-1) / _spectrum_scale(cfg.frame_length)


def istft_signal(spec: np.ndarray, cfg: StftConfig, length: int | None = None) -> np.ndarray:
    """Inverse of :func:`stft_signal` via weighted overlap-add.

    ``length`` crops the result; the default ``T * frame_shift`` undoes
    :func:`stft_signal` exactly when the original length was a multiple of
    the frame shift.
    """
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[1] != cfg.num_bins:
        raise InvalidInputError(
            f"spectrogram shape {spec.shape} inconsistent with F={cfg.num_bins}"
        )
    frames = spec.shape[0]
    window = _sqrt_hann(cfg.frame_length)
    pad_front = (cfg.frame_length - cfg.frame_shift) // 2
    span = (frames - 1) * cfg.frame_shift + cfg.frame_length
    chunks = (
        np.fft.irfft(spec * _spectrum_scale(cfg.frame_length), n=cfg.frame_length, axis=-1)
        * window
    )
    out = np.zeros(span)
    envelope = np.zeros(span)
    win_sq = window * window
    for t in range(frames):
        start = t * cfg.frame_shift
        out[start : start + cfg.frame_length] += chunks[t]
        envelope[start : start + cfg.frame_length] += win_sq
    out /= np.maximum(envelope, 1e-12)
    if length is None:
        length = frames * cfg.frame_shift
    if length > span - pad_front:
        raise InvalidInputError(
            f"requested length {length} exceeds the {span - pad_front} samples covered "
            "by the spectrogram"
        )
    return out[pad_front : pad_front + length]


def stft(wave: Waveform, cfg: StftConfig) -> list[ComplexSpectrogram]:
    """Per-channel STFT of a waveform."""
    return [
        ComplexSpectrogram.from_complex(stft_signal(channel, cfg))
        for channel in wave.samples
    ]


def istft(spec: ComplexSpectrogram, cfg: StftConfig, length: int | None = None) -> Waveform:
    """Synthesize a mono waveform from one channel's spectrogram."""
    return Waveform(istft_signal(spec.to_complex(), cfg, length=length))


def normalize_mixture(wave: Waveform) -> tuple[Waveform, float]:
    """Scale a multichannel mixture to unit sample variance.

    The variance is computed jointly over all channels. Returns the scaled
    waveform and the applied scale so reference signals can be scaled
    identically.
    """
    variance = float(np.var(wave.samples))
    if variance <= 0.0:
        raise DegenerateInputError("mixture has zero variance; no scale exists")
    scale = 1.0 / np.sqrt(variance)
    return Waveform(wave.samples * scale, wave.sample_rate), scale


@dataclass
class FeatureStats:
    """Per-input-channel, per-frequency-bin normalization statistics."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.variance = np.asarray(self.variance, dtype=np.float64)
        if self.mean.shape != self.variance.shape:
            raise InvalidInputError("mean and variance must share a shape")
        if np.any(self.variance <= 0):
            raise InvalidInputError("variance must be positive elementwise")

    @classmethod
    def identity(cls, num_channels: int, num_bins: int) -> "FeatureStats":
        shape = (num_channels, num_bins)
        return cls(mean=np.zeros(shape), variance=np.ones(shape))


class FeatureStatsAccumulator:
    """Streaming mean/variance over [C, T, F] feature blocks, pooled over T."""

    def __init__(self, num_channels: int, num_bins: int):
        self._count = 0
        self._sum = np.zeros((num_channels, num_bins))
        self._sumsq = np.zeros((num_channels, num_bins))

    def add(self, features: np.ndarray) -> None:
        features = np.asarray(features)
        if features.ndim != 3 or features.shape[::2] != self._sum.shape:
            raise InvalidInputError(
                f"features shape {features.shape} does not match accumulator "
                f"{self._sum.shape[0]} channels x {self._sum.shape[1]} bins"
            )
        self._count += features.shape[1]
        self._sum += features.sum(axis=1)
        self._sumsq += (features * features).sum(axis=1)

    def finalize(self, min_variance: float = 1e-8) -> FeatureStats:
        if self._count == 0:
            raise InvalidInputError("no features accumulated")
        mean = self._sum / self._count
        variance = self._sumsq / self._count - mean * mean
        return FeatureStats(mean=mean, variance=np.maximum(variance, min_variance))


def apply_feature_norm(features: np.ndarray, stats: FeatureStats) -> np.ndarray:
    """Elementwise (x - mean) / sqrt(variance) with stats broadcast over time."""
    features = np.asarray(features)
    if features.ndim != 3 or features.shape[::2] != stats.mean.shape:
        raise InvalidInputError(
            f"features shape {features.shape} does not match stats shape {stats.mean.shape}"
        )
    return (features - stats.mean[:, None, :]) / np.sqrt(stats.variance)[:, None, :]


def mixture_features(mixture: Waveform, cfg: StftConfig) -> np.ndarray:
    """Stack the model input features of a multichannel mixture.

    Layout along the channel axis: real and imaginary planes of every
    microphone in order, then the magnitude of the first (reference)
    microphone. A 7-mic mixture therefore yields 15 feature channels.
    """
    specs = np.stack([stft_signal(ch, cfg) for ch in mixture.samples])
    parts = []
    for spec in specs:
        parts.append(spec.real)
        parts.append(spec.imag)
    parts.append(np.abs(specs[0]))
    return np.stack(parts).astype(np.float32)


def read_wav(path) -> Waveform:
    """Read a 16 kHz PCM16/PCM32/float WAV as float64 in [-1, 1]-ish range."""
    rate, data = wavfile.read(path)
    if rate != SAMPLE_RATE:
        raise InvalidInputError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate}")
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    else:
        data = data.astype(np.float64)
    if data.ndim == 2:  # wavfile stores [time, channels]
        data = data.T
    return Waveform(data)


def write_wav(path, wave: Waveform, dtype: str = "float32") -> None:
    data = wave.samples.T  # [time, channels]
    if data.shape[1] == 1:
        data = data[:, 0]
    if dtype == "float32":
        wavfile.write(path, wave.sample_rate, data.astype(np.float32))
    elif dtype == "int16":
        clipped = np.clip(data, -1.0, 32767.0 / 32768.0)
        wavfile.write(path, wave.sample_rate, np.round(clipped * 32768.0).astype(np.int16))
    else:
        raise InvalidInputError(f"unsupported dtype {dtype!r}")
