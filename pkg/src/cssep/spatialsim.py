"""Room-acoustics simulation for two-speaker multichannel mixtures.

Rooms are rectangular, sampled from [5 x 5 x 3, 10 x 10 x 4] meters with a
reverberation time between 0.2 and 0.6 s. A 7-channel circular microphone
array (one center mic plus six on a 4.25 cm circle) sits at the room center.
Speaker positions are drawn from a 360-point azimuth grid at 1 degree
resolution, with the two speaker-array distances at least 5 cm apart. Room
impulse responses use the image method with uniform wall reflectivity derived
from the target T60 (Eyring inversion), fractional delays rounded to the
nearest sample. Stationary ambient noise is spatially-uncorrelated white
Gaussian, added at a random SNR between 10 and 30 dB.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .dsp import SAMPLE_RATE, StftConfig, Waveform, read_wav, write_wav
from .errors import (
    ConfigurationError,
    DataError,
    InvalidGeometryError,
    InvalidInputError,
)

SPEED_OF_SOUND = 343.0
ARRAY_RADIUS = 0.0425
NUM_MICS = 7
T60_DECAY_CALIBRATION = 1.35


@dataclass(frozen=True)
class RoomSpec:
    """Rectangular room dimensions (m) and target reverberation time (s)."""

    length: float
    width: float
    height: float
    t60: float

    def __post_init__(self):
        if not (5.0 <= self.length <= 10.0 and 5.0 <= self.width <= 10.0):
            raise InvalidGeometryError(f"room floor {self.length}x{self.width} outside [5,10]^2")
        if not (3.0 <= self.height <= 4.0):
            raise InvalidGeometryError(f"room height {self.height} outside [3,4]")
        if not (0.2 <= self.t60 <= 0.6):
            raise InvalidGeometryError(f"t60 {self.t60} outside [0.2,0.6]")

    @property
    def dimensions(self) -> np.ndarray:
        return np.array([self.length, self.width, self.height])

    @property
    def volume(self) -> float:
        return self.length * self.width * self.height

    @property
    def surface(self) -> float:
        return 2.0 * (
            self.length * self.width
            + self.length * self.height
            + self.width * self.height
        )

    def axis_log_reflectivities(self) -> tuple[float, float, float]:
        """Per-axis log amplitude reflectivity reproducing t60.

        Wall absorption is scaled with the wall spacing so every propagation
        direction loses energy at the same rate per meter; otherwise the
        weakly-reflected axial image paths of a specular lattice dominate the
        late field and the broadband decay runs long. The remaining
        direction-mix bias is compensated by an empirical calibration factor
        tuned so the Schroeder-estimated T60 matches the target (within a few
        percent across the supported room/T60 ranges).
        """
        scale = -T60_DECAY_CALIBRATION * 2.0 * np.log(10.0) / (SPEED_OF_SOUND * self.t60)
        return (scale * self.length, scale * self.width, scale * self.height)

    def contains(self, point, margin: float = 0.0) -> bool:
        point = np.asarray(point, dtype=float)
        return bool(
            np.all(point > margin) and np.all(point < self.dimensions - margin)
        )


@dataclass(frozen=True)
class ArrayGeometry:
    """Center microphone plus six on a horizontal circle of 4.25 cm radius."""

    mic_positions: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mic_positions", np.asarray(self.mic_positions, dtype=float))
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.mic_positions.shape != (NUM_MICS, 3):
            raise InvalidGeometryError("expected 7 microphone positions")
        if not np.allclose(self.mic_positions[0], self.center, atol=1e-9):
            raise InvalidGeometryError("first microphone must sit at the array center")
        radii = np.linalg.norm(self.mic_positions[1:] - self.center, axis=1)
        if np.any(np.abs(radii - ARRAY_RADIUS) > 1e-9):
            raise InvalidGeometryError("outer microphones must lie on the 4.25 cm circle")

    @classmethod
    def circular(cls, center) -> "ArrayGeometry":
        center = np.asarray(center, dtype=float)
        angles = np.deg2rad(np.arange(6) * 60.0)
        ring = center + ARRAY_RADIUS * np.stack(
            [np.cos(angles), np.sin(angles), np.zeros(6)], axis=1
        )
        return cls(mic_positions=np.vstack([center[None, :], ring]), center=center)


@dataclass(frozen=True)
class SpeakerPlacement:
    """Speaker location relative to the array center.

    azimuth_deg lies on the integer-degree grid in (-180, 180]; distance_m is
    the horizontal distance to the array center.
    """

    azimuth_deg: float
    distance_m: float
    height_m: float

    def position(self, center: np.ndarray) -> np.ndarray:
        azimuth = np.deg2rad(self.azimuth_deg)
        return np.array(
            [
                center[0] + self.distance_m * np.cos(azimuth),
                center[1] + self.distance_m * np.sin(azimuth),
                self.height_m,
            ]
        )


@dataclass(frozen=True)
class SceneMeta:
    """Per-speaker geometry consumed by location-based output ordering."""

    azimuth_deg: tuple[float, ...]
    distance_m: tuple[float, ...]


@dataclass(frozen=True)
class SceneSpec:
    """A fully-specified acoustic scene, reconstructible from its seed."""

    room: RoomSpec
    array: ArrayGeometry
    speakers: tuple[SpeakerPlacement, SpeakerPlacement]
    noise_snr_db: float
    seed: int

    def __post_init__(self):
        if len(self.speakers) != 2:
            raise InvalidInputError("scenes contain exactly two speakers")
        a, b = self.speakers
        if round(a.azimuth_deg) == round(b.azimuth_deg):
            raise InvalidGeometryError("speaker azimuths must be distinct on the grid")
        if abs(a.distance_m - b.distance_m) < 0.05 - 1e-12:
            raise InvalidGeometryError("speaker-array distances must differ by >= 5 cm")
        if not (10.0 <= self.noise_snr_db <= 30.0):
            raise InvalidInputError(f"noise SNR {self.noise_snr_db} outside [10,30] dB")
        for speaker in self.speakers:
            if not self.room.contains(speaker.position(self.array.center), margin=0.1):
                raise InvalidGeometryError("speaker position violates the 0.1 m wall margin")

    def speaker_position(self, index: int) -> np.ndarray:
        return self.speakers[index].position(self.array.center)

    def meta(self) -> SceneMeta:
        return SceneMeta(
            azimuth_deg=tuple(s.azimuth_deg for s in self.speakers),
            distance_m=tuple(s.distance_m for s in self.speakers),
        )


@dataclass(frozen=True)
class SimConfig:
    """Sampling ranges for scenes and mixtures."""

    room_length: tuple[float, float] = (5.0, 10.0)
    room_width: tuple[float, float] = (5.0, 10.0)
    room_height: tuple[float, float] = (3.0, 4.0)
    t60: tuple[float, float] = (0.2, 0.6)
    snr_db: tuple[float, float] = (10.0, 30.0)
    wall_margin: float = 0.1
    min_speaker_distance: float = 0.5
    min_distance_gap: float = 0.05
    speaker_height: tuple[float, float] = (1.2, 2.0)
    overlap_ratios: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4)
    overlap_weights: tuple[float, ...] = (0.2, 0.2, 0.2, 0.2, 0.2)
    max_place_attempts: int = 1000

    def __post_init__(self):
        for name in ("room_length", "room_width", "room_height", "t60", "snr_db",
                     "speaker_height"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigurationError(f"{name} range ({lo}, {hi}) is inverted")
        if len(self.overlap_ratios) != len(self.overlap_weights):
            raise ConfigurationError("overlap_ratios and overlap_weights lengths differ")
        if abs(sum(self.overlap_weights) - 1.0) > 1e-9:
            raise ConfigurationError("overlap_weights must sum to 1")


@dataclass
class MixtureExample:
    """A rendered mixture with reference targets and frame-level activity.

    mixture = sum of reverberant sources + noise, before any normalization.
    references hold the direct-path image of each speaker at the reference
    (center) microphone. activity marks, at the STFT frame rate, the frames
    where each speaker's dry source signal has nonzero energy.
    """

    mixture: Waveform
    references: tuple[Waveform, Waveform]
    activity: np.ndarray  # bool [2, T]
    scene: SceneSpec
    overlap_ratio: float
    noise: Waveform


# ---------------------------------------------------------------------------
# scene sampling


AZIMUTH_GRID = np.arange(-179, 181)


def _max_ray_distance(center, azimuth_deg, room: RoomSpec, margin: float) -> float:
    """Distance from the array center to the nearest wall along an azimuth."""
    direction = np.array([np.cos(np.deg2rad(azimuth_deg)), np.sin(np.deg2rad(azimuth_deg))])
    limits = []
    for axis, extent in enumerate((room.length, room.width)):
        d = direction[axis]
        if d > 1e-12:
            limits.append((extent - margin - center[axis]) / d)
        elif d < -1e-12:
            limits.append((margin - center[axis]) / d)
    return min(limits)


def sample_scene(rng_seed: int, config: SimConfig = SimConfig()) -> SceneSpec:
    """Draw a deterministic scene from the configured ranges."""
    rng = np.random.default_rng(rng_seed)
    room = RoomSpec(
        length=rng.uniform(*config.room_length),
        width=rng.uniform(*config.room_width),
        height=rng.uniform(*config.room_height),
        t60=rng.uniform(*config.t60),
    )
    center = np.array([room.length / 2.0, room.width / 2.0, room.height / 2.0])
    array = ArrayGeometry.circular(center)
    snr = rng.uniform(*config.snr_db)

    for _ in range(config.max_place_attempts):
        azimuths = rng.choice(AZIMUTH_GRID, size=2, replace=False)
        speakers = []
        for azimuth in azimuths:
            reach = _max_ray_distance(center, float(azimuth), room, config.wall_margin)
            if reach <= config.min_speaker_distance:
                speakers = None
                break
            speakers.append(
                SpeakerPlacement(
                    azimuth_deg=float(azimuth),
                    distance_m=rng.uniform(config.min_speaker_distance, reach),
                    height_m=rng.uniform(*config.speaker_height),
                )
            )
        if speakers is None:
            continue
        if abs(speakers[0].distance_m - speakers[1].distance_m) < config.min_distance_gap:
            continue
        return SceneSpec(
            room=room,
            array=array,
            speakers=(speakers[0], speakers[1]),
            noise_snr_db=snr,
            seed=int(rng_seed),
        )
    raise ConfigurationError(
        "no valid speaker placement found; check distance/margin configuration"
    )


# ---------------------------------------------------------------------------
# image-method room impulse responses


def _axis_images(source: float, extent: float, count: int):
    """Mirror-image coordinates and reflection counts along one axis."""
    m = np.arange(-count, count + 1)
    coords = np.concatenate([2.0 * m * extent + source, 2.0 * m * extent - source])
    orders = np.concatenate([2 * np.abs(m), np.abs(m - 1) + np.abs(m)])
    return coords, orders


class _SourceImages:
    """Image lattice of one source, shared across the microphones."""

    def __init__(self, room: RoomSpec, source: np.ndarray, reach: float,
                 max_order: int | None):
        dims = room.dimensions
        counts = np.ceil(reach / (2.0 * dims) + 0.5).astype(int)
        if max_order is not None:
            counts = np.minimum(counts, max_order // 2 + 1)
        self.axes = [
            _axis_images(float(source[i]), float(dims[i]), int(counts[i]))
            for i in range(3)
        ]
        ox, oy, oz = (a[1] for a in self.axes)
        if max_order is not None:
            orders = ox[:, None, None] + oy[None, :, None] + oz[None, None, :]
            self.mask = orders <= max_order
        else:
            self.mask = None
        lbx, lby, lbz = room.axis_log_reflectivities()
        self.gains = np.exp(
            ox[:, None, None] * lbx + oy[None, :, None] * lby + oz[None, None, :] * lbz
        )

    def rir(self, mic: np.ndarray, reach: float, fs: int, c: float) -> np.ndarray:
        cx, cy, cz = (a[0] for a in self.axes)
        dist_sq = (
            ((cx - mic[0]) ** 2)[:, None, None]
            + ((cy - mic[1]) ** 2)[None, :, None]
            + ((cz - mic[2]) ** 2)[None, None, :]
        )
        dist = np.sqrt(dist_sq)
        keep = dist <= reach
        if self.mask is not None:
            keep &= self.mask
        dist = dist[keep]
        amps = self.gains[keep] / (4.0 * np.pi * dist)
        taps = np.rint(dist * fs / c).astype(np.int64)
        length = int(np.rint(reach * fs / c)) + 1
        return np.bincount(taps, weights=amps, minlength=length)[:length]


def _rir_duration(room: RoomSpec) -> float:
    return 1.1 * room.t60 + 0.05


def image_rir(
    room: RoomSpec,
    src,
    mic,
    max_order: int | None = None,
    duration: float | None = None,
    fs: int = SAMPLE_RATE,
    c: float = SPEED_OF_SOUND,
) -> np.ndarray:
    """Image-method impulse response between a source and a microphone.

    max_order limits the number of wall reflections (0 keeps only the direct
    path); None keeps every image whose delay falls within ``duration``
    (default: 1.1 * t60 + 50 ms past the direct arrival), which places the
    discarded tail at least 60 dB below the direct path.
    """
    src = np.asarray(src, dtype=float)
    mic = np.asarray(mic, dtype=float)
    if not room.contains(src):
        raise InvalidGeometryError(f"source {src} outside room")
    if not room.contains(mic):
        raise InvalidGeometryError(f"microphone {mic} outside room")
    if duration is None:
        duration = _rir_duration(room)
    reach = float(np.linalg.norm(src - mic)) + c * duration
    images = _SourceImages(room, src, reach, max_order)
    return images.rir(mic, reach, fs, c)


def render_source(
    utterance: Waveform, scene: SceneSpec, speaker_index: int
) -> tuple[Waveform, Waveform]:
    """Propagate a dry utterance through the room.

    Returns the reverberant 7-channel image of the source and its direct-path
    (reflection-free) image at the reference microphone, which serves as the
    clean training target. Both outputs share the length
    ``len(utterance) + len(rir) - 1``.
    """
    if speaker_index not in (0, 1):
        raise InvalidInputError(f"speaker_index must be 0 or 1, got {speaker_index}")
    if utterance.num_channels != 1:
        raise InvalidInputError("utterances must be mono")
    dry = utterance.samples[0]
    src = scene.speaker_position(speaker_index)
    mics = scene.array.mic_positions
    duration = _rir_duration(scene.room)
    reach = float(max(np.linalg.norm(src - m) for m in mics)) + SPEED_OF_SOUND * duration
    images = _SourceImages(scene.room, src, reach, max_order=None)

    rir_len = int(np.rint(reach * SAMPLE_RATE / SPEED_OF_SOUND)) + 1
    out_len = dry.shape[0] + rir_len - 1
    reverberant = np.zeros((NUM_MICS, out_len))
    for m in range(NUM_MICS):
        h = images.rir(mics[m], reach, SAMPLE_RATE, SPEED_OF_SOUND)
        wet = fftconvolve(dry, h)
        reverberant[m, : wet.shape[0]] = wet

    ref_mic = mics[0]
    d0 = float(np.linalg.norm(src - ref_mic))
    tap = int(np.rint(d0 * SAMPLE_RATE / SPEED_OF_SOUND))
    direct = np.zeros(out_len)
    gain = 1.0 / (4.0 * np.pi * d0)
    direct[tap : tap + dry.shape[0]] = gain * dry
    return Waveform(reverberant), Waveform(direct[None, :])


# ---------------------------------------------------------------------------
# mixing


def _frame_activity(placed_dry: np.ndarray, num_frames: int, frame_shift: int) -> np.ndarray:
    padded = np.zeros(num_frames * frame_shift)
    padded[: placed_dry.shape[0]] = np.abs(placed_dry)
    return padded.reshape(num_frames, frame_shift).max(axis=1) > 0.0


def _assemble_example(
    dry_tracks: np.ndarray,
    scene: SceneSpec,
    snr_db: float,
    overlap_ratio: float,
    rng: np.random.Generator,
    stft_cfg: StftConfig,
) -> MixtureExample:
    """Render two placed dry tracks [2, D] into a MixtureExample."""
    num_samples = dry_tracks.shape[1]
    speech = np.zeros((NUM_MICS, num_samples))
    references = []
    for idx in range(2):
        reverberant, direct = render_source(Waveform(dry_tracks[idx]), scene, idx)
        speech += reverberant.samples[:, :num_samples]
        references.append(Waveform(direct.samples[:, :num_samples]))

    noise = rng.standard_normal((NUM_MICS, num_samples))
    p_speech = float(np.mean(speech[0] ** 2))
    p_noise = float(np.mean(noise[0] ** 2))
    gain = np.sqrt(p_speech / (p_noise * 10.0 ** (snr_db / 10.0)))
    noise *= gain
    mixture = speech + noise

    num_frames = stft_cfg.num_frames(num_samples)
    activity = np.stack(
        [_frame_activity(dry_tracks[i], num_frames, stft_cfg.frame_shift) for i in range(2)]
    )
    return MixtureExample(
        mixture=Waveform(mixture),
        references=(references[0], references[1]),
        activity=activity,
        scene=scene,
        overlap_ratio=overlap_ratio,
        noise=Waveform(noise),
    )


def mix_segment(
    utt_a: Waveform,
    utt_b: Waveform,
    scene: SceneSpec,
    overlap_ratio: float,
    snr_db: float,
    stft_cfg: StftConfig = StftConfig(),
) -> MixtureExample:
    """Mix two utterances at a controlled overlap ratio and SNR.

    Speaker b's onset is offset so the overlapped region spans
    ``overlap_ratio`` of the mixture duration; at ratio 0 a short pause
    (0.1-0.5 s, drawn from the scene seed) separates the utterances. Noise is
    scaled to the target SNR against the summed reverberant speech at the
    reference microphone.
    """
    if not (0.0 <= overlap_ratio < 1.0):
        raise InvalidInputError(f"overlap_ratio {overlap_ratio} outside [0, 1)")
    if not (10.0 <= snr_db <= 30.0):
        raise InvalidInputError(f"snr_db {snr_db} outside [10, 30]")
    if utt_a.num_channels != 1 or utt_b.num_channels != 1:
        raise InvalidInputError("utterances must be mono")

    rng = np.random.default_rng([scene.seed & 0x7FFFFFFF, 0x5EED])
    len_a, len_b = utt_a.num_samples, utt_b.num_samples
    if overlap_ratio == 0.0:
        pause = rng.uniform(0.1, 0.5)
        onset_b = len_a + int(round(pause * SAMPLE_RATE))
    else:
        if len_a * overlap_ratio > len_b or len_b * overlap_ratio > len_a:
            raise InvalidInputError(
                "utterances too short to realize the requested overlap"
            )
        onset_b = int(round((len_a - overlap_ratio * len_b) / (1.0 + overlap_ratio)))
    num_samples = onset_b + len_b

    dry = np.zeros((2, num_samples))
    dry[0, :len_a] = utt_a.samples[0]
    dry[1, onset_b:] = utt_b.samples[0]
    return _assemble_example(dry, scene, snr_db, overlap_ratio, rng, stft_cfg)


def build_meeting(
    utterances: list[tuple[int, Waveform]],
    scene: SceneSpec,
    overlap_ratio: float,
    snr_db: float,
    stft_cfg: StftConfig = StftConfig(),
) -> MixtureExample:
    """Chain (speaker, utterance) turns into one long two-speaker recording.

    Each utterance overlaps the previous turn's tail by ``overlap_ratio`` of
    its own length (a 0.1-0.5 s pause separates turns at ratio 0).
    """
    if any(s not in (0, 1) for s, _ in utterances):
        raise InvalidInputError("speaker indices must be 0 or 1")
    rng = np.random.default_rng([scene.seed & 0x7FFFFFFF, 0x3E2E])
    placements = []
    cursor = 0
    for speaker, utterance in utterances:
        length = utterance.num_samples
        if not placements:
            onset = 0
        elif overlap_ratio == 0.0:
            onset = cursor + int(round(rng.uniform(0.1, 0.5) * SAMPLE_RATE))
        else:
            onset = max(0, cursor - int(round(overlap_ratio * length)))
        placements.append((speaker, onset, utterance))
        cursor = onset + length
    num_samples = cursor
    dry = np.zeros((2, num_samples))
    for speaker, onset, utterance in placements:
        dry[speaker, onset : onset + utterance.num_samples] += utterance.samples[0]
    return _assemble_example(dry, scene, snr_db, overlap_ratio, rng, stft_cfg)


# ---------------------------------------------------------------------------
# synthetic utterances (desk-scale stand-in for a speech corpus)


def synthetic_utterance(rng: np.random.Generator, seconds: float,
                        fs: int = SAMPLE_RATE) -> Waveform:
    """Generate a speech-like harmonic utterance with syllabic gaps."""
    n = int(round(seconds * fs))
    t = np.arange(n) / fs
    f0 = rng.uniform(85.0, 280.0)
    vibrato = 1.0 + 0.02 * np.sin(2.0 * np.pi * rng.uniform(4.0, 7.0) * t + rng.uniform(0, 2 * np.pi))
    phase_base = 2.0 * np.pi * f0 * np.cumsum(vibrato) / fs

    formants = rng.uniform(300.0, 3200.0, size=2)
    bandwidths = rng.uniform(150.0, 500.0, size=2)
    signal = np.zeros(n)
    max_harmonic = int(4000.0 // f0)
    for k in range(1, max_harmonic + 1):
        freq = k * f0
        weight = sum(
            np.exp(-0.5 * ((freq - fc) / bw) ** 2) for fc, bw in zip(formants, bandwidths)
        ) + 0.05
        signal += weight * np.sin(k * phase_base + rng.uniform(0, 2 * np.pi))

    # syllabic on/off gate: smooth ramps, exact zeros in the gaps
    syllable = max(1, int(round(rng.uniform(0.12, 0.3) * fs)))
    gap = int(round(rng.uniform(0.02, 0.08) * fs))
    envelope = np.zeros(n)
    pos = 0
    while pos < n:
        length = min(syllable + int(rng.integers(-syllable // 4, syllable // 4 + 1)), n - pos)
        ramp = min(160, max(1, length // 4))
        seg = np.ones(length)
        seg[:ramp] = np.linspace(0.0, 1.0, ramp, endpoint=False)
        seg[-ramp:] = np.linspace(1.0, 0.0, ramp)
        envelope[pos : pos + length] = seg * rng.uniform(0.6, 1.0)
        pos += length + gap
    signal *= envelope

    active = np.nonzero(signal)[0]
    if active.size == 0:  # pathological draw; fall back to a plain tone burst
        signal = np.sin(phase_base)
        active = np.arange(n)
    signal = signal[active[0] : active[-1] + 1]
    rms = np.sqrt(np.mean(signal**2))
    return Waveform(signal[None, :] * (0.05 / rms))


# ---------------------------------------------------------------------------
# dataset building


@dataclass(frozen=True)
class DatasetConfig:
    """Controls for :func:`build_dataset` and :func:`build_meetings`."""

    seed: int = 0
    corpus_dir: str | None = None
    synthetic_utterances: int = 48
    utterance_seconds: tuple[float, float] = (2.6, 3.6)
    sim: SimConfig = SimConfig()
    workers: int = 1
    meeting_utterances: tuple[int, int] = (8, 10)


def _stratified_ratios(count: int, ratios, weights, rng) -> np.ndarray:
    """Exact largest-remainder allocation of overlap ratios, then shuffled."""
    ideal = np.asarray(weights) * count
    counts = np.floor(ideal).astype(int)
    remainder = count - counts.sum()
    order = np.argsort(-(ideal - counts), kind="stable")
    counts[order[:remainder]] += 1
    values = np.repeat(np.asarray(ratios), counts)
    rng.shuffle(values)
    return values


def _scene_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


def _prepare_corpus(base_dir: Path, config: DatasetConfig) -> list[Path]:
    if config.corpus_dir is not None:
        paths = sorted(Path(config.corpus_dir).glob("*.wav"))
        if len(paths) < 2:
            raise DataError(f"need at least 2 corpus WAVs in {config.corpus_dir}")
        bad = []
        for p in paths:
            try:
                read_wav(p)
            except Exception:
                bad.append(str(p))
        if bad:
            raise DataError("unreadable corpus files: " + ", ".join(bad))
        return paths
    corpus_dir = base_dir / "corpus"
    corpus_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(config.synthetic_utterances):
        rng = np.random.default_rng([config.seed, 0xC0FFEE, i])
        seconds = rng.uniform(*config.utterance_seconds)
        path = corpus_dir / f"utt_{i:04d}.wav"
        write_wav(path, synthetic_utterance(rng, seconds))
        paths.append(path)
    return paths


def _activity_spans(activity_row: np.ndarray) -> list[list[int]]:
    flags = np.concatenate([[0], activity_row.astype(int), [0]])
    edges = np.flatnonzero(np.diff(flags))
    return [[int(s), int(e)] for s, e in zip(edges[::2], edges[1::2])]


def _example_record(index: int, example: MixtureExample, base_dir: Path,
                    wav_dir: Path, prefix: str) -> dict:
    mix_path = wav_dir / f"{prefix}_{index:06d}_mix.wav"
    ref_paths = [wav_dir / f"{prefix}_{index:06d}_ref{n}.wav" for n in range(2)]
    write_wav(mix_path, example.mixture)
    for path, ref in zip(ref_paths, example.references):
        write_wav(path, ref)
    meta = example.scene.meta()
    return {
        "id": f"{prefix}_{index:06d}",
        "mixture_path": str(mix_path.relative_to(base_dir)),
        "ref_paths": [str(p.relative_to(base_dir)) for p in ref_paths],
        "azimuth_deg": [float(a) for a in meta.azimuth_deg],
        "distance_m": [float(d) for d in meta.distance_m],
        "overlap_ratio": float(example.overlap_ratio),
        "t60": float(example.scene.room.t60),
        "snr_db": float(example.scene.noise_snr_db),
        "seed": int(example.scene.seed),
        "num_samples": int(example.mixture.num_samples),
        "activity": [_activity_spans(row) for row in example.activity],
    }


def _generate_mixture(args) -> dict:
    index, base_dir, corpus, ratio, config = args
    base_dir = Path(base_dir)
    scene_seed = _scene_seed(config.seed, index)
    scene = sample_scene(scene_seed, config.sim)
    rng = np.random.default_rng([config.seed, 0xA11CE, index])
    picks = rng.choice(len(corpus), size=2, replace=False)
    utt_a = read_wav(corpus[picks[0]])
    utt_b = read_wav(corpus[picks[1]])
    example = mix_segment(utt_a, utt_b, scene, float(ratio), scene.noise_snr_db)
    return _example_record(index, example, base_dir, base_dir / "wav", "mix")


def _generate_meeting(args) -> dict:
    index, base_dir, corpus, ratio, config = args
    base_dir = Path(base_dir)
    scene_seed = _scene_seed(config.seed + 0x6EE7, index)
    scene = sample_scene(scene_seed, config.sim)
    rng = np.random.default_rng([config.seed, 0x6EE7, index])
    count = int(rng.integers(config.meeting_utterances[0], config.meeting_utterances[1] + 1))
    turns = []
    for k in range(count):
        pick = int(rng.integers(0, len(corpus)))
        turns.append((k % 2, read_wav(corpus[pick])))
    example = build_meeting(turns, scene, float(ratio), scene.noise_snr_db)
    record = _example_record(index, example, base_dir, base_dir / "wav", "meet")
    record["num_utterances"] = count
    return record


def _build(manifest_out, count, config, worker) -> Path:
    manifest_out = Path(manifest_out)
    base_dir = manifest_out.parent
    (base_dir / "wav").mkdir(parents=True, exist_ok=True)
    corpus = _prepare_corpus(base_dir, config)
    ratios = _stratified_ratios(
        count,
        config.sim.overlap_ratios,
        config.sim.overlap_weights,
        np.random.default_rng([config.seed, 0x0DD5]),
    )
    jobs = [(i, str(base_dir), corpus, ratios[i], config) for i in range(count)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            records = list(pool.map(worker, jobs, chunksize=8))
    else:
        records = [worker(job) for job in jobs]
    with open(manifest_out, "w") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")
    return manifest_out


def build_dataset(manifest_out, count: int, config: DatasetConfig = DatasetConfig()) -> Path:
    """Render ``count`` two-speaker mixtures and write a JSON-lines manifest.

    WAVs land in ``wav/`` next to the manifest; a synthetic corpus is
    generated under ``corpus/`` when no corpus_dir is configured. The output
    is byte-identical across runs with the same seed and configuration.
    """
    return _build(manifest_out, count, config, _generate_mixture)


def build_meetings(manifest_out, count: int, config: DatasetConfig = DatasetConfig()) -> Path:
    """Render long two-speaker meetings (8-10 utterances each)."""
    return _build(manifest_out, count, config, _generate_meeting)
