"""Continuous-separation inference: segmentation, per-segment separation,
stream stitching and counter-driven residual suppression.

Recordings are processed in 2.4 s segments with a 1.2 s shift; consecutive
segments therefore share a 1.2 s overlap. Each segment is separated
independently. Adjacent segments are aligned by picking the output
permutation that minimizes the L1 distance between STFT magnitudes over the
shared overlap, then merged with a raised-cosine crossfade in the time
domain. Frames the speaker counter labels as non-overlapped are collapsed
into the dominant stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .dsp import (
    SAMPLE_RATE,
    StftConfig,
    Waveform,
    apply_feature_norm,
    istft_signal,
    mixture_features,
    normalize_mixture,
    stft_signal,
)
from .errors import InvalidInputError
from .model import crop_spec, pad_to_multiple

SEGMENT_SECONDS = 2.4
SHIFT_SECONDS = 1.2


@dataclass(frozen=True)
class SegmentPlan:
    """Segment boundaries covering a recording.

    Consecutive segments overlap by segment_length - segment_shift samples;
    the last segment may extend past the recording and is zero-padded.
    """

    segment_length: int
    segment_shift: int
    boundaries: tuple[tuple[int, int], ...]

    @property
    def overlap(self) -> int:
        return self.segment_length - self.segment_shift


@dataclass
class SpeakerStreams:
    """Two stitched speaker streams plus the per-segment decision trace."""

    streams: np.ndarray  # [2, num_samples]
    trace: list[dict] = field(default_factory=list)


def plan_segments(
    num_samples: int,
    segment_length: int = int(SEGMENT_SECONDS * SAMPLE_RATE),
    segment_shift: int = int(SHIFT_SECONDS * SAMPLE_RATE),
) -> SegmentPlan:
    """Boundaries for segment-wise processing.

    A recording that fits in one segment yields a single boundary; otherwise
    a segment opens at every shift multiple below the recording length.
    """
    if num_samples < 1:
        raise InvalidInputError("recording must contain at least one sample")
    if num_samples <= segment_length:
        starts = [0]
    else:
        starts = list(range(0, num_samples, segment_shift))
    boundaries = tuple((s, s + segment_length) for s in starts)
    return SegmentPlan(segment_length, segment_shift, boundaries)


def extract_segments(samples: np.ndarray, plan: SegmentPlan) -> list[np.ndarray]:
    """Cut [C, n] samples into zero-padded [C, segment_length] segments."""
    segments = []
    for start, end in plan.boundaries:
        segment = np.zeros((samples.shape[0], plan.segment_length), dtype=samples.dtype)
        chunk = samples[:, start : min(end, samples.shape[1])]
        segment[:, : chunk.shape[1]] = chunk
        segments.append(segment)
    return segments


def stitch(
    prev_tail: np.ndarray,
    next_head: np.ndarray,
    stft_cfg: StftConfig = StftConfig(),
) -> tuple[int, int]:
    """Output permutation of the next segment against the previous one.

    Both arguments hold the two streams over the shared overlap region,
    shaped [2, overlap]. The winning permutation minimizes the total L1
    distance between STFT magnitudes of the paired streams; an all-zero
    overlap on both sides keeps the identity.
    """
    if prev_tail.shape != next_head.shape or prev_tail.shape[0] != 2:
        raise InvalidInputError("stitch expects two aligned [2, overlap] blocks")
    if not np.any(prev_tail) and not np.any(next_head):
        return (0, 1)
    prev_mag = [np.abs(stft_signal(prev_tail[n], stft_cfg)) for n in range(2)]
    next_mag = [np.abs(stft_signal(next_head[n], stft_cfg)) for n in range(2)]
    costs = {}
    for perm in ((0, 1), (1, 0)):
        costs[perm] = sum(
            np.abs(prev_mag[n] - next_mag[perm[n]]).sum() for n in range(2)
        )
    return min(costs, key=lambda p: (costs[p], p))


def _crossfade_windows(overlap: int) -> tuple[np.ndarray, np.ndarray]:
    rise = 0.5 * (1.0 - np.cos(np.pi * (np.arange(overlap) + 0.5) / overlap))
    return 1.0 - rise, rise


def stitch_segments(
    segments: list[np.ndarray], plan: SegmentPlan, num_samples: int
) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Left-to-right fold of per-segment stream pairs into full streams.

    segments: one [2, segment_length] array per boundary. Returns the
    stitched [2, num_samples] streams and the permutation applied to each
    segment (the first is always the identity).
    """
    if len(segments) != len(plan.boundaries):
        raise InvalidInputError("segment count does not match the plan")
    total = plan.boundaries[-1][0] + plan.segment_length
    streams = np.zeros((2, total))
    fade_out, fade_in = _crossfade_windows(plan.overlap)
    perms: list[tuple[int, int]] = []
    for i, ((start, _), segment) in enumerate(zip(plan.boundaries, segments)):
        if i == 0:
            perm = (0, 1)
            streams[:, start : start + plan.segment_length] = segment
        else:
            prev_tail = streams[:, start : start + plan.overlap]
            perm = stitch(prev_tail, segment[:, : plan.overlap])
            oriented = segment[list(perm)]
            streams[:, start : start + plan.overlap] = (
                prev_tail * fade_out + oriented[:, : plan.overlap] * fade_in
            )
            streams[:, start + plan.overlap : start + plan.segment_length] = oriented[
                :, plan.overlap :
            ]
        perms.append(perm)
    return streams[:, :num_samples], perms


def suppress_residual(
    streams: np.ndarray,
    counter_probs: np.ndarray,
    frame_shift: int = StftConfig().frame_shift,
    threshold: float | None = None,
) -> np.ndarray:
    """Collapse non-overlapped frames into the dominant stream.

    counter_probs holds per-frame class probabilities over {0, 1, 2} active
    speakers, aligned so frame t covers samples [t*frame_shift,
    (t+1)*frame_shift). One-speaker frames are summed into the higher-energy
    stream and the other stream is zeroed; zero-speaker frames are zeroed in
    both; two-speaker frames pass through. With a threshold set, a frame
    counts as two-speaker only when its class-2 probability reaches it.
    """
    streams = np.array(streams, copy=True)
    num_frames = -(-streams.shape[1] // frame_shift)
    if counter_probs.shape[0] != num_frames:
        raise InvalidInputError(
            f"{counter_probs.shape[0]} counter frames for {num_frames} stream frames"
        )
    classes = np.argmax(counter_probs, axis=-1)
    if threshold is not None:
        demote = (classes == 2) & (counter_probs[:, 2] < threshold)
        classes = np.where(demote, 1, classes)
    for t in range(num_frames):
        if classes[t] == 2:
            continue
        lo = t * frame_shift
        hi = min(lo + frame_shift, streams.shape[1])
        if classes[t] == 0:
            streams[:, lo:hi] = 0.0
        else:
            energies = np.sum(streams[:, lo:hi] ** 2, axis=1)
            dominant = int(np.argmax(energies))
            streams[dominant, lo:hi] += streams[1 - dominant, lo:hi]
            streams[1 - dominant, lo:hi] = 0.0
    return streams


def _expand_counter_probs(probs: np.ndarray, pool_factor: int, num_frames: int) -> np.ndarray:
    expanded = np.repeat(probs, pool_factor, axis=0)
    if expanded.shape[0] < num_frames:
        pad = np.tile(expanded[-1:], (num_frames - expanded.shape[0], 1))
        expanded = np.concatenate([expanded, pad], axis=0)
    return expanded[:num_frames]


def separate_stream(
    recording: Waveform,
    bundle,
    use_counter: bool = True,
) -> SpeakerStreams:
    """Full separation chain on a multichannel recording.

    bundle is a loaded checkpoint (see cssep.checkpoint) holding the
    separator, optional counter and feature statistics. The chain runs:
    variance normalization, segmentation, STFT features, separator forward,
    inverse STFT, stitching, and counter-driven residual suppression. Streams
    come back at the recording's length and original scale.
    """
    samples = recording.samples
    if not np.any(samples):
        return SpeakerStreams(streams=np.zeros((2, samples.shape[1])), trace=[])
    normalized, scale = normalize_mixture(recording)
    stft_cfg = bundle.stft_config
    plan = plan_segments(samples.shape[1])
    segments = extract_segments(normalized.samples, plan)

    separator = bundle.separator
    separator.eval()
    factor = separator.cfg.downsample_factor
    counter = bundle.counter if use_counter else None

    outputs = []
    counter_chunks = []
    with torch.no_grad():
        for segment in segments:
            features = mixture_features(Waveform(segment), stft_cfg)
            features = apply_feature_norm(features, bundle.feature_stats)
            num_frames, num_bins = features.shape[1], features.shape[2]
            tensor = pad_to_multiple(torch.from_numpy(features).float(), factor)
            est = crop_spec(separator(tensor).final, num_frames, num_bins).numpy()
            waves = np.stack(
                [
                    istft_signal(est[n], stft_cfg, length=plan.segment_length)
                    for n in range(2)
                ]
            )
            outputs.append(waves)
            if counter is not None:
                probs = counter(tensor).numpy()
                counter_chunks.append(
                    _expand_counter_probs(probs, counter.cfg.pool_factor, num_frames)
                )

    streams, perms = stitch_segments(outputs, plan, samples.shape[1])

    trace = [
        {"start": int(start), "permutation": list(perm)}
        for (start, _), perm in zip(plan.boundaries, perms)
    ]
    if counter is not None:
        total_frames = stft_cfg.num_frames(samples.shape[1])
        probs = np.zeros((total_frames, 3))
        for (start, _), chunk, perm in zip(plan.boundaries, counter_chunks, perms):
            lo = start // stft_cfg.frame_shift
            hi = min(lo + chunk.shape[0], total_frames)
            probs[lo:hi] = chunk[: hi - lo]
        streams = suppress_residual(streams, probs, stft_cfg.frame_shift)
        for entry, chunk in zip(trace, counter_chunks):
            counts = np.bincount(np.argmax(chunk, axis=-1), minlength=3)
            entry["counter_frames"] = [int(c) for c in counts]

    return SpeakerStreams(streams=streams / scale, trace=trace)
