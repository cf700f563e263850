"""Training criteria for the separator.

The base loss between a complex estimate and its reference sums three mean
L1 terms: real-part error, imaginary-part error and magnitude error. The
permutation-invariant criterion minimizes the summed base loss over all
output/reference permutations (N! * N base-loss evaluations); the
location-based criterion fixes the assignment by sorting speakers on azimuth
or distance (N evaluations). The multi-resolution extension adds the same
assignment's loss between each decoder-tap estimate and an average-pooled
reference at the matching resolution.

All tensors are complex, shaped [T, F] per speaker; functions here operate on
a single example (trainers loop over the batch and average).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import torch

from .dsp import StftConfig, stft_signal
from .errors import InvalidInputError


@dataclass
class Assignment:
    """A bijection from output index to reference index.

    kind records how the order was chosen: "pit-argmin", "azimuth",
    "distance" or "single-active" (the non-overlap convention where the
    active speaker maps to the first output).
    """

    order: tuple[int, ...]
    kind: str

    def __post_init__(self):
        if sorted(self.order) != list(range(len(self.order))):
            raise InvalidInputError(f"order {self.order} is not a permutation")

    def permute(self, refs: torch.Tensor) -> torch.Tensor:
        """Reference stack [N, ...] reordered so entry n matches output n."""
        return refs[list(self.order)]


@dataclass
class LossBreakdown:
    """Terms of one loss evaluation; total = final_term + sum(tap_terms)."""

    total: torch.Tensor
    final_term: torch.Tensor
    tap_terms: list[torch.Tensor] = field(default_factory=list)
    base_components: tuple[float, float, float] = (0.0, 0.0, 0.0)
    evaluations: int = 0

    def to_record(self) -> dict:
        return {
            "total": float(self.total),
            "final": float(self.final_term),
            "taps": [float(t) for t in self.tap_terms],
            "components": [float(c) for c in self.base_components],
            "evaluations": self.evaluations,
        }


def _scalar(value) -> float:
    if isinstance(value, torch.Tensor):
        return float(value.detach())
    return float(value)


def base_loss(est: torch.Tensor, ref: torch.Tensor):
    """Mean-per-bin L1 of real, imaginary and magnitude differences.

    Returns the scalar loss and its (real, imag, magnitude) components.
    """
    if est.shape != ref.shape:
        raise InvalidInputError(f"shape mismatch: {tuple(est.shape)} vs {tuple(ref.shape)}")
    real_l1 = (est.real - ref.real).abs().mean()
    imag_l1 = (est.imag - ref.imag).abs().mean()
    mag_l1 = (est.abs() - ref.abs()).abs().mean()
    return real_l1 + imag_l1 + mag_l1, (real_l1, imag_l1, mag_l1)


def _summed_loss(est: torch.Tensor, refs_in_order: torch.Tensor):
    total = None
    components = [None, None, None]
    for n in range(est.shape[0]):
        term, parts = base_loss(est[n], refs_in_order[n])
        total = term if total is None else total + term
        for i, p in enumerate(parts):
            components[i] = p if components[i] is None else components[i] + p
    return total, components


def pit_loss(est: torch.Tensor, refs: torch.Tensor):
    """Minimum summed base loss over all output/reference permutations.

    est, refs: complex [N, T, F]. Returns (loss, argmin Assignment,
    LossBreakdown); the breakdown counts N! * N base-loss evaluations.
    """
    if est.shape != refs.shape:
        raise InvalidInputError(f"shape mismatch: {tuple(est.shape)} vs {tuple(refs.shape)}")
    n_speakers = est.shape[0]
    best = None
    evaluations = 0
    for perm in itertools.permutations(range(n_speakers)):
        total, components = _summed_loss(est, refs[list(perm)])
        evaluations += n_speakers
        if best is None or _scalar(total) < _scalar(best[0]):
            best = (total, perm, components)
    total, perm, components = best
    assign = Assignment(order=perm, kind="pit-argmin")
    breakdown = LossBreakdown(
        total=total,
        final_term=total,
        base_components=tuple(_scalar(c) for c in components),
        evaluations=evaluations,
    )
    return total, assign, breakdown


def lbt_assignment(scene_meta, criterion: str, activity) -> Assignment:
    """Output order from speaker geometry and segment activity.

    With both speakers active, outputs follow the ascending sort of the
    chosen criterion (ties broken by manifest speaker index). With one
    active speaker, it maps to the first output and the zero-target speaker
    to the second. With none active the order is the identity; both targets
    are zero anyway.
    """
    if criterion not in ("azimuth", "distance"):
        raise InvalidInputError(f"unknown criterion {criterion!r}")
    values = scene_meta.azimuth_deg if criterion == "azimuth" else scene_meta.distance_m
    active = [bool(a) for a in activity]
    if len(values) != len(active):
        raise InvalidInputError("activity length does not match speaker count")
    if all(active):
        order = tuple(int(i) for i in np.argsort(values, kind="stable"))
        return Assignment(order=order, kind=criterion)
    if any(active):
        first = active.index(True)
        rest = [i for i in range(len(active)) if i != first]
        return Assignment(order=(first, *rest), kind="single-active")
    return Assignment(order=tuple(range(len(active))), kind="single-active")


def lbt_loss(est: torch.Tensor, refs: torch.Tensor, assign: Assignment):
    """Summed base loss under a fixed assignment (N evaluations)."""
    if est.shape != refs.shape:
        raise InvalidInputError(f"shape mismatch: {tuple(est.shape)} vs {tuple(refs.shape)}")
    total, components = _summed_loss(est, assign.permute(refs))
    breakdown = LossBreakdown(
        total=total,
        final_term=total,
        base_components=tuple(_scalar(c) for c in components),
        evaluations=est.shape[0],
    )
    return total, breakdown


def pool_target(spec: torch.Tensor, x: int) -> torch.Tensor:
    """Recursive 2x2 average pooling (stride 2) of a complex spectrogram.

    The real and imaginary planes are pooled independently; x = 0 is the
    identity. Trailing dims must be divisible by 2^x.
    """
    if x < 0:
        raise InvalidInputError("pooling count must be >= 0")
    if x == 0:
        return spec
    factor = 2**x
    t, f = spec.shape[-2], spec.shape[-1]
    if t % factor or f % factor:
        raise InvalidInputError(
            f"spectrogram dims ({t}, {f}) not divisible by 2^{x}"
        )
    flat = spec.reshape(-1, 1, t, f)
    pooled_r = torch.nn.functional.avg_pool2d(flat.real, factor, factor)
    pooled_i = torch.nn.functional.avg_pool2d(flat.imag, factor, factor)
    pooled = torch.complex(pooled_r, pooled_i)
    return pooled.reshape(*spec.shape[:-2], t // factor, f // factor)


def multires_loss(output, refs: torch.Tensor, assign: Assignment) -> LossBreakdown:
    """Assignment-consistent loss over the final estimates and all taps.

    output: SeparatorOutput with K_d - 1 taps; refs: complex [N, T, F] on the
    padded grid. Every term reuses the same Assignment; tap k is compared to
    the reference pooled K_d - k times. All terms carry unit weight.
    """
    num_taps = len(output.taps)
    decoder_layers = num_taps + 1
    final_term, final_parts = _summed_loss(output.final, assign.permute(refs))
    components = [_scalar(p) for p in final_parts]
    evaluations = refs.shape[0]
    tap_terms = []
    for k, tap in enumerate(output.taps, start=1):
        pooled = pool_target(refs, decoder_layers - k)
        if tap.shape != pooled.shape:
            raise InvalidInputError(
                f"tap {k} shape {tuple(tap.shape)} does not match pooled "
                f"target {tuple(pooled.shape)}"
            )
        term, parts = _summed_loss(tap, assign.permute(pooled))
        tap_terms.append(term)
        for i, p in enumerate(parts):
            components[i] += _scalar(p)
        evaluations += refs.shape[0]
    total = final_term
    for term in tap_terms:
        total = total + term
    return LossBreakdown(
        total=total,
        final_term=final_term,
        tap_terms=tap_terms,
        base_components=tuple(components),
        evaluations=evaluations,
    )


def pit_multires_loss(output, refs: torch.Tensor):
    """Permutation-invariant variant of the multi-resolution loss: the total
    over final and tap terms is minimized with one consistent permutation per
    example (the order may still differ across examples)."""
    n_speakers = refs.shape[0]
    best = None
    evaluations = 0
    for perm in itertools.permutations(range(n_speakers)):
        candidate = multires_loss(output, refs, Assignment(order=perm, kind="pit-argmin"))
        evaluations += candidate.evaluations
        if best is None or _scalar(candidate.total) < _scalar(best[1].total):
            best = (perm, candidate)
    perm, breakdown = best
    breakdown.evaluations = evaluations
    return breakdown.total, Assignment(order=perm, kind="pit-argmin"), breakdown


def make_segment_targets(example, segment_window: tuple[int, int], scale: float,
                         stft_cfg: StftConfig = StftConfig()):
    """Reference spectrograms for one training segment.

    Crops each reference to [start, end), applies the mixture-normalization
    scale, and substitutes an all-zero spectrogram for speakers with no
    active frame inside the window. Returns a complex array [2, T, F] and an
    activity summary (count of active speakers, per-speaker flags).

    The window start must be a multiple of the frame shift so the cropped
    activity aligns with STFT frames.
    """
    start, end = segment_window
    if start % stft_cfg.frame_shift != 0:
        raise InvalidInputError("segment start must be frame-shift aligned")
    num_frames = stft_cfg.num_frames(end - start)
    frame_start = start // stft_cfg.frame_shift
    specs = np.zeros((2, num_frames, stft_cfg.num_bins), dtype=np.complex128)
    flags = []
    for n, ref in enumerate(example.references):
        window_activity = example.activity[n, frame_start : frame_start + num_frames]
        active = bool(window_activity.any())
        flags.append(active)
        if active:
            segment = np.zeros(end - start)
            available = ref.samples[0, start : min(end, ref.num_samples)]
            segment[: available.shape[0]] = available
            specs[n] = stft_signal(segment * scale, stft_cfg)
    return specs, (sum(flags), tuple(flags))
