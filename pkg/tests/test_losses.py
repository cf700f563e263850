import itertools

import numpy as np
import pytest
import torch

from cssep.errors import InvalidInputError
from cssep.losses import (
    Assignment,
    base_loss,
    lbt_assignment,
    lbt_loss,
    make_segment_targets,
    multires_loss,
    pit_loss,
    pit_multires_loss,
    pool_target,
)
from cssep.model import SeparatorOutput
from cssep.spatialsim import SceneMeta

from _oracles import base_loss_np, multires_total_np, pool2x2


def _rand_specs(rng, n=2, t=6, f=5):
    return torch.complex(
        torch.from_numpy(rng.standard_normal((n, t, f))),
        torch.from_numpy(rng.standard_normal((n, t, f))),
    )


def _meta(azimuths=(30.0, -50.0), distances=(1.0, 2.0)):
    return SceneMeta(azimuth_deg=azimuths, distance_m=distances)


# ---------------------------------------------------------------------------
# base loss


def test_base_loss_zero_when_equal():
    rng = np.random.default_rng(0)
    spec = _rand_specs(rng)[0]
    loss, parts = base_loss(spec, spec)
    assert float(loss) == 0.0
    assert all(float(p) == 0.0 for p in parts)


def test_base_loss_hand_value():
    est = torch.zeros((1, 1), dtype=torch.complex128)
    ref = torch.full((1, 1), 3.0 + 4.0j, dtype=torch.complex128)
    loss, parts = base_loss(est, ref)
    # |3| + |4| + |3+4i| = 3 + 4 + 5
    assert abs(float(loss) - 12.0) < 1e-12
    assert abs(float(parts[2]) - 5.0) < 1e-12


def test_base_loss_homogeneous():
    rng = np.random.default_rng(1)
    est, ref = _rand_specs(rng), _rand_specs(rng)
    base, _ = base_loss(est[0], ref[0])
    scaled, _ = base_loss(2.5 * est[0], 2.5 * ref[0])
    assert abs(float(scaled) - 2.5 * float(base)) < 1e-9


def test_base_loss_matches_numpy_oracle():
    rng = np.random.default_rng(2)
    est, ref = _rand_specs(rng)[0], _rand_specs(rng)[0]
    loss, _ = base_loss(est, ref)
    assert abs(float(loss) - base_loss_np(est.numpy(), ref.numpy())) < 1e-12


def test_base_loss_shape_mismatch():
    with pytest.raises(InvalidInputError):
        base_loss(torch.zeros((2, 3), dtype=torch.complex128),
                  torch.zeros((3, 2), dtype=torch.complex128))


# ---------------------------------------------------------------------------
# PIT


def test_pit_identity_and_swap():
    rng = np.random.default_rng(3)
    refs = _rand_specs(rng)
    loss, assign, breakdown = pit_loss(refs, refs)
    assert float(loss) == 0.0 and assign.order == (0, 1)
    swapped = refs[[1, 0]]
    loss, assign, breakdown = pit_loss(swapped, refs)
    assert float(loss) == 0.0 and assign.order == (1, 0)
    assert breakdown.evaluations == 4


def test_pit_matches_bruteforce_n3():
    rng = np.random.default_rng(4)
    est = _rand_specs(rng, n=3)
    refs = _rand_specs(rng, n=3)
    loss, assign, breakdown = pit_loss(est, refs)
    # independent exhaustive search
    best = min(
        sum(base_loss_np(est[n].numpy(), refs[p[n]].numpy()) for n in range(3))
        for p in itertools.permutations(range(3))
    )
    assert abs(float(loss) - best) < 1e-10
    assert breakdown.evaluations == 6 * 3


def test_pit_argmin_stable_under_scaling():
    rng = np.random.default_rng(5)
    for _ in range(20):
        est, refs = _rand_specs(rng), _rand_specs(rng)
        _, a1, _ = pit_loss(est, refs)
        _, a2, _ = pit_loss(3.7 * est, 3.7 * refs)
        assert a1.order == a2.order


# ---------------------------------------------------------------------------
# LBT


def test_lbt_assignment_azimuth_sort():
    assign = lbt_assignment(_meta(), "azimuth", (True, True))
    assert assign.order == (1, 0) and assign.kind == "azimuth"


def test_lbt_assignment_distance_sort():
    assign = lbt_assignment(_meta(), "distance", (True, True))
    assert assign.order == (0, 1) and assign.kind == "distance"


def test_lbt_assignment_single_active():
    assign = lbt_assignment(_meta(), "azimuth", (False, True))
    assert assign.order == (1, 0) and assign.kind == "single-active"
    assign = lbt_assignment(_meta(), "azimuth", (True, False))
    assert assign.order == (0, 1) and assign.kind == "single-active"


def test_lbt_assignment_none_active():
    assign = lbt_assignment(_meta(), "azimuth", (False, False))
    assert assign.order == (0, 1) and assign.kind == "single-active"


def test_lbt_assignment_tie_breaks_by_index():
    assign = lbt_assignment(_meta(azimuths=(10.0, 10.0)), "azimuth", (True, True))
    assert assign.order == (0, 1)


def test_lbt_assignment_rejects_bad_criterion():
    with pytest.raises(InvalidInputError):
        lbt_assignment(_meta(), "height", (True, True))


def test_lbt_loss_zero_in_assigned_order():
    rng = np.random.default_rng(6)
    refs = _rand_specs(rng)
    assign = Assignment(order=(1, 0), kind="azimuth")
    loss, breakdown = lbt_loss(refs[[1, 0]], refs, assign)
    assert float(loss) == 0.0
    assert breakdown.evaluations == 2


def test_pit_never_exceeds_lbt():
    rng = np.random.default_rng(7)
    for _ in range(50):
        est, refs = _rand_specs(rng), _rand_specs(rng)
        pit, pit_assign, _ = pit_loss(est, refs)
        for order in ((0, 1), (1, 0)):
            lbt, _ = lbt_loss(est, refs, Assignment(order=order, kind="azimuth"))
            assert float(pit) <= float(lbt) + 1e-12
            if order == pit_assign.order:
                assert abs(float(pit) - float(lbt)) < 1e-12


def test_evaluation_count_law():
    rng = np.random.default_rng(8)
    for n in (2, 3):
        est, refs = _rand_specs(rng, n=n), _rand_specs(rng, n=n)
        _, _, pit_bd = pit_loss(est, refs)
        factorial = 1
        for i in range(2, n + 1):
            factorial *= i
        assert pit_bd.evaluations == factorial * n
        order = tuple(range(n))
        _, lbt_bd = lbt_loss(est, refs, Assignment(order=order, kind="azimuth"))
        assert lbt_bd.evaluations == n


# ---------------------------------------------------------------------------
# pooling


def test_pool_identity():
    rng = np.random.default_rng(9)
    spec = _rand_specs(rng)[0]
    assert torch.equal(pool_target(spec, 0), spec)


def test_pool_hand_value():
    plane = torch.tensor([[1.0, 2.0], [3.0, 5.0]])
    spec = torch.complex(plane, torch.zeros_like(plane))
    pooled = pool_target(spec, 1)
    assert pooled.shape == (1, 1)
    assert abs(float(pooled.real[0, 0]) - 2.75) < 1e-12


def test_pool_constant():
    spec = torch.full((8, 8), 1.5 - 0.5j, dtype=torch.complex128)
    for x in (1, 2, 3):
        pooled = pool_target(spec, x)
        assert torch.allclose(pooled, torch.full_like(pooled, 1.5 - 0.5j))


def test_pool_linearity_and_oracle():
    rng = np.random.default_rng(10)
    a = _rand_specs(rng, n=1, t=8, f=8)[0]
    b = _rand_specs(rng, n=1, t=8, f=8)[0]
    lhs = pool_target(2.0 * a + 3.0 * b, 2)
    rhs = 2.0 * pool_target(a, 2) + 3.0 * pool_target(b, 2)
    assert torch.allclose(lhs, rhs, atol=1e-6)
    np.testing.assert_allclose(pool_target(a, 2).numpy(), pool2x2(a.numpy(), 2), atol=1e-12)


def test_pool_requires_divisible_dims():
    with pytest.raises(InvalidInputError):
        pool_target(torch.zeros((6, 6), dtype=torch.complex128), 2)


# ---------------------------------------------------------------------------
# multi-resolution


def _toy_output(rng, t=8, f=8, taps=1):
    final = _rand_specs(rng, t=t, f=f)
    tap_list = [
        _rand_specs(rng, t=t // 2 ** (taps - k + 1), f=f // 2 ** (taps - k + 1))
        for k in range(1, taps + 1)
    ]
    return SeparatorOutput(final=final, taps=tap_list)


def test_multires_zero_for_perfect_estimates():
    rng = np.random.default_rng(11)
    refs = _rand_specs(rng, t=8, f=8)
    assign = Assignment(order=(1, 0), kind="azimuth")
    output = SeparatorOutput(
        final=assign.permute(refs).clone(),
        taps=[pool_target(assign.permute(refs), 1).clone()],
    )
    breakdown = multires_loss(output, refs, assign)
    assert float(breakdown.total) == 0.0
    assert len(breakdown.tap_terms) == 1


def test_multires_term_structure():
    rng = np.random.default_rng(12)
    refs = _rand_specs(rng, t=8, f=8)
    output = _toy_output(rng, taps=1)
    breakdown = multires_loss(output, refs, Assignment(order=(0, 1), kind="azimuth"))
    assert len(breakdown.tap_terms) == 1
    assert abs(
        float(breakdown.total)
        - (float(breakdown.final_term) + sum(float(t) for t in breakdown.tap_terms))
    ) < 1e-12
    assert breakdown.evaluations == 2 * 2  # (final + 1 tap) x 2 speakers


def test_multires_matches_bruteforce_oracle():
    rng = np.random.default_rng(13)
    refs = _rand_specs(rng, t=16, f=8)
    output = _toy_output(rng, t=16, f=8, taps=2)
    order = (1, 0)
    breakdown = multires_loss(output, refs, Assignment(order=order, kind="azimuth"))
    oracle = multires_total_np(
        output.final.numpy(),
        [t.numpy() for t in output.taps],
        refs.numpy(),
        order,
        decoder_layers=3,
    )
    assert abs(float(breakdown.total) - oracle) < 1e-6


def test_multires_uses_one_assignment_for_all_terms():
    calls = []

    class SpyAssignment(Assignment):
        def permute(self, refs):
            calls.append(self.order)
            return super().permute(refs)

    rng = np.random.default_rng(14)
    refs = _rand_specs(rng, t=8, f=8)
    output = _toy_output(rng, taps=1)
    spy = SpyAssignment(order=(1, 0), kind="azimuth")
    multires_loss(output, refs, spy)
    assert len(calls) == 2  # final + one tap
    assert all(order == (1, 0) for order in calls)


def test_multires_shape_mismatch_raises():
    rng = np.random.default_rng(15)
    refs = _rand_specs(rng, t=8, f=8)
    bad = SeparatorOutput(final=_rand_specs(rng, t=8, f=8),
                          taps=[_rand_specs(rng, t=2, f=2)])
    with pytest.raises(InvalidInputError):
        multires_loss(bad, refs, Assignment(order=(0, 1), kind="azimuth"))


def test_pit_multires_consistent_permutation():
    rng = np.random.default_rng(16)
    refs = _rand_specs(rng, t=8, f=8)
    assign = Assignment(order=(1, 0), kind="azimuth")
    output = SeparatorOutput(
        final=assign.permute(refs).clone(),
        taps=[pool_target(assign.permute(refs), 1).clone()],
    )
    loss, best, breakdown = pit_multires_loss(output, refs)
    assert float(loss) == 0.0
    assert best.order == (1, 0)
    assert breakdown.evaluations == 2 * (2 * 2)  # both perms counted


# ---------------------------------------------------------------------------
# segment targets


class _FakeExample:
    def __init__(self, references, activity):
        self.references = references
        self.activity = activity


def _fake_example(active_a=True, active_b=True, n=38400):
    from cssep.dsp import Waveform

    rng = np.random.default_rng(17)
    frames = -(-n // 128)
    refs = []
    activity = np.zeros((2, frames), dtype=bool)
    for i, active in enumerate((active_a, active_b)):
        samples = rng.standard_normal(n) * 0.1 if active else np.zeros(n)
        refs.append(Waveform(samples[None, :]))
        activity[i, :] = active
    return _FakeExample(tuple(refs), activity)


def test_segment_targets_single_active():
    example = _fake_example(active_a=False, active_b=True)
    targets, (count, flags) = make_segment_targets(example, (0, 38400), 1.0)
    assert count == 1 and flags == (False, True)
    assert np.all(targets[0] == 0)
    assert np.any(targets[1] != 0)


def test_segment_targets_both_active():
    example = _fake_example()
    targets, (count, _) = make_segment_targets(example, (0, 38400), 0.5)
    assert count == 2
    assert np.any(targets[0] != 0) and np.any(targets[1] != 0)


def test_segment_targets_silence():
    example = _fake_example(active_a=False, active_b=False)
    targets, (count, _) = make_segment_targets(example, (0, 38400), 1.0)
    assert count == 0
    assert np.all(targets == 0)
    est = torch.zeros((2,) + targets.shape[1:], dtype=torch.complex128)
    loss, _ = base_loss(est[0], torch.from_numpy(targets[0]))
    assert float(loss) == 0.0


def test_segment_targets_respects_scale():
    example = _fake_example()
    one, _ = make_segment_targets(example, (0, 38400), 1.0)
    two, _ = make_segment_targets(example, (0, 38400), 2.0)
    np.testing.assert_allclose(two, 2.0 * one, atol=1e-12)


def test_segment_targets_requires_aligned_start():
    example = _fake_example()
    with pytest.raises(InvalidInputError):
        make_segment_targets(example, (100, 38500), 1.0)
