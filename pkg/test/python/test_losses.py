"""Test the training losses and the evaluation metrics."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gms import tensor as T
from gms.errors import ConfigurationError, DimensionError, ValidationError
from gms.losses import (
    DICE_EPS,
    LossConfig,
    LossMode,
    MetricResult,
    boundary,
    compound_loss,
    dsc_iou,
    evaluate_masks,
    hd95,
    latent_matching_loss,
    loss_components,
    soft_dice_loss,
)
from gms.tensor import Tensor

seeds = st.integers(0, 2**32 - 1)


def _random_mask(rng: np.random.Generator, shape: tuple[int, int], density: float) -> np.ndarray:
    return (rng.uniform(size=shape) < density).astype(np.uint8)


def test_latent_matching_reductions() -> None:
    """Test sum and mean reduction, per sample and over a batch."""
    z_m = Tensor(np.zeros((2, 3, 4)))
    z_hat = Tensor(np.ones((2, 3, 4)))
    assert latent_matching_loss(z_m, z_hat).item() == 24.0
    assert latent_matching_loss(z_m, z_hat, "mean").item() == 1.0

    batch_hat = np.ones((2, 2, 3, 4))
    batch_hat[1] = 3.0
    loss = latent_matching_loss(Tensor(np.zeros((2, 2, 3, 4))), Tensor(batch_hat))
    assert loss.item() == pytest.approx((24.0 + 9.0 * 24.0) / 2)
    with pytest.raises(DimensionError):
        latent_matching_loss(z_m, Tensor(np.zeros((2, 3, 5))))
    with pytest.raises(ValueError, match="'max'"):
        latent_matching_loss(z_m, z_hat, "max")


def test_soft_dice_edge_cases() -> None:
    """Test the soft Dice loss on perfect, disjoint and empty predictions."""
    m = np.zeros((4, 4), dtype=np.uint8)
    m[:2] = 1
    assert soft_dice_loss(m, Tensor(m)).item() == pytest.approx(0.0, abs=1e-6)
    assert soft_dice_loss(m, Tensor(1 - m)).item() == pytest.approx(1.0 - DICE_EPS / (16 + DICE_EPS))
    empty = np.zeros((4, 4))
    assert soft_dice_loss(empty, Tensor(empty)).item() == pytest.approx(0.0, abs=1e-9)
    assert soft_dice_loss(m, Tensor(np.full((4, 4), 0.5))).item() == pytest.approx(1.0 - 8.0 / 16.0, abs=1e-6)


def test_soft_dice_batch_is_mean_of_samples() -> None:
    """Test the batched soft Dice loss."""
    rng = np.random.default_rng(0)
    m = _random_mask(rng, (3, 5, 5), 0.5)
    m_hat = rng.uniform(size=(3, 5, 5))
    single = [soft_dice_loss(m[i], Tensor(m_hat[i])).item() for i in range(3)]
    assert soft_dice_loss(m, Tensor(m_hat)).item() == pytest.approx(np.mean(single), rel=1e-5)


def test_soft_dice_validation() -> None:
    """Test the value and shape checks of the soft Dice loss."""
    with pytest.raises(ValidationError, match="ground-truth"):
        soft_dice_loss(np.full((2, 2), 0.5), Tensor(np.zeros((2, 2))))
    with pytest.raises(ValidationError, match=r"\[0, 1\]"):
        soft_dice_loss(np.ones((2, 2)), Tensor(np.full((2, 2), 1.5)))
    with pytest.raises(DimensionError):
        soft_dice_loss(np.ones((2, 2)), Tensor(np.ones((2, 3))))


def test_loss_config() -> None:
    """Test the loss configuration modes and their errors."""
    assert LossConfig.from_mode("lm") == LossConfig(use_lm=True, use_seg=False)
    assert LossConfig.from_mode(LossMode.seg).mode == LossMode.seg
    assert LossConfig().mode == LossMode.both
    assert LossConfig.from_dict(LossConfig.from_mode("seg", "mean").to_dict()) == LossConfig(False, True, "mean")
    with pytest.raises(ConfigurationError):
        LossConfig(use_lm=False, use_seg=False)
    with pytest.raises(ValueError, match="'none'"):
        LossConfig.from_mode("none")


def test_compound_loss_is_sum_of_components() -> None:
    """Test that the compound loss adds the enabled components without weights."""
    rng = np.random.default_rng(1)
    z_m = Tensor(rng.standard_normal((2, 3, 2, 2)))
    z_hat = Tensor(rng.standard_normal((2, 3, 2, 2)))
    m = _random_mask(rng, (2, 8, 8), 0.4)
    m_hat = Tensor(rng.uniform(size=(2, 8, 8)))
    lm = latent_matching_loss(z_m, z_hat).item()
    seg = soft_dice_loss(m, m_hat).item()

    assert compound_loss(LossConfig(), z_m, z_hat, m, m_hat).item() == pytest.approx(lm + seg, rel=1e-6)
    assert compound_loss(LossConfig.from_mode("lm"), z_m, z_hat).item() == pytest.approx(lm)
    assert compound_loss(LossConfig.from_mode("seg"), None, z_hat, m, m_hat).item() == pytest.approx(seg)
    components = loss_components(LossConfig(), z_m, z_hat, m, m_hat)
    assert set(components) == {"lm", "seg"}


def test_compound_loss_missing_inputs() -> None:
    """Test that an enabled component needs its inputs."""
    z = Tensor(np.zeros((1, 2, 2)))
    with pytest.raises(ConfigurationError, match="encoded ground-truth"):
        compound_loss(LossConfig(), None, z, np.zeros((8, 8)), Tensor(np.zeros((8, 8))))
    with pytest.raises(ConfigurationError, match="decoded gray-scale"):
        compound_loss(LossConfig(), z, z)


@given(seed=seeds)
def test_loss_gradients(seed: int) -> None:
    """Test the gradients of both loss components."""
    rng = np.random.default_rng(seed)
    m = _random_mask(rng, (2, 4, 4), 0.5)
    with T.precision("float64"):
        z_m = Tensor(rng.standard_normal((2, 3, 2, 2)))
        z_hat = Tensor(rng.standard_normal((2, 3, 2, 2)), requires_grad=True)
        m_hat = Tensor(rng.uniform(0.05, 0.95, (2, 4, 4)), requires_grad=True)
        for reduction in ("sum", "mean"):
            cfg = LossConfig(lm_reduction=reduction)
            report = T.grad_check(lambda cfg=cfg: compound_loss(cfg, z_m, z_hat, m, m_hat), [z_hat, m_hat])
            assert report.passed(1e-5), report


@given(seed=seeds, density=st.floats(0.05, 0.95))
def test_iou_follows_from_dice(seed: int, density: float) -> None:
    """Test IoU = DSC / (2 - DSC) on random mask pairs."""
    rng = np.random.default_rng(seed)
    for _ in range(10):
        a = _random_mask(rng, (12, 12), density)
        b = _random_mask(rng, (12, 12), density)
        dsc, iou = dsc_iou(a, b)
        assert iou == pytest.approx(dsc / (2.0 - dsc), abs=1e-12)
        assert 0.0 <= iou <= dsc <= 1.0


def test_dsc_iou_conventions() -> None:
    """Test identical, disjoint and empty masks."""
    a = np.zeros((4, 4), dtype=np.uint8)
    a[1:3, 1:3] = 1
    assert dsc_iou(a, a) == (1.0, 1.0)
    assert dsc_iou(a, 1 - a) == (0.0, 0.0)
    assert dsc_iou(np.zeros((4, 4)), np.zeros((4, 4))) == (1.0, 1.0)
    with pytest.raises(DimensionError):
        dsc_iou(a, np.zeros((4, 5)))


def test_boundary() -> None:
    """Test that only border-touching foreground pixels form the boundary."""
    mask = np.zeros((5, 5), dtype=np.uint8)
    mask[1:4, 1:4] = 1
    expected = mask.copy()
    expected[2, 2] = 0
    np.testing.assert_array_equal(boundary(mask), expected.astype(bool))
    np.testing.assert_array_equal(boundary(np.ones((2, 2))), np.ones((2, 2), dtype=bool))


def _hd95_brute_force(a: np.ndarray, b: np.ndarray) -> float:
    pa = np.argwhere(boundary(a))
    pb = np.argwhere(boundary(b))

    def directed(src: np.ndarray, dst: np.ndarray) -> float:
        nearest = sorted(min(math.dist(p, q) for q in dst) for p in src)
        return nearest[math.ceil(0.95 * len(nearest)) - 1]

    return max(directed(pa, pb), directed(pb, pa))


@given(seed=seeds)
def test_hd95_matches_brute_force(seed: int) -> None:
    """Test HD95 against an all-pairs computation."""
    rng = np.random.default_rng(seed)
    a = _random_mask(rng, (10, 9), 0.3)
    b = _random_mask(rng, (10, 9), 0.3)
    a[0, 0] = b[5, 5] = 1
    assert hd95(a, b) == pytest.approx(_hd95_brute_force(a, b), abs=1e-12)
    assert hd95(a, b) == hd95(b, a)
    assert hd95(a, a) == 0.0


def test_hd95_conventions() -> None:
    """Test empty masks and a known shift."""
    empty = np.zeros((6, 8), dtype=np.uint8)
    square = empty.copy()
    square[1:3, 1:3] = 1
    assert hd95(empty, empty) == 0.0
    assert hd95(square, empty) == pytest.approx(10.0)
    assert hd95(empty, square) == pytest.approx(10.0)
    shifted = np.roll(square, 3, axis=1)
    assert hd95(square, shifted) == pytest.approx(3.0)
    with pytest.raises(DimensionError):
        hd95(square, np.zeros((6, 7)))


def test_evaluate_masks() -> None:
    """Test the combined metric record."""
    a = np.zeros((8, 8), dtype=np.uint8)
    a[2:6, 2:6] = 1
    b = np.zeros_like(a)
    b[2:6, 2:4] = 1
    result = evaluate_masks(a, b)
    assert isinstance(result, MetricResult)
    assert result.dsc == pytest.approx(2 * 8 / 24)
    assert result.iou == pytest.approx(8 / 16)
    assert result.hd95 == pytest.approx(2.0)
    assert result.to_dict() == {"dsc": result.dsc, "iou": result.iou, "hd95": result.hd95}
