"""Test the latent mapping model."""

from __future__ import annotations

import numpy as np
import pytest

from gms import tensor as T
from gms.errors import ConfigurationError, DimensionError
from gms.layers import ConvBlock, SelfAttention2d, init_parameters
from gms.lmm import (
    DEFAULT_STAGE_PATTERN,
    LmmConfig,
    LmmModel,
    ResidualConvUnit,
    build_lmm,
    count_trainable_params,
    lmm_forward,
)
from gms.losses import LossConfig, compound_loss
from gms.rng import Rng
from gms.tensor import Tensor
from gms.tokenizer import PatchTokenizer, decode_to_mask, encode_masks


def test_default_parameter_count() -> None:
    """Test the size of the default model on 4-channel latents."""
    model = LmmModel(LmmConfig())
    count = count_trainable_params(model)
    assert count == 996_228
    assert 800_000 <= count <= 2_000_000


def test_default_stage_layout() -> None:
    """Test that the default pattern yields conv, attention, conv, attention, conv stages."""
    model = LmmModel(LmmConfig())
    kinds = [type(stage) for stage in model.stages]
    assert kinds == [ResidualConvUnit, SelfAttention2d, ResidualConvUnit, SelfAttention2d, ResidualConvUnit]
    assert all(len(stage.blocks) == 2 for stage in model.stages if isinstance(stage, ResidualConvUnit))
    assert len(DEFAULT_STAGE_PATTERN) == 8


def test_unpaired_conv_forms_its_own_unit() -> None:
    """Test a pattern with a conv stage that has no partner."""
    model = LmmModel(LmmConfig(width=8, stage_pattern=("conv", "attention", "conv", "conv", "conv")))
    depths = [len(stage.blocks) for stage in model.stages if isinstance(stage, ResidualConvUnit)]
    assert depths == [1, 2, 1]


@pytest.mark.parametrize("shape", [(2, 4, 3, 5), (1, 4, 7, 7)])
def test_forward_preserves_shape(shape: tuple[int, ...]) -> None:
    """Test that the model keeps channels and spatial size."""
    model = build_lmm(LmmConfig(width=8), Rng(0))
    out = lmm_forward(model, Tensor(np.random.default_rng(0).standard_normal(shape)))
    assert out.shape == shape
    assert np.isfinite(out.data).all()


def test_forward_single_latent_matches_batch() -> None:
    """Test that a 3-D latent is handled as a batch of one."""
    model = build_lmm(LmmConfig(width=8), Rng(1))
    z = np.random.default_rng(1).standard_normal((4, 3, 3))
    single = lmm_forward(model, Tensor(z))
    batch = lmm_forward(model, Tensor(z[None]))
    assert single.shape == (4, 3, 3)
    np.testing.assert_allclose(single.data, batch.data[0])


@pytest.mark.parametrize("shape", [(3, 3, 3), (1, 5, 3, 3), (4, 3)])
def test_forward_rejects_wrong_input(shape: tuple[int, ...]) -> None:
    """Test the channel and rank checks."""
    model = build_lmm(LmmConfig(width=8), Rng(0))
    with pytest.raises(DimensionError, match="4 latent channels"):
        lmm_forward(model, Tensor(np.zeros(shape)))


def test_config_errors() -> None:
    """Test invalid configurations."""
    with pytest.raises(ConfigurationError, match="must equal"):
        LmmConfig(in_channels=4, out_channels=3)
    with pytest.raises(ConfigurationError):
        LmmConfig(width=0)
    with pytest.raises(ValueError, match="pooling"):
        LmmConfig(stage_pattern=("conv", "pooling"))
    with pytest.raises(ConfigurationError):
        LmmModel(LmmConfig(width=12, num_groups=8))


def test_config_round_trip() -> None:
    """Test the dictionary representation of a configuration."""
    config = LmmConfig(in_channels=192, out_channels=192, width=16, stage_pattern=["attention", "conv"], key_channels=4)
    assert config.stage_pattern == ("attention", "conv")
    data = config.to_dict()
    assert data["stage_pattern"] == ["attention", "conv"]
    assert LmmConfig.from_dict(data) == config
    assert config.latent_channels == 192


def test_build_is_deterministic() -> None:
    """Test that the same seed gives the same weights and a different seed does not."""
    a = build_lmm(LmmConfig(width=8), Rng(5)).state_dict()
    b = build_lmm(LmmConfig(width=8), Rng(5)).state_dict()
    c = build_lmm(LmmConfig(width=8), Rng(6)).state_dict()
    assert list(a) == list(b)
    assert all(np.array_equal(a[name], b[name]) for name in a)
    assert not np.array_equal(a["input_proj.weight"], c["input_proj.weight"])


def test_skip_connections_can_be_disabled() -> None:
    """Test that a unit without skip connection returns the bare block output."""
    unit = ResidualConvUnit(4, 1, num_groups=2, skip=False)
    init_parameters(unit, Rng(0))
    x = Tensor(np.random.default_rng(0).standard_normal((1, 4, 3, 3)))
    block: ConvBlock = unit.blocks[0]
    np.testing.assert_array_equal(unit(x).data, block(x).data)
    unit.skip = True
    np.testing.assert_allclose(unit(x).data, block(x).data + x.data)


def test_frozen_model_has_no_trainable_parameters() -> None:
    """Test that the counter only includes trainable tensors."""
    model = LmmModel(LmmConfig(width=8))
    model.stages[0].freeze()
    frozen = sum(p.size for p in model.stages[0].parameters())
    assert count_trainable_params(model) == sum(p.size for p in model.parameters()) - frozen


@pytest.mark.usefixtures("float64")
def test_full_path_gradients(tiny_patch_lmm: LmmConfig) -> None:
    """Test gradients through model, frozen patch decoder and both loss components."""
    tok = PatchTokenizer()
    model = build_lmm(tiny_patch_lmm, Rng(11))
    rng = np.random.default_rng(11)
    for param in model.parameters():
        param.data[...] += rng.normal(0.0, 0.05, param.shape)
    model.output_proj.weight.data *= 0.05
    model.output_proj.bias.data[...] = 0.5  # decoded values stay inside the clamp range
    images = Tensor(rng.uniform(0.2, 0.8, (2, 3, 16, 16)))
    masks = (rng.uniform(size=(2, 16, 16)) > 0.5).astype(np.float64)
    z_i = tok.encode(images)
    z_m = encode_masks(tok, masks)

    def loss() -> Tensor:
        z_hat = lmm_forward(model, z_i)
        gray = decode_to_mask(tok, z_hat).gray
        return compound_loss(LossConfig(), z_m, z_hat, masks, gray)

    report = T.grad_check(loss, model.parameters(), max_elements=6, seed=2)
    assert report.checked_elements > 0
    assert report.passed(1e-5), report
    grads = T.backward(loss())
    assert set(grads) == {p.uid for p in model.parameters()}
    assert not any(p.requires_grad for p in tok.parameters())


@pytest.mark.usefixtures("float64")
@pytest.mark.parametrize("seed", range(5))
def test_every_parameter_receives_a_gradient(seed: int) -> None:
    """Test that no parameter of the default stage layout sits on a dead branch."""
    model = build_lmm(LmmConfig(width=8, num_groups=2), Rng(seed))
    rng = np.random.default_rng(seed)
    for param in model.parameters():
        param.data[...] += rng.normal(0.0, 0.1, param.shape)
    z_i = Tensor(rng.standard_normal((2, 4, 4, 4)))
    weights = Tensor(rng.standard_normal((2, 4, 4, 4)))
    grads = T.backward(T.reduce(T.multiply(lmm_forward(model, z_i), weights), "sum"))

    for name, param in model.named_parameters():
        grad = grads[param.uid].data if param.uid in grads else np.zeros(param.shape)
        if name.endswith("key.bias"):
            # the key bias shifts every logit of a query row equally, which the row-wise softmax cancels
            assert np.abs(grad).max() < 1e-10, name
        else:
            assert np.abs(grad).max() > 1e-8, name
