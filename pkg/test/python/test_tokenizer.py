"""Test the frozen tokenizers, the mask adapter and tokenizer persistence."""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import pytest

from gms import tensor as T
from gms.data import DomainSpec, Sample, generate_synthetic, load_dataset
from gms.errors import ConfigurationError, DimensionError, UsageError, ValidationError
from gms.tensor import Tensor
from gms.tokenizer import (
    ConvVaeTokenizer,
    MaskCodec,
    PatchTokenizer,
    TokenizerKind,
    VaeTrainConfig,
    decode_latent,
    decode_to_mask,
    encode_image,
    encode_mask,
    load_tokenizer,
    make_tokenizer,
    save_tokenizer,
    train_conv_vae,
    vae_loss,
)

if TYPE_CHECKING:
    from pathlib import Path


@pytest.fixture()
def tiny_samples() -> list[Sample]:
    """Return four 16x16 samples with square masks."""
    rng = np.random.default_rng(0)
    samples = []
    for index in range(4):
        mask = np.zeros((16, 16), dtype=np.uint8)
        mask[4 : 8 + index, 3:11] = 1
        image = rng.uniform(0.0, 0.3, (3, 16, 16)).astype(np.float32)
        image[:, mask == 1] += 0.6
        samples.append(Sample(image, mask, f"s{index}"))
    return samples


def test_patch_shapes() -> None:
    """Test the patch tokenizer's latent shape on a 224x224 image."""
    tok = PatchTokenizer()
    image = Tensor(np.random.default_rng(0).uniform(size=(3, 224, 224)))
    z = encode_image(tok, image)
    assert z.shape == (192, 28, 28)
    assert tok.latent_shape(224, 224) == (192, 28, 28)
    assert decode_latent(tok, z).shape == (3, 224, 224)


def test_patch_round_trip_is_exact() -> None:
    """Test that decoding a patch latent restores the image bit for bit."""
    tok = PatchTokenizer()
    images = Tensor(np.random.default_rng(1).uniform(size=(2, 3, 32, 24)))
    np.testing.assert_array_equal(tok.decode(tok.encode(images)).data, images.data)


def test_patch_channel_layout() -> None:
    """Test that channel c*64 + dy*8 + dx holds pixel (8i + dy, 8j + dx) of image channel c."""
    tok = PatchTokenizer()
    image = np.random.default_rng(2).uniform(size=(3, 16, 16))
    z = encode_image(tok, Tensor(image)).data
    for c, dy, dx, i, j in [(0, 0, 0, 0, 0), (1, 3, 5, 1, 0), (2, 7, 7, 1, 1), (0, 2, 6, 0, 1)]:
        assert z[c * 64 + dy * 8 + dx, i, j] == np.float32(image[c, 8 * i + dy, 8 * j + dx])


def test_patch_decode_clamps() -> None:
    """Test that decoded values outside [0, 1] are clamped."""
    tok = PatchTokenizer()
    out = tok.decode(Tensor(np.full((1, 192, 1, 1), 1.5)))
    np.testing.assert_array_equal(out.data, 1.0)


@pytest.mark.parametrize("size", [(12, 16), (16, 20), (7, 8)])
def test_size_must_be_divisible_by_eight(size: tuple[int, int]) -> None:
    """Test that encoding rejects sizes that are not multiples of the downsampling factor."""
    for tok in (PatchTokenizer(), ConvVaeTokenizer()):
        with pytest.raises(ConfigurationError, match="divisible by 8"):
            tok.encode(Tensor(np.zeros((1, 3, *size))))


def test_encode_and_decode_check_shapes() -> None:
    """Test the rank and channel checks of the tokenizer interface."""
    tok = PatchTokenizer()
    with pytest.raises(DimensionError):
        tok.encode(Tensor(np.zeros((1, 1, 8, 8))))
    with pytest.raises(DimensionError):
        tok.decode(Tensor(np.zeros((1, 4, 1, 1))))
    with pytest.raises(DimensionError):
        encode_image(tok, Tensor(np.zeros((1, 3, 8, 8))))
    with pytest.raises(DimensionError):
        decode_latent(tok, Tensor(np.zeros((1, 192, 1, 1))))


def test_vae_shapes() -> None:
    """Test the conv-VAE latent and reconstruction shapes."""
    tok = ConvVaeTokenizer()
    assert tok.latent_shape(224, 224) == (4, 28, 28)
    z = tok.encode(Tensor(np.random.default_rng(3).uniform(size=(2, 3, 32, 32))))
    assert z.shape == (2, 4, 4, 4)
    decoded = tok.decode(z)
    assert decoded.shape == (2, 3, 32, 32)
    assert decoded.data.min() >= 0.0
    assert decoded.data.max() <= 1.0


def test_freeze_and_digest() -> None:
    """Test that freezing disables gradients and that the digest tracks the weights."""
    tok = ConvVaeTokenizer()
    assert not tok.frozen
    assert tok.trainable_parameters()
    before = tok.digest()
    tok.freeze()
    assert tok.frozen
    assert tok.trainable_parameters() == []
    assert tok.digest() == before
    names = {f"encoder.{n}" for n in tok.encoder_params} | {f"decoder.{n}" for n in tok.decoder_params}
    assert names == set(dict(tok.named_parameters()))
    assert "head.weight" in tok.encoder_params
    tok.decoder_params["out.bias"].data[0] = 0.5
    assert tok.digest() != before
    changed = tok.digest()
    tok.encoder_params["head.bias"].data[0] = 0.5
    assert tok.digest() != changed
    assert PatchTokenizer().digest() == PatchTokenizer().digest()
    assert PatchTokenizer().frozen


def test_mask_codec() -> None:
    """Test replication, channel mean and thresholding."""
    codec = MaskCodec()
    mask = np.array([[0, 1], [1, 0]], dtype=np.uint8)
    replicated = codec.replicate(mask)
    assert replicated.shape == (3, 2, 2)
    np.testing.assert_array_equal(replicated.data[2], mask)
    decoded = Tensor(np.stack([np.full((2, 2), v) for v in (0.2, 0.5, 0.8)]))
    np.testing.assert_allclose(codec.to_gray(decoded).data, 0.5)
    np.testing.assert_array_equal(codec.binarize(np.array([0.49, 0.5, 0.51])), [0, 1, 1])


def test_mask_round_trip_through_patch_tokenizer() -> None:
    """Test that a binary mask survives encoding and decoding."""
    tok = PatchTokenizer()
    mask = (np.random.default_rng(4).uniform(size=(16, 16)) > 0.5).astype(np.uint8)
    prediction = decode_to_mask(tok, encode_mask(tok, mask))
    np.testing.assert_array_equal(prediction.binary, mask)
    np.testing.assert_allclose(prediction.gray.data, mask)


def test_encode_mask_validates_values() -> None:
    """Test that non-binary masks are rejected."""
    tok = PatchTokenizer()
    with pytest.raises(ValidationError):
        encode_mask(tok, np.full((8, 8), 0.5))
    with pytest.raises(DimensionError):
        encode_mask(tok, np.zeros((1, 8, 8)))


def test_save_and_load(tmp_path: Path) -> None:
    """Test that a stored tokenizer loads frozen and with the same digest."""
    tok = ConvVaeTokenizer(latent_channels=2)
    rng = np.random.default_rng(5)
    for param in tok.parameters():
        param.data[...] = rng.uniform(-0.1, 0.1, param.shape)
    tok.freeze()
    path = tmp_path / "tok.gmsa"
    save_tokenizer(tok, path)
    loaded = load_tokenizer(path)
    assert isinstance(loaded, ConvVaeTokenizer)
    assert loaded.frozen
    assert loaded.latent_channels == 2
    assert loaded.digest() == tok.digest()
    images = Tensor(rng.uniform(size=(1, 3, 16, 16)))
    np.testing.assert_array_equal(loaded.encode(images).data, tok.encode(images).data)


def test_make_tokenizer(tmp_path: Path) -> None:
    """Test the tokenizer factory and its errors."""
    assert isinstance(make_tokenizer("patch"), PatchTokenizer)
    assert make_tokenizer(TokenizerKind.patch).frozen
    with pytest.raises(UsageError, match="trained weights"):
        make_tokenizer("conv_vae")
    with pytest.raises(ValueError, match="'jpeg'"):
        make_tokenizer("jpeg")

    path = tmp_path / "patch.gmsa"
    save_tokenizer(PatchTokenizer(), path)
    with pytest.raises(ConfigurationError, match="holds a patch tokenizer"):
        make_tokenizer("conv_vae", path)


@pytest.mark.usefixtures("float64")
def test_vae_loss_without_kl_is_reconstruction_error() -> None:
    """Test that a zero KL weight gives the plain reconstruction MSE."""
    tok = ConvVaeTokenizer()
    rng = np.random.default_rng(6)
    for param in tok.parameters():
        param.data[...] = rng.uniform(-0.2, 0.2, param.shape)
    images = Tensor(rng.uniform(size=(2, 3, 8, 8)))
    loss = vae_loss(tok, images, kl_weight=0.0, noise=np.random.default_rng(0))
    expected = np.mean((tok.decode(tok.encode(images)).data - images.data) ** 2)
    assert loss.kl == 0.0
    assert loss.total.item() == pytest.approx(expected, rel=1e-12)

    weighted = vae_loss(tok, images, kl_weight=0.5)
    assert weighted.kl > 0
    assert weighted.total.item() == pytest.approx(weighted.reconstruction + 0.5 * weighted.kl, rel=1e-9)


def test_train_conv_vae_is_deterministic(tiny_samples: list[Sample]) -> None:
    """Test that training twice with the same seed gives identical weights."""
    config = VaeTrainConfig(epochs=1, batch_size=4, seed=3)
    a = train_conv_vae(tiny_samples, config)
    b = train_conv_vae(tiny_samples, config)
    assert a.frozen
    assert a.digest() == b.digest()
    c = train_conv_vae(tiny_samples, VaeTrainConfig(epochs=1, batch_size=4, seed=4))
    assert c.digest() != a.digest()


def test_train_conv_vae_needs_samples() -> None:
    """Test that training on nothing is a usage error."""
    with pytest.raises(UsageError):
        train_conv_vae([])


def test_frozen_tokenizer_passes_gradients_to_latents() -> None:
    """Test that a frozen decoder still propagates gradients to its input."""
    tok = PatchTokenizer()
    z = Tensor(np.full((1, 192, 1, 1), 0.5), requires_grad=True)
    grads = T.backward(T.reduce(tok.decode(z), "sum"))
    assert set(grads) == {z.uid}
    np.testing.assert_array_equal(grads[z.uid].data, 1.0)


@pytest.mark.slow()
def test_trained_conv_vae_reconstructs_held_out_images(tmp_path: Path) -> None:
    """Test that a conv VAE trained on 200 synthetic 64x64 images reconstructs unseen ones with MSE below 0.01."""
    spec = DomainSpec.for_domain("A")
    generate_synthetic(spec, 200, 64, seed=11, root=tmp_path / "train")
    generate_synthetic(spec, 50, 64, seed=12, root=tmp_path / "held_out")
    tok = train_conv_vae(load_dataset(tmp_path / "train"), VaeTrainConfig(epochs=200))
    assert tok.frozen

    images = np.stack([s.image for s in load_dataset(tmp_path / "held_out")])
    with T.no_grad():
        reconstruction = tok.decode(tok.encode(Tensor(images))).data
    assert float(np.mean((reconstruction - images) ** 2)) < 0.01
