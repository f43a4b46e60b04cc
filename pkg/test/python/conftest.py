"""Shared fixtures of the GMS test suite."""

from __future__ import annotations

from typing import TYPE_CHECKING

import pytest
from hypothesis import settings

from gms import tensor as T
from gms.data import DomainSpec, generate_synthetic
from gms.lmm import LmmConfig

if TYPE_CHECKING:
    from collections.abc import Iterator
    from pathlib import Path

settings.register_profile("gms", max_examples=100, deadline=None)
settings.load_profile("gms")

TINY_SIZE = 16


@pytest.fixture()
def float64() -> Iterator[None]:
    """Run the test in 64-bit precision."""
    with T.precision("float64"):
        yield


@pytest.fixture(scope="session")
def dataset_a(tmp_path_factory: pytest.TempPathFactory) -> Path:
    """Return a small domain-A dataset (10 samples of 16x16 pixels)."""
    root = tmp_path_factory.mktemp("data") / "A"
    generate_synthetic(DomainSpec.for_domain("A"), 10, TINY_SIZE, seed=3, root=root)
    return root


@pytest.fixture(scope="session")
def dataset_b(tmp_path_factory: pytest.TempPathFactory) -> Path:
    """Return a small domain-B dataset (10 samples of 16x16 pixels)."""
    root = tmp_path_factory.mktemp("data") / "B"
    generate_synthetic(DomainSpec.for_domain("B"), 10, TINY_SIZE, seed=4, root=root)
    return root


@pytest.fixture()
def tiny_patch_lmm() -> LmmConfig:
    """Return a small model configuration for the 192-channel patch latents."""
    return LmmConfig(in_channels=192, out_channels=192, width=8, stage_pattern=("conv", "attention"), num_groups=2)
