# SPDX-FileCopyrightText: 2024-2026 Nicolai Buchwitz <nb@tipi-net.de>
#
# SPDX-License-Identifier: LGPL-2.1-or-later

"""Shared test fixtures for refcod tests."""

from pathlib import Path

import pytest
import torch

from refcod import RunConfig, generate_toy_dataset
from refcod.backbone import ToyEncoder
from refcod.model import R2CNet
from refcod.reference import ConstantProvider, GTProvider

TOY_SIZE = 64


@pytest.fixture(scope="session")
def toy_root(tmp_path_factory: pytest.TempPathFactory) -> Path:
    """Generate the small toy dataset once: 2 categories, 4 camo + 25 ref each, 64px."""
    root = tmp_path_factory.mktemp("toy")
    generate_toy_dataset(root, 2, 4, 25, TOY_SIZE, 7)
    return root


@pytest.fixture
def toy_config(toy_root: Path, tmp_path: Path) -> RunConfig:
    """Desk-scale configuration pointing at the toy dataset."""
    return RunConfig.load(
        overrides=[
            f"data.root={toy_root}",
            f"data.image_size={TOY_SIZE}",
            "data.k=3",
            "model.c_d=16",
            "model.encoder_width=8",
            "train.steps=4",
            "train.batch_size=4",
            "train.log_every=2",
            "eval.batch_size=4",
            "eval.repeats=2",
            f"output.dir={tmp_path / 'run'}",
        ]
    )


@pytest.fixture
def small_model() -> R2CNet:
    """Untrained c_d=16 model with the gt provider."""
    torch.manual_seed(0)
    return R2CNet(ToyEncoder(width=8), GTProvider(), c_d=16)


@pytest.fixture
def constant_model() -> R2CNet:
    """Untrained c_d=16 model with the constant provider."""
    torch.manual_seed(0)
    return R2CNet(ToyEncoder(width=8), ConstantProvider(), c_d=16)


@pytest.fixture
def rng() -> torch.Generator:
    """Seeded torch generator."""
    generator = torch.Generator()
    generator.manual_seed(1234)
    return generator
