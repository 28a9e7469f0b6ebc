# SPDX-FileCopyrightText: 2024-2026 Nicolai Buchwitz <nb@tipi-net.de>
#
# SPDX-License-Identifier: LGPL-2.1-or-later

"""Tests for the pyramid encoder and channel projection."""

from pathlib import Path

import pytest
import torch
from torch import nn

from refcod.backbone import (
    PyramidProjection,
    ToyEncoder,
    build_encoder,
    count_parameters,
    extract_pyramid,
    project_channels,
    resize_to,
)
from refcod.errors import BadShapeError, ProviderUnavailableError


class TestExtractPyramid:
    """Test stride arithmetic of the encoder."""

    @pytest.mark.parametrize(
        ("size", "expected"), [(352, [44, 22, 11]), (64, [8, 4, 2]), (96, [12, 6, 3])]
    )
    def test_spatial_sizes(self, size: int, expected: list[int]) -> None:
        """Test stride-8/16/32 outputs."""
        encoder = ToyEncoder(width=4).eval()
        features = extract_pyramid(torch.rand(1, 3, size, size), encoder)
        assert [f.shape[-1] for f in features] == expected
        assert [f.shape[1] for f in features] == list(encoder.channels)

    def test_unbatched_input(self) -> None:
        """Test that a single 3 x H x W image gives unbatched maps."""
        features = extract_pyramid(torch.rand(3, 64, 64), ToyEncoder(width=4).eval())
        assert features[0].shape == (8, 8, 8)

    def test_bad_shape(self) -> None:
        """Test that 350x350 input raises BadShapeError."""
        with pytest.raises(BadShapeError):
            extract_pyramid(torch.rand(1, 3, 350, 350), ToyEncoder(width=4))

    def test_doubling_input_doubles_levels(self) -> None:
        """Test that doubling H and W doubles every level."""
        encoder = ToyEncoder(width=4).eval()
        small = extract_pyramid(torch.rand(1, 3, 64, 96), encoder)
        large = extract_pyramid(torch.rand(1, 3, 128, 192), encoder)
        for s, l in zip(small, large):
            assert l.shape[-2:] == (2 * s.shape[-2], 2 * s.shape[-1])

    def test_deterministic_in_eval_mode(self) -> None:
        """Test repeated extraction in eval mode."""
        encoder = ToyEncoder(width=4).eval()
        image = torch.rand(2, 3, 64, 64)
        for a, b in zip(extract_pyramid(image, encoder), extract_pyramid(image, encoder)):
            assert torch.equal(a, b)


class TestProjection:
    """Test the per-level 1x1 projections."""

    def test_channels(self) -> None:
        """Test that every level is mapped to c_d channels."""
        encoder = ToyEncoder(width=4).eval()
        projection = PyramidProjection(encoder.channels, 64)
        pyramid = project_channels(extract_pyramid(torch.rand(1, 3, 64, 64), encoder), projection)
        assert [tuple(f.shape[1:]) for f in pyramid] == [(64, 8, 8), (64, 4, 4), (64, 2, 2)]

    def test_identity_initialisation(self) -> None:
        """Test that identity-initialised 1x1 convolutions reproduce their input."""
        projection = PyramidProjection((8, 8, 8), 8)
        with torch.no_grad():
            for conv in projection.convs:
                conv.weight.copy_(torch.eye(8)[..., None, None])
                conv.bias.zero_()
        features = [torch.rand(1, 8, s, s) for s in (8, 4, 2)]
        for f, out in zip(features, projection(features)):
            torch.testing.assert_close(out, f)

    def test_parameter_count(self) -> None:
        """Test the count sum_j (c_in_j * c_d + c_d)."""
        channels, c_d = (32, 64, 128), 16
        expected = sum(c * c_d + c_d for c in channels)
        assert count_parameters(PyramidProjection(channels, c_d)) == expected

    def test_wrong_level_count(self) -> None:
        """Test that a two-level pyramid is rejected."""
        with pytest.raises(ValueError):
            PyramidProjection((8, 8, 8), 8)([torch.rand(1, 8, 4, 4)] * 2)


class TestHelpers:
    """Test module helpers."""

    def test_resize_noop(self) -> None:
        """Test that resize_to returns the same tensor when sizes match."""
        x = torch.rand(1, 2, 4, 4)
        assert resize_to(x, (4, 4)) is x

    def test_resize_upsamples(self) -> None:
        """Test bilinear upsampling of a constant map."""
        out = resize_to(torch.full((1, 1, 2, 2), 0.3), (8, 8))
        torch.testing.assert_close(out, torch.full((1, 1, 8, 8), 0.3))

    def test_count_parameters_skips_frozen(self) -> None:
        """Test that frozen parameters are excluded by default."""
        module = nn.Linear(4, 2)
        module.bias.requires_grad_(False)
        assert count_parameters(module) == 8
        assert count_parameters(module, trainable_only=False) == 10

    def test_build_encoder(self) -> None:
        """Test encoder selection."""
        assert isinstance(build_encoder("toy", width=4), ToyEncoder)
        with pytest.raises(ValueError):
            build_encoder("vgg")

    def test_resnet_without_weights(self, tmp_path: Path) -> None:
        """Test that missing ResNet weights raise ProviderUnavailableError."""
        with pytest.raises(ProviderUnavailableError):
            build_encoder("resnet50", str(tmp_path / "missing.pth"))
