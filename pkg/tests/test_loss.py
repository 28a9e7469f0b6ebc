# SPDX-FileCopyrightText: 2024-2026 Nicolai Buchwitz <nb@tipi-net.de>
#
# SPDX-License-Identifier: LGPL-2.1-or-later

"""Tests for the structure loss."""

import math

import pytest
import torch

from refcod.errors import ShapeMismatchError
from refcod.loss import (
    BCE_EPS,
    bce_loss,
    edge_weights,
    iou_loss,
    structure_loss,
    weighted_bce_loss,
    weighted_iou_loss,
)
from refcod.model import PredictionSet


def _square_gt(size: int = 16) -> torch.Tensor:
    g = torch.zeros(1, 1, size, size, dtype=torch.float64)
    g[..., 4:12, 4:12] = 1.0
    return g


class TestBCE:
    """Test binary cross-entropy."""

    def test_half_probability(self) -> None:
        """Test that p = 0.5 costs ln 2 whatever the target."""
        p = torch.full((1, 1, 4, 4), 0.5, dtype=torch.float64)
        g = (torch.rand(1, 1, 4, 4) > 0.5).double()
        assert bce_loss(p, g).item() == pytest.approx(math.log(2))

    def test_clamped_confident_mistake(self) -> None:
        """Test that a zero prediction on foreground costs -ln(eps)."""
        p = torch.zeros(1, 1, 4, 4, dtype=torch.float64)
        g = torch.ones(1, 1, 4, 4, dtype=torch.float64)
        assert bce_loss(p, g).item() == pytest.approx(-math.log(BCE_EPS), rel=1e-6)
        assert bce_loss(p, g).item() == pytest.approx(16.118, abs=1e-3)

    def test_finite_at_extremes(self) -> None:
        """Test that exact 0 and 1 predictions give a finite loss and gradient."""
        p = torch.tensor([[[[0.0, 1.0], [1.0, 0.0]]]], requires_grad=True)
        g = torch.tensor([[[[1.0, 0.0], [1.0, 0.0]]]])
        loss = bce_loss(p, g)
        loss.backward()
        assert torch.isfinite(loss)
        assert torch.isfinite(p.grad).all()

    def test_tiling_invariance(self) -> None:
        """Test that tiling an instance 2x2 leaves the mean unchanged."""
        p = torch.rand(1, 1, 8, 8, dtype=torch.float64)
        g = (torch.rand(1, 1, 8, 8) > 0.5).double()
        tiled = bce_loss(p.repeat(1, 1, 2, 2), g.repeat(1, 1, 2, 2))
        torch.testing.assert_close(tiled, bce_loss(p, g))

    def test_batch_is_mean_of_samples(self) -> None:
        """Test that a batch loss averages per-sample losses."""
        p = torch.rand(3, 1, 8, 8, dtype=torch.float64)
        g = (torch.rand(3, 1, 8, 8) > 0.5).double()
        per_sample = [bce_loss(p[i], g[i]) for i in range(3)]
        torch.testing.assert_close(bce_loss(p, g), torch.stack(per_sample).mean())


class TestIoU:
    """Test the smoothed IoU loss."""

    def test_perfect(self) -> None:
        """Test that p = g gives zero."""
        g = _square_gt()
        assert iou_loss(g.clone(), g).item() == pytest.approx(0.0)

    def test_empty_prediction(self) -> None:
        """Test 1 - 1/(N+1) for an empty prediction on N foreground pixels."""
        g = _square_gt()
        n = int(g.sum())
        assert iou_loss(torch.zeros_like(g), g).item() == pytest.approx(1 - 1 / (n + 1))

    def test_both_empty(self) -> None:
        """Test that empty prediction and empty target give zero."""
        zeros = torch.zeros(1, 1, 8, 8)
        assert iou_loss(zeros, zeros).item() == 0.0

    def test_range(self) -> None:
        """Test that random inputs stay in [0, 1]."""
        gen = torch.Generator().manual_seed(0)
        for _ in range(20):
            p = torch.rand(2, 1, 8, 8, generator=gen)
            g = (torch.rand(2, 1, 8, 8, generator=gen) > 0.5).float()
            assert 0.0 <= iou_loss(p, g).item() <= 1.0


class TestWeighted:
    """Test the boundary-weighted variants."""

    def test_edge_weights_peak_at_boundary(self) -> None:
        """Test that boundary pixels weigh more than pixels far from the object."""
        g = torch.zeros(1, 1, 96, 96)
        g[..., 40:56, 40:56] = 1.0
        weights = edge_weights(g)
        assert weights.shape == g.shape
        assert weights.min() >= 1.0
        assert weights[0, 0, 40, 48] > weights[0, 0, 0, 0]

    def test_uniform_on_empty_target(self) -> None:
        """Test that an all-background target gives unit weights and the plain losses."""
        p = torch.rand(1, 1, 16, 16, dtype=torch.float64)
        g = torch.zeros(1, 1, 16, 16, dtype=torch.float64)
        assert torch.equal(edge_weights(g), torch.ones_like(g))
        torch.testing.assert_close(weighted_bce_loss(p, g), bce_loss(p, g))
        torch.testing.assert_close(weighted_iou_loss(p, g), iou_loss(p, g))

    def test_weighted_perfect(self) -> None:
        """Test that a perfect prediction scores zero weighted IoU."""
        g = _square_gt()
        assert weighted_iou_loss(g.clone(), g).item() == pytest.approx(0.0)


class TestStructureLoss:
    """Test the summed loss over four maps."""

    def test_perfect_predictions(self) -> None:
        """Test that four exact predictions give a total near zero."""
        g = _square_gt()
        report = structure_loss([g.clone() for _ in range(4)], g)
        assert report.total.item() == pytest.approx(0.0, abs=1e-5)

    def test_total_is_sum_of_terms(self) -> None:
        """Test that the total equals the sum of its eight terms."""
        gen = torch.Generator().manual_seed(0)
        g = _square_gt()
        maps = [torch.rand(1, 1, 16, 16, generator=gen, dtype=torch.float64) for _ in range(4)]
        report = structure_loss(PredictionSet(*maps), g)
        assert len(report.per_term) == 4
        expected = sum(bce_loss(p, g) + iou_loss(p, g) for p in maps)
        torch.testing.assert_close(report.total, expected)
        values = report.as_dict()
        assert values["total"] == pytest.approx(sum(v for k, v in values.items() if k != "total"))
        assert set(values) >= {"m_scale_2_bce", "m_seg_iou"}

    def test_weighted_flag(self) -> None:
        """Test that weighted=True switches to the weighted terms."""
        g = _square_gt()
        maps = [torch.full_like(g, 0.3) for _ in range(4)]
        report = structure_loss(maps, g, weighted=True)
        expected = 4 * (weighted_bce_loss(maps[0], g) + weighted_iou_loss(maps[0], g))
        torch.testing.assert_close(report.total, expected)

    def test_gradient(self) -> None:
        """Test gradients with respect to the maps against finite differences."""
        g = _square_gt(8)
        maps = [
            (0.1 + 0.8 * torch.rand(1, 1, 8, 8, dtype=torch.float64)).requires_grad_()
            for _ in range(4)
        ]
        assert torch.autograd.gradcheck(lambda *m: structure_loss(list(m), g).total, tuple(maps))

    def test_non_finite_detection(self) -> None:
        """Test that NaN predictions are reported as non-finite."""
        g = _square_gt()
        maps = [torch.full_like(g, float("nan")) for _ in range(4)]
        assert structure_loss(maps, g).is_finite() is False

    def test_shape_mismatch(self) -> None:
        """Test that mismatched shapes raise ShapeMismatchError."""
        with pytest.raises(ShapeMismatchError):
            structure_loss([torch.rand(1, 1, 8, 8)] * 4, torch.zeros(1, 1, 16, 16))

    def test_wrong_number_of_maps(self) -> None:
        """Test that three maps are rejected."""
        with pytest.raises(ValueError):
            structure_loss([torch.rand(1, 1, 8, 8)] * 3, torch.zeros(1, 1, 8, 8))
