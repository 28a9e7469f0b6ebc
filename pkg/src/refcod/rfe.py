# SPDX-FileCopyrightText: 2024-2026 Nicolai Buchwitz <nb@tipi-net.de>
#
# SPDX-License-Identifier: LGPL-2.1-or-later

"""Referring feature enrichment.

The fused feature and the squashed referring heatmap are resized to strides 8,
16 and 32 and merged by a conv block per scale. With the cross-scale path
enabled, the stride-8 result is also fed into the two coarser blocks. The three
scale features are upsampled to stride 8, concatenated and reduced back to
``c_d`` channels.
"""

import torch
from torch import nn

from .backbone import conv_bn_relu, resize_to


class ConvBlock(nn.Module):
    """Two 3x3 convolutions, each followed by batch norm and ReLU."""

    def __init__(self, c_in: int, c_out: int) -> None:
        super().__init__()
        self.body = nn.Sequential(conv_bn_relu(c_in, c_out), conv_bn_relu(c_out, c_out))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Apply both convolutions."""
        return self.body(x)


def enrich_at_scale(
    block: ConvBlock,
    fused: torch.Tensor,
    heatmap: torch.Tensor,
    size: tuple[int, int] | torch.Size,
    finer: torch.Tensor | None = None,
) -> torch.Tensor:
    """Enrich the fused feature at one scale.

    Parameters
    ----------
    block : ConvBlock
        The scale's conv block.
    fused : torch.Tensor
        ``B x c_d x h x w`` fused feature.
    heatmap : torch.Tensor
        ``B x 1 x h x w`` referring heatmap (unbounded; squashed by sigmoid here).
    size : tuple[int, int]
        Target spatial size of the scale.
    finer : torch.Tensor or None
        Finest scale feature, appended when the cross-scale path is active.

    Returns
    -------
    torch.Tensor
        ``B x c_d x size`` scale feature.
    """
    parts = [resize_to(fused, size), resize_to(torch.sigmoid(heatmap), size)]
    if finer is not None:
        parts.append(resize_to(finer, size))
    return block(torch.cat(parts, dim=1))


class RFE(nn.Module):
    """Mask-guided enrichment at three scales with an optional cross-scale path.

    Parameters
    ----------
    c_d : int
        Feature width.
    cross_scale_path : bool, default True
        Feed the stride-8 scale feature into the stride-16 and stride-32 blocks.
    """

    def __init__(self, c_d: int, cross_scale_path: bool = True) -> None:
        super().__init__()
        self.cross_scale_path = cross_scale_path
        coarse_in = 2 * c_d + 1 if cross_scale_path else c_d + 1
        self.blocks = nn.ModuleList(
            [ConvBlock(c_d + 1, c_d), ConvBlock(coarse_in, c_d), ConvBlock(coarse_in, c_d)]
        )
        self.reduce = nn.Sequential(
            nn.Conv2d(3 * c_d, c_d, kernel_size=1, bias=False), nn.BatchNorm2d(c_d), nn.ReLU()
        )

    def forward(
        self, fused: torch.Tensor, heatmap: torch.Tensor
    ) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """Return ``(enriched, [scale_2, scale_3, scale_4])``."""
        h, w = fused.shape[-2:]
        s2 = enrich_at_scale(self.blocks[0], fused, heatmap, (h, w))
        finer = s2 if self.cross_scale_path else None
        s3 = enrich_at_scale(self.blocks[1], fused, heatmap, (h // 2, w // 2), finer)
        s4 = enrich_at_scale(self.blocks[2], fused, heatmap, (h // 4, w // 4), finer)
        enriched = self.reduce(torch.cat([s2, resize_to(s3, (h, w)), resize_to(s4, (h, w))], 1))
        return enriched, [s2, s3, s4]


class ScalePredictionHeads(nn.Module):
    """Per-scale 1x1 convolution to one channel, upsampled to the input size, then sigmoid."""

    def __init__(self, c_d: int) -> None:
        super().__init__()
        self.heads = nn.ModuleList(nn.Conv2d(c_d, 1, kernel_size=1) for _ in range(3))

    def forward(
        self, scales: list[torch.Tensor], size: tuple[int, int] | torch.Size
    ) -> list[torch.Tensor]:
        """Return three ``B x 1 x H x W`` probability maps."""
        return [torch.sigmoid(resize_to(head(s), size)) for head, s in zip(self.heads, scales)]
