# SPDX-FileCopyrightText: 2024-2026 Nicolai Buchwitz <nb@tipi-net.de>
#
# SPDX-License-Identifier: LGPL-2.1-or-later

"""The complete referring camouflaged object detector."""

import logging
from dataclasses import dataclass

import torch
from torch import nn

from .backbone import (
    Encoder,
    PyramidProjection,
    build_encoder,
    check_input_size,
    conv_bn_relu,
    resize_to,
)
from .config import RunConfig
from .reference import ForegroundProvider, ReferenceEncoder, build_provider
from .rfe import RFE, ScalePredictionHeads
from .rmg import RMG

logger = logging.getLogger(__name__)


class Decoder(nn.Module):
    """Segmentation head: 3x3 conv-BN-ReLU, 1x1 conv to one channel, upsample, sigmoid."""

    def __init__(self, c_d: int) -> None:
        super().__init__()
        self.conv = conv_bn_relu(c_d, c_d)
        self.out = nn.Conv2d(c_d, 1, kernel_size=1)

    def forward(self, enriched: torch.Tensor, size: tuple[int, int] | torch.Size) -> torch.Tensor:
        """Return the ``B x 1 x H x W`` segmentation probability map."""
        return torch.sigmoid(resize_to(self.out(self.conv(enriched)), size))


@dataclass
class PredictionSet:
    """The four supervised probability maps, each ``B x 1 x H x W``."""

    m_scale_2: torch.Tensor
    m_scale_3: torch.Tensor
    m_scale_4: torch.Tensor
    m_seg: torch.Tensor

    def as_list(self) -> list[torch.Tensor]:
        """Return the maps in supervision order."""
        return [self.m_scale_2, self.m_scale_3, self.m_scale_4, self.m_seg]


@dataclass
class ForwardResult:
    """Predictions plus the intermediate tensors of one forward pass.

    Attributes
    ----------
    predictions : PredictionSet
        Supervised maps.
    pyramid : list[torch.Tensor]
        Projected features at strides 8, 16 and 32.
    common : torch.Tensor
        ``B x c_d`` common representation (the learned constant in baseline mode).
    fused : torch.Tensor
        Fused feature at stride 8.
    heatmap : torch.Tensor
        Referring heatmap at stride 8.
    enriched : torch.Tensor
        Enriched feature at stride 8.
    scales : list[torch.Tensor]
        Scale features at strides 8, 16 and 32.
    """

    predictions: PredictionSet
    pyramid: list[torch.Tensor]
    common: torch.Tensor
    fused: torch.Tensor
    heatmap: torch.Tensor
    enriched: torch.Tensor
    scales: list[torch.Tensor]


class R2CNet(nn.Module):
    """Reference-guided camouflaged object detector.

    Parameters
    ----------
    encoder : Encoder
        Pyramid encoder shared by the camouflaged and the referring images.
    provider : ForegroundProvider
        Frozen foreground-map provider of the reference branch.
    c_d : int, default 64
        Common channel width.
    lstm_kernel : int, default 3
        ConvLSTM gate size.
    kernel_from_e : str, default "linear"
        Dynamic kernel formation (``linear`` or ``identity``).
    msf : str, default "clstm"
        Multi-scale fusion (``clstm`` or ``concat``).
    cross_scale_path : bool, default True
        Enable the finer-to-coarser path of the enrichment module.
    """

    def __init__(
        self,
        encoder: Encoder,
        provider: ForegroundProvider,
        c_d: int = 64,
        lstm_kernel: int = 3,
        kernel_from_e: str = "linear",
        msf: str = "clstm",
        cross_scale_path: bool = True,
    ) -> None:
        super().__init__()
        self.c_d = c_d
        self.encoder = encoder
        self.projection = PyramidProjection(encoder.channels, c_d)
        self.provider = provider
        self.provider.requires_grad_(False)
        self.reference = ReferenceEncoder(encoder.channels[-1], c_d)
        self.rmg = RMG(c_d, lstm_kernel, kernel_from_e, msf)
        self.rfe = RFE(c_d, cross_scale_path)
        self.heads = ScalePredictionHeads(c_d)
        self.decoder = Decoder(c_d)

    def encode_references(
        self,
        refs: torch.Tensor,
        ref_masks: torch.Tensor | None = None,
        deepest: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Return the ``B x c_d`` common representation of ``B x K x 3 x H x W`` references.

        With ``K == 0`` the learned baseline constant is returned. ``deepest``
        holds the encoder's last stage of the ``B*K`` flattened references when
        it was already computed.
        """
        b, k = refs.shape[:2]
        if k == 0:
            return self.reference.baseline_representation(b)
        flat = refs.flatten(0, 1)
        masks = ref_masks.flatten(0, 1) if ref_masks is not None else None
        check_input_size(flat)
        with torch.no_grad():
            maps = self.provider(flat, masks)
        if deepest is None:
            deepest = self.encoder(flat)[-1]
        return self.reference(deepest, maps, k)

    def encode(
        self, camo: torch.Tensor, refs: torch.Tensor, ref_masks: torch.Tensor | None = None
    ) -> tuple[list[torch.Tensor], torch.Tensor]:
        """Return the projected camouflaged pyramid and the common representation.

        References of the camouflaged image's size share one encoder pass with
        it, so training batch statistics mix both image kinds like the running
        statistics do.
        """
        check_input_size(camo)
        b, k = refs.shape[:2]
        if k == 0 or refs.shape[-2:] != camo.shape[-2:]:
            pyramid = self.projection(self.encoder(camo))
            return pyramid, self.encode_references(refs, ref_masks)
        check_input_size(refs.flatten(0, 1))
        features = self.encoder(torch.cat([camo, refs.flatten(0, 1)]))
        pyramid = self.projection([f[:b] for f in features])
        return pyramid, self.encode_references(refs, ref_masks, features[-1][b:])

    def forward(
        self, camo: torch.Tensor, refs: torch.Tensor, ref_masks: torch.Tensor | None = None
    ) -> ForwardResult:
        """Run the detector.

        Parameters
        ----------
        camo : torch.Tensor
            ``B x 3 x H x W`` camouflaged images, H and W divisible by 32.
        refs : torch.Tensor
            ``B x K x 3 x H x W`` referring images (``K == 0`` for baseline mode).
        ref_masks : torch.Tensor or None
            ``B x K x 1 x H x W`` referring masks, needed by the ``gt`` provider.

        Returns
        -------
        ForwardResult
            Predictions and intermediates.
        """
        size = camo.shape[-2:]
        pyramid, common = self.encode(camo, refs, ref_masks)
        fused, heatmap = self.rmg(pyramid, common)
        enriched, scales = self.rfe(fused, heatmap)
        m2, m3, m4 = self.heads(scales, size)
        predictions = PredictionSet(m2, m3, m4, self.decoder(enriched, size))
        return ForwardResult(predictions, pyramid, common, fused, heatmap, enriched, scales)

    def predict(
        self, camo: torch.Tensor, refs: torch.Tensor, ref_masks: torch.Tensor | None = None
    ) -> torch.Tensor:
        """Return only the ``B x 1 x H x W`` segmentation map."""
        return self(camo, refs, ref_masks).predictions.m_seg


def build_model(config: RunConfig) -> R2CNet:
    """Build an :class:`R2CNet` from a validated configuration."""
    encoder_kind, encoder_path = config.encoder_spec
    provider_kind, provider_path = config.provider_spec
    model = R2CNet(
        encoder=build_encoder(encoder_kind, encoder_path, config.model.encoder_width),
        provider=build_provider(provider_kind, provider_path),
        c_d=config.model.c_d,
        lstm_kernel=config.rmg.lstm_kernel,
        kernel_from_e=config.rmg.kernel_from_e,
        msf=config.rmg.msf,
        cross_scale_path=config.rfe.cross_scale_path,
    )
    logger.debug(
        f"Built model: encoder={encoder_kind}, provider={provider_kind}, c_d={config.model.c_d}"
    )
    return model
