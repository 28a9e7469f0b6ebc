# SPDX-FileCopyrightText: 2024-2026 Nicolai Buchwitz <nb@tipi-net.de>
#
# SPDX-License-Identifier: LGPL-2.1-or-later

"""Reference branch: foreground maps, masked average pooling and the common representation.

Each referring image is encoded by the shared pyramid encoder; its deepest stage
is pooled under the image's foreground map, projected to ``c_d`` by a 1x1
convolution shared across references, and the K object representations are
averaged into the common representation ``E``.
"""

import logging
from abc import ABC, abstractmethod
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from .errors import DataError, EmptyListError, EmptyMaskError, ProviderUnavailableError

logger = logging.getLogger(__name__)

MAP_EPS = 1e-6


class ForegroundProvider(nn.Module, ABC):
    """Abstract base class for foreground-map providers.

    Providers are frozen: they hold no trainable parameters and stay in eval
    mode even when the surrounding model is put in training mode.
    """

    name: str

    @abstractmethod
    def forward(self, images: torch.Tensor, masks: torch.Tensor | None = None) -> torch.Tensor:
        """Return ``B x 1 x H x W`` maps in [0, 1] for ``B x 3 x H x W`` images."""

    def train(self, mode: bool = True) -> "ForegroundProvider":
        """Ignore ``mode``; providers always run in eval mode."""
        return super().train(False)


class GTProvider(ForegroundProvider):
    """Pass the dataset's referring masks through unchanged."""

    name = "gt"

    def forward(self, images: torch.Tensor, masks: torch.Tensor | None = None) -> torch.Tensor:
        """Return ``masks``."""
        if masks is None:
            raise DataError("The gt foreground provider needs referring masks")
        return masks


class ConstantProvider(ForegroundProvider):
    """Treat every pixel as foreground."""

    name = "constant"

    def forward(self, images: torch.Tensor, masks: torch.Tensor | None = None) -> torch.Tensor:
        """Return an all-ones map."""
        return torch.ones_like(images[:, :1])


class ModelProvider(ForegroundProvider):
    """Frozen TorchScript saliency network.

    The scripted module maps ``B x 3 x H x W`` images to ``B x 1 x h x w``
    probabilities; the output is resized to the input size and clamped to [0, 1].

    Parameters
    ----------
    path : str or Path
        TorchScript file.

    Raises
    ------
    ProviderUnavailableError
        If the file is missing or cannot be loaded.
    """

    name = "model"

    def __init__(self, path: str | Path) -> None:
        super().__init__()
        if not Path(path).is_file():
            raise ProviderUnavailableError(f"Foreground model weights '{path}' not found")
        try:
            self.net = torch.jit.load(str(path), map_location="cpu")
        except (RuntimeError, ValueError) as e:
            raise ProviderUnavailableError(
                f"Cannot load foreground model '{path}': {e}", original_error=e
            ) from e
        for p in self.net.parameters():
            p.requires_grad_(False)
        self.train(False)
        logger.info(f"Loaded foreground model from {path}")

    def forward(self, images: torch.Tensor, masks: torch.Tensor | None = None) -> torch.Tensor:
        """Predict saliency maps."""
        with torch.no_grad():
            out = self.net(images)
        if out.shape[-2:] != images.shape[-2:]:
            out = F.interpolate(out, size=images.shape[-2:], mode="bilinear", align_corners=False)
        return out.clamp(0.0, 1.0)


def build_provider(kind: str, path: str | None = None) -> ForegroundProvider:
    """Instantiate a provider from its configured kind."""
    if kind == "gt":
        return GTProvider()
    if kind == "constant":
        return ConstantProvider()
    if kind == "model":
        if not path:
            raise ProviderUnavailableError("The model provider needs a weights path")
        return ModelProvider(path)
    raise ValueError(f"Unknown foreground provider '{kind}'")


def foreground_maps(
    provider: ForegroundProvider,
    ref_images: list[torch.Tensor],
    ref_masks: list[torch.Tensor] | None = None,
) -> list[torch.Tensor]:
    """Return one ``1 x H x W`` map per ``3 x H x W`` referring image."""
    if not ref_images:
        return []
    images = torch.stack(ref_images)
    masks = torch.stack(ref_masks) if ref_masks is not None else None
    with torch.no_grad():
        maps = provider(images, masks)
    return list(maps.unbind(0))


def downsample_map(fg_map: torch.Tensor, size: tuple[int, int] | torch.Size) -> torch.Tensor:
    """Bilinearly resize a ``B x 1 x H x W`` map to ``size``.

    Anti-aliasing averages over the whole footprint so small objects survive a
    32x reduction; maps already at ``size`` are returned as they are.
    """
    if tuple(fg_map.shape[-2:]) == tuple(size):
        return fg_map
    antialias = fg_map.shape[-2] > size[0] or fg_map.shape[-1] > size[1]
    return F.interpolate(
        fg_map, size=tuple(size), mode="bilinear", align_corners=False, antialias=antialias
    )


def masked_average_pool(
    feature: torch.Tensor, fg_map: torch.Tensor, eps: float = MAP_EPS
) -> torch.Tensor:
    """Average a feature map over the foreground, weighted by the downsampled map.

    Parameters
    ----------
    feature : torch.Tensor
        ``C x h x w`` or ``B x C x h x w`` features.
    fg_map : torch.Tensor
        ``1 x H x W`` or ``B x 1 x H x W`` foreground map in [0, 1].
    eps : float, default 1e-6
        Minimum total weight of the downsampled map.

    Returns
    -------
    torch.Tensor
        ``C`` or ``B x C`` pooled vector (before the 1x1 projection).

    Raises
    ------
    EmptyMaskError
        If the downsampled map of any sample sums to at most ``eps``.
    """
    unbatched = feature.dim() == 3
    if unbatched:
        feature, fg_map = feature[None], fg_map[None]
    weights = downsample_map(fg_map.to(feature.dtype), feature.shape[-2:])
    total = weights.sum(dim=(-2, -1))
    if bool((total <= eps).any()):
        raise EmptyMaskError("Foreground map is empty after downsampling")
    pooled = (feature * weights).sum(dim=(-2, -1)) / total
    return pooled[0] if unbatched else pooled


def aggregate_common_representation(objs: list[torch.Tensor] | torch.Tensor) -> torch.Tensor:
    """Average K object representations (``K x c_d`` or ``B x K x c_d``) over K.

    Raises
    ------
    EmptyListError
        If K is 0.
    """
    if isinstance(objs, (list, tuple)):
        if not objs:
            raise EmptyListError("Cannot aggregate zero object representations")
        objs = torch.stack(list(objs))
    if objs.shape[-2] == 0:
        raise EmptyListError("Cannot aggregate zero object representations")
    return objs.mean(dim=-2)


class ReferenceEncoder(nn.Module):
    """Learned part of the reference branch.

    Parameters
    ----------
    c_b : int
        Channel count of the encoder's deepest stage.
    c_d : int
        Width of the common representation.
    """

    def __init__(self, c_b: int, c_d: int) -> None:
        super().__init__()
        self.projection = nn.Conv2d(c_b, c_d, kernel_size=1)
        # Stands in for E when no reference is given
        self.baseline = nn.Parameter(torch.randn(c_d) * 0.02)

    def object_representations(self, features: torch.Tensor, maps: torch.Tensor) -> torch.Tensor:
        """Pool ``N x c_b x h x w`` features under ``N x 1 x H x W`` maps; project to c_d."""
        pooled = masked_average_pool(features, maps)
        return self.projection(pooled[..., None, None]).flatten(1)

    def forward(self, features: torch.Tensor, maps: torch.Tensor, k: int) -> torch.Tensor:
        """Return ``B x c_d`` common representations from ``(B*K)``-stacked references."""
        objs = self.object_representations(features, maps)
        return aggregate_common_representation(objs.view(-1, k, objs.shape[-1]))

    def baseline_representation(self, batch_size: int) -> torch.Tensor:
        """Return the learned constant ``E`` for ``batch_size`` episodes (baseline mode)."""
        return self.baseline.expand(batch_size, -1)
