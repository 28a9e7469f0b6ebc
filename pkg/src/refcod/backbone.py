# SPDX-FileCopyrightText: 2024-2026 Nicolai Buchwitz <nb@tipi-net.de>
#
# SPDX-License-Identifier: LGPL-2.1-or-later

"""Pyramid encoders and the per-level channel projection.

Encoders expose their last three stages at strides 8, 16 and 32. Two encoders
are provided: a small randomly initialised CNN for desk-scale runs and a
torchvision ResNet-50 (optional ``resnet`` extra) loaded from a weights file.
"""

import logging
from abc import ABC, abstractmethod
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from .errors import BadShapeError, ProviderUnavailableError

logger = logging.getLogger(__name__)

STRIDES = (8, 16, 32)


def count_parameters(module: nn.Module, trainable_only: bool = True) -> int:
    """Return the number of (trainable) scalar parameters of a module."""
    return sum(p.numel() for p in module.parameters() if p.requires_grad or not trainable_only)


def conv_bn_relu(c_in: int, c_out: int, stride: int = 1) -> nn.Sequential:
    """3x3 convolution followed by batch norm and ReLU."""
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=True),
    )


class Encoder(nn.Module, ABC):
    """Abstract base class for pyramid encoders.

    Attributes
    ----------
    channels : tuple[int, int, int]
        Native channel counts of the stride-8, stride-16 and stride-32 outputs.
    """

    channels: tuple[int, int, int]

    @abstractmethod
    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Return the stride-8, stride-16 and stride-32 feature maps of ``x``."""


class ToyEncoder(Encoder):
    """Four-stage CNN with a stride-4 stem, doubling width at each downsampling stage.

    Parameters
    ----------
    width : int, default 16
        Channel count of the first stage; stages use ``w, 2w, 4w, 8w``.
    """

    def __init__(self, width: int = 16) -> None:
        super().__init__()
        self.stem = nn.Sequential(conv_bn_relu(3, width, stride=2), conv_bn_relu(width, width, 2))
        self.stage1 = conv_bn_relu(width, width)
        self.stage2 = self._stage(width, 2 * width)
        self.stage3 = self._stage(2 * width, 4 * width)
        self.stage4 = self._stage(4 * width, 8 * width)
        self.channels = (2 * width, 4 * width, 8 * width)

    @staticmethod
    def _stage(c_in: int, c_out: int) -> nn.Sequential:
        return nn.Sequential(conv_bn_relu(c_in, c_out, stride=2), conv_bn_relu(c_out, c_out))

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Return stages 2 to 4."""
        x = self.stage1(self.stem(x))
        f2 = self.stage2(x)
        f3 = self.stage3(f2)
        f4 = self.stage4(f3)
        return [f2, f3, f4]


class ResNet50Encoder(Encoder):
    """torchvision ResNet-50 returning ``layer2`` to ``layer4``.

    Parameters
    ----------
    weights_path : str or Path
        State dict of a torchvision ``resnet50``; the classifier head is ignored.

    Raises
    ------
    ProviderUnavailableError
        If torchvision is not installed or the weights cannot be loaded.
    """

    def __init__(self, weights_path: str | Path) -> None:
        super().__init__()
        try:
            from torchvision.models import resnet50
        except ImportError as e:
            raise ProviderUnavailableError(
                "The resnet50 encoder needs torchvision (install the 'resnet' extra)",
                original_error=e,
            ) from e
        net = resnet50(weights=None)
        try:
            state = torch.load(weights_path, map_location="cpu", weights_only=True)
        except (OSError, RuntimeError) as e:
            raise ProviderUnavailableError(
                f"Cannot load ResNet-50 weights from '{weights_path}': {e}", original_error=e
            ) from e
        state = {k: v for k, v in state.items() if not k.startswith("fc.")}
        net.load_state_dict(state, strict=False)
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool, net.layer1)
        self.layer2, self.layer3, self.layer4 = net.layer2, net.layer3, net.layer4
        self.channels = (512, 1024, 2048)
        logger.info(f"Loaded ResNet-50 encoder weights from {weights_path}")

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Return ``layer2``, ``layer3`` and ``layer4`` outputs."""
        f2 = self.layer2(self.stem(x))
        f3 = self.layer3(f2)
        return [f2, f3, self.layer4(f3)]


def build_encoder(kind: str, path: str | None = None, width: int = 16) -> Encoder:
    """Instantiate an encoder from its configured kind (``toy`` or ``resnet50``)."""
    if kind == "toy":
        return ToyEncoder(width)
    if kind == "resnet50" and path:
        return ResNet50Encoder(path)
    raise ValueError(f"Unknown encoder '{kind}'")


def check_input_size(image: torch.Tensor) -> None:
    """Raise :class:`BadShapeError` unless both spatial sides are divisible by 32."""
    h, w = image.shape[-2:]
    if h % 32 or w % 32:
        raise BadShapeError(f"Input size {h}x{w} is not divisible by 32")


def extract_pyramid(image: torch.Tensor, encoder: Encoder) -> list[torch.Tensor]:
    """Run the encoder on ``B x 3 x H x W`` (or a single ``3 x H x W``) image.

    Returns
    -------
    list[torch.Tensor]
        Three feature maps at strides 8, 16 and 32 with the encoder's native
        channel counts. A single image yields unbatched maps.

    Raises
    ------
    BadShapeError
        If H or W is not divisible by 32.
    """
    check_input_size(image)
    if image.dim() == 3:
        return [f[0] for f in encoder(image[None])]
    return encoder(image)


class PyramidProjection(nn.Module):
    """Per-level 1x1 convolutions (with bias) mapping native channels to ``c_d``."""

    def __init__(self, in_channels: tuple[int, int, int], c_d: int) -> None:
        super().__init__()
        self.convs = nn.ModuleList(nn.Conv2d(c, c_d, kernel_size=1) for c in in_channels)

    def forward(self, features: list[torch.Tensor]) -> list[torch.Tensor]:
        """Project each of the three levels."""
        if len(features) != len(self.convs):
            raise ValueError(f"Expected {len(self.convs)} pyramid levels, got {len(features)}")
        return [conv(f) for conv, f in zip(self.convs, features)]


def project_channels(
    features: list[torch.Tensor], projection: PyramidProjection
) -> list[torch.Tensor]:
    """Map a raw three-level pyramid to ``c_d`` channels per level."""
    return projection(features)


def resize_to(x: torch.Tensor, size: tuple[int, int] | torch.Size) -> torch.Tensor:
    """Bilinear resize without corner alignment; a no-op when the size already matches."""
    if tuple(x.shape[-2:]) == tuple(size):
        return x
    return F.interpolate(x, size=tuple(size), mode="bilinear", align_corners=False)
