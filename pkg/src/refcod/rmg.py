# SPDX-FileCopyrightText: 2024-2026 Nicolai Buchwitz <nb@tipi-net.de>
#
# SPDX-License-Identifier: LGPL-2.1-or-later

"""Referring mask generation.

The common representation ``E`` is injected into every pyramid level by an
affine modulation of the coordinate-augmented features, the three modulated
levels are fused coarse-to-fine by a convolutional LSTM, and a dynamic 1x1
convolution whose kernel is formed from ``E`` turns the fused feature into the
referring heatmap.
"""

from typing import NamedTuple

import torch
from torch import nn

from .backbone import resize_to

COORD_CHANNELS = 8


def coord_embedding(
    h: int, w: int, dtype: torch.dtype = torch.float32, device: torch.device | None = None
) -> torch.Tensor:
    """Return the ``8 x h x w`` coordinate map.

    Channels are ``cx, cy, x0, y0, x1, y1, 1/w, 1/h``: the normalised centre,
    min corner and max corner of each cell in [-1, 1], then the reciprocal
    grid size.
    """
    j = torch.arange(w, dtype=dtype, device=device)
    i = torch.arange(h, dtype=dtype, device=device)
    x0 = 2.0 * j / w - 1.0
    x1 = 2.0 * (j + 1) / w - 1.0
    cx = 2.0 * (j + 0.5) / w - 1.0
    y0 = 2.0 * i / h - 1.0
    y1 = 2.0 * (i + 1) / h - 1.0
    cy = 2.0 * (i + 0.5) / h - 1.0

    def cols(v: torch.Tensor) -> torch.Tensor:
        return v.view(1, w).expand(h, w)

    def rows(v: torch.Tensor) -> torch.Tensor:
        return v.view(h, 1).expand(h, w)

    ones = torch.ones(h, w, dtype=dtype, device=device)
    return torch.stack(
        [cols(cx), rows(cy), cols(x0), rows(y0), cols(x1), rows(y1), ones / w, ones / h]
    )


def append_coord_embedding(pyramid: list[torch.Tensor]) -> list[torch.Tensor]:
    """Concatenate the coordinate map to every ``B x c_d x h x w`` level."""
    out = []
    for level in pyramid:
        b, _, h, w = level.shape
        coords = coord_embedding(h, w, level.dtype, level.device)
        out.append(torch.cat([level, coords.expand(b, -1, -1, -1)], dim=1))
    return out


class AffineModulation(nn.Module):
    """``ReLU(Conv3x3(ReLU(gamma * x + beta)))`` with ``gamma``, ``beta`` affine in ``E``.

    The scale is predicted as an offset from one: with zero ``gamma`` and
    ``beta`` layers the features pass through unscaled.

    Parameters
    ----------
    c_d : int
        Width of ``E`` and of the output; the input carries ``c_d + 8`` channels.
    """

    def __init__(self, c_d: int) -> None:
        super().__init__()
        self.gamma = nn.Linear(c_d, c_d + COORD_CHANNELS)
        self.beta = nn.Linear(c_d, c_d + COORD_CHANNELS)
        self.recover = nn.Conv2d(c_d + COORD_CHANNELS, c_d, kernel_size=3, padding=1)
        self.relu = nn.ReLU()

    def forward(self, x: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
        """Modulate ``B x (c_d+8) x h x w`` features with ``B x c_d`` representations."""
        gamma = 1.0 + self.gamma(e)[..., None, None]
        beta = self.beta(e)[..., None, None]
        return self.relu(self.recover(self.relu(gamma * x + beta)))


class LstmState(NamedTuple):
    """Hidden and cell state of a convolutional LSTM."""

    h: torch.Tensor
    c: torch.Tensor


class ConvLSTMCell(nn.Module):
    """Convolutional LSTM cell with a single convolution producing all four gates.

    Parameters
    ----------
    c_in : int
        Input channels.
    hidden : int
        Hidden and cell state channels.
    kernel_size : int, default 3
        Gate convolution size (odd).
    """

    def __init__(self, c_in: int, hidden: int, kernel_size: int = 3) -> None:
        super().__init__()
        self.hidden = hidden
        self.gates = nn.Conv2d(
            c_in + hidden, 4 * hidden, kernel_size=kernel_size, padding=kernel_size // 2
        )

    def forward(self, x: torch.Tensor, state: LstmState) -> LstmState:
        """Advance the state by one step."""
        i, f, o, g = torch.split(self.gates(torch.cat([x, state.h], dim=1)), self.hidden, dim=1)
        c = torch.sigmoid(f) * state.c + torch.sigmoid(i) * torch.tanh(g)
        h = torch.sigmoid(o) * torch.tanh(c)
        return LstmState(h, c)


def multiscale_fuse(
    cell: ConvLSTMCell, y2: torch.Tensor, y3: torch.Tensor, y4: torch.Tensor
) -> torch.Tensor:
    """Fuse three modulated levels coarse-to-fine and return the last hidden state.

    The state starts as ``h = c = y4`` and is upsampled bilinearly before each
    of the two steps (level 3, then level 2). The same cell runs both steps.
    """
    state = LstmState(y4, y4)
    for y in (y3, y2):
        size = y.shape[-2:]
        state = cell(y, LstmState(resize_to(state.h, size), resize_to(state.c, size)))
    return state.h


class MultiScaleFusion(nn.Module):
    """Coarse-to-fine fusion of the three modulated levels to stride 8.

    Parameters
    ----------
    c_d : int
        Channel count of every level.
    kernel_size : int, default 3
        ConvLSTM gate size.
    mode : str, default "clstm"
        ``clstm`` for the recurrent fusion, ``concat`` to upsample, concatenate
        and merge the levels with a 3x3 convolution.
    """

    def __init__(self, c_d: int, kernel_size: int = 3, mode: str = "clstm") -> None:
        super().__init__()
        self.mode = mode
        if mode == "clstm":
            self.cell = ConvLSTMCell(c_d, c_d, kernel_size)
        elif mode == "concat":
            self.merge = nn.Sequential(
                nn.Conv2d(3 * c_d, c_d, kernel_size=3, padding=1), nn.ReLU()
            )
        else:
            raise ValueError(f"Unknown fusion mode '{mode}'")

    def forward(self, y2: torch.Tensor, y3: torch.Tensor, y4: torch.Tensor) -> torch.Tensor:
        """Return the ``B x c_d x (H/8) x (W/8)`` fused feature."""
        if self.mode == "clstm":
            return multiscale_fuse(self.cell, y2, y3, y4)
        size = y2.shape[-2:]
        return self.merge(torch.cat([y2, resize_to(y3, size), resize_to(y4, size)], dim=1))


def target_match(fused: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    """Apply a per-sample 1x1 kernel: ``H(p) = <kernel, fused[:, p]>``.

    Parameters
    ----------
    fused : torch.Tensor
        ``B x C x h x w`` features.
    kernel : torch.Tensor
        ``B x C`` kernels.

    Returns
    -------
    torch.Tensor
        ``B x 1 x h x w`` heatmap.
    """
    return torch.einsum("bchw,bc->bhw", fused, kernel)[:, None]


class TargetMatching(nn.Module):
    """Dynamic 1x1 convolution with a kernel formed from ``E`` (no bias).

    ``kernel_from_e`` selects a learned bias-free linear map (``linear``) or
    ``E`` itself (``identity``).
    """

    def __init__(self, c_d: int, kernel_from_e: str = "linear") -> None:
        super().__init__()
        if kernel_from_e == "linear":
            self.kernel: nn.Module = nn.Linear(c_d, c_d, bias=False)
        elif kernel_from_e == "identity":
            self.kernel = nn.Identity()
        else:
            raise ValueError(f"Unknown kernel mode '{kernel_from_e}'")

    def forward(self, fused: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
        """Return the ``B x 1 x h x w`` referring heatmap."""
        return target_match(fused, self.kernel(e))


class RMG(nn.Module):
    """Referring mask generation: modulation, multi-scale fusion and target matching."""

    def __init__(
        self, c_d: int, lstm_kernel: int = 3, kernel_from_e: str = "linear", msf: str = "clstm"
    ) -> None:
        super().__init__()
        self.modulations = nn.ModuleList(AffineModulation(c_d) for _ in range(3))
        self.fusion = MultiScaleFusion(c_d, lstm_kernel, msf)
        self.matching = TargetMatching(c_d, kernel_from_e)

    def modulate(self, pyramid: list[torch.Tensor], e: torch.Tensor) -> list[torch.Tensor]:
        """Return the three modulated ``c_d``-channel levels."""
        return [m(x, e) for m, x in zip(self.modulations, append_coord_embedding(pyramid))]

    def forward(
        self, pyramid: list[torch.Tensor], e: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Return ``(fused, heatmap)`` at stride 8."""
        y2, y3, y4 = self.modulate(pyramid, e)
        fused = self.fusion(y2, y3, y4)
        return fused, self.matching(fused, e)
