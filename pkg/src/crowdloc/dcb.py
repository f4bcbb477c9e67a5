"""Dilated convolutional block between encoder stages.

Token grids reshape losslessly to spatial maps, pass through two dilated
3x3 conv + batch-norm + relu layers sized to preserve the grid, and
reshape back. Padding equals dilation per layer, so token count, grid
dims, and channel count never change. The two-layer receptive field
spans 1 + sum(d_i * (k - 1)) pixels per axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoder import TokenGrid
from .nn import BatchNorm2d, Conv2d, Module

__all__ = ["DcbConfig", "tokens_to_map", "map_to_tokens", "DilatedConvBlock"]

KERNEL = 3


@dataclass(frozen=True)
class DcbConfig:
    """Placement and geometry of the context blocks.

    ``insert_after`` uses 1-based stage indices; a block after stage s
    processes that stage's output and feeds both the decoder and the
    next stage.
    """

    channels: int
    rates: tuple[int, int] = (2, 3)
    insert_after: frozenset[int] = field(default_factory=lambda: frozenset({3, 4}))

    def __post_init__(self):
        if len(self.rates) != 2 or min(self.rates) < 1:
            raise ValueError(f"rates must be two positive ints, got {self.rates}")
        if not all(1 <= s <= 4 for s in self.insert_after):
            raise ValueError(f"stage indices out of range: {self.insert_after}")

    def span(self):
        """Receptive-field side length of the two stacked convs."""
        return 1 + sum(r * (KERNEL - 1) for r in self.rates)


def tokens_to_map(grid):
    """Row-major tokens -> (N, C, h, w) feature map. Lossless."""
    return grid.as_map()


def map_to_tokens(fmap):
    """Exact inverse of tokens_to_map."""
    n, c, h, w = fmap.shape
    tokens = T.reshape(T.transpose(fmap, (0, 2, 3, 1)), (n, h * w, c))
    return TokenGrid(tokens, h, w)


class DilatedConvBlock(Module):
    """conv(3x3, d=r1) -> BN -> relu -> conv(3x3, d=r2) -> BN -> relu.

    Convs initialize near identity (center tap 1, small noise elsewhere)
    so a fresh block approximates a pass-through and does not wreck the
    features of a partially trained encoder; it is meant to be trained
    at a reduced learning rate.
    """

    def __init__(self, channels, rng, rates=(2, 3), init_noise=0.01):
        super().__init__()
        self.rates = tuple(rates)
        r1, r2 = self.rates
        self.conv1 = Conv2d(channels, channels, KERNEL, rng, padding=r1, dilation=r1)
        self.bn1 = BatchNorm2d(channels)
        self.conv2 = Conv2d(channels, channels, KERNEL, rng, padding=r2, dilation=r2)
        self.bn2 = BatchNorm2d(channels)
        for conv in (self.conv1, self.conv2):
            self._identity_init(conv, channels, rng, init_noise)

    @staticmethod
    def _identity_init(conv, channels, rng, noise):
        w = rng.standard_normal(conv.weight.shape) * noise
        center = KERNEL // 2
        w[np.arange(channels), np.arange(channels), center, center] += 1.0
        conv.weight.data = w.astype(np.float32)

    def forward(self, grid):
        fmap = tokens_to_map(grid)
        fmap = T.relu(self.bn1(self.conv1(fmap)))
        fmap = T.relu(self.bn2(self.conv2(fmap)))
        out = map_to_tokens(fmap)
        if (out.h, out.w, out.channels) != (grid.h, grid.w, grid.channels):
            raise AssertionError("context block changed grid geometry")
        return out
