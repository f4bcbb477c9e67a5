"""Feature-pyramid fusion and the full-resolution scoring head.

The four encoder scales collapse to a single map at the finest stride:
1x1 laterals unify channels, a top-down pass upsamples and adds, and a
3x3 conv smooths each merged level. The head then climbs back to input
resolution with two stride-2 transposed convs and squashes to a
one-channel score map in (0, 1).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import Conv2d, ConvTranspose2d, Module, ModuleList
from .pnm import save_pgm
from .tensor import Tensor, save_tensor

__all__ = ["Fpn", "SegHead", "dump_score_map"]

LATERAL_DIM = 256


class Fpn(Module):
    """Fuse four token grids into one map at the finest grid's stride."""

    def __init__(self, stage_channels, rng, lateral_dim=LATERAL_DIM):
        super().__init__()
        if len(stage_channels) != 4:
            raise ValueError(f"expected 4 stages, got {len(stage_channels)}")
        self.lateral_dim = lateral_dim
        self.laterals = ModuleList(
            Conv2d(c, lateral_dim, 1, rng) for c in stage_channels
        )
        self.smooths = ModuleList(
            Conv2d(lateral_dim, lateral_dim, 3, rng, padding=1) for _ in range(4)
        )

    def forward(self, grids):
        if len(grids) != 4:
            raise ValueError(f"expected 4 grids, got {len(grids)}")
        for a, b in zip(grids, grids[1:]):
            if not (a.h >= b.h and a.w >= b.w):
                raise ValueError("grids must be ordered finest to coarsest")
        maps = [lat(g.as_map()) for lat, g in zip(self.laterals, grids)]
        merged = maps[3]
        fused = self.smooths[3](merged)
        for i in (2, 1, 0):
            target = (grids[i].h, grids[i].w)
            merged = maps[i] + T.resize_nearest(merged, target)
            fused = self.smooths[i](merged)
        return fused


class SegHead(Module):
    """Stride-4 fused map -> full-resolution score map in (0, 1).

    3x3 conv, then two stride-2 transposed convs (relu between them);
    the second emits the single logit channel that feeds the sigmoid.
    """

    def __init__(self, in_dim, rng):
        super().__init__()
        mid = max(in_dim // 2, 8)
        self.conv = Conv2d(in_dim, in_dim, 3, rng, padding=1)
        self.up1 = ConvTranspose2d(in_dim, mid, 4, 2, rng)
        self.up2 = ConvTranspose2d(mid, 1, 4, 2, rng)

    def forward(self, fused):
        z = T.relu(self.conv(fused))
        z = T.relu(self.up1(z))
        logits = self.up2(z)
        return T.sigmoid(logits)


def dump_score_map(score, stem):
    """Write a score map as both a tensor file and an 8-bit PGM.

    ``score`` is (H, W) or (1, 1, H, W); ``stem`` gains .bin and .pgm
    suffixes. Returns the two paths.
    """
    arr = score.data if isinstance(score, Tensor) else np.asarray(score)
    arr = arr.reshape(arr.shape[-2], arr.shape[-1])
    bin_path, pgm_path = f"{stem}.bin", f"{stem}.pgm"
    save_tensor(bin_path, arr)
    save_pgm(pgm_path, arr)
    return bin_path, pgm_path
