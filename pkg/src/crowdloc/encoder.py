"""Hierarchical windowed-attention encoder.

Four stages over a 4x4 patch embedding. Blocks alternate plain and
shifted window attention; every stage transition halves the grid and
doubles the channels via patch merging. Stages can carry a context-block
hook (see dcb.py) whose output both feeds the next stage and becomes
that stage's reported feature.

Attention is plain multi-head scaled dot-product inside each window;
there is no relative position bias and no class token. Learned absolute
position embeddings are added once, at the patch embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Linear, LayerNorm, Module, ModuleList, trunc_normal_
from .tensor import Tensor

__all__ = [
    "TokenGrid",
    "StageConfig",
    "window_partition",
    "window_reverse",
    "build_shift_mask",
    "PatchEmbed",
    "WindowAttention",
    "SwinBlock",
    "gather_quads",
    "PatchMerging",
    "SwinEncoder",
]

# Additive pre-softmax penalty for blocked pairs. exp(-1e4) underflows to
# zero in float32, so blocked attention weights vanish outright.
MASK_BLOCK = np.float32(-1e4)

PATCH = 4


@dataclass
class TokenGrid:
    """A stage output: row-major tokens over an h x w grid.

    ``tokens`` has shape (N, h*w, C). Batch stays folded in the tensor;
    the grid geometry rides alongside.
    """

    tokens: Tensor
    h: int
    w: int

    def __post_init__(self):
        n, l, c = self.tokens.shape
        if l != self.h * self.w:
            raise ValueError(f"token count {l} != {self.h}x{self.w}")

    @property
    def channels(self):
        return self.tokens.shape[-1]

    def as_map(self):
        """View as an (N, C, h, w) feature map (lossless reshape)."""
        n, l, c = self.tokens.shape
        return T.transpose(
            T.reshape(self.tokens, (n, self.h, self.w, c)), (0, 3, 1, 2)
        )


@dataclass(frozen=True)
class StageConfig:
    depth: int
    heads: int
    window: int
    channels: int


def window_partition(x, m):
    """(N, H, W, C) -> (N*nW, m*m, C); H and W must be multiples of m."""
    if m <= 0:
        raise ValueError(f"window size must be positive, got {m}")
    n, h, w, c = x.shape
    if h % m or w % m:
        raise ValueError(f"grid {h}x{w} not divisible by window {m}")
    x = T.reshape(x, (n, h // m, m, w // m, m, c))
    x = T.transpose(x, (0, 1, 3, 2, 4, 5))
    return T.reshape(x, (n * (h // m) * (w // m), m * m, c))


def window_reverse(windows, m, h, w):
    """Exact inverse of window_partition back to (N, H, W, C)."""
    nw_total, mm, c = windows.shape
    if mm != m * m:
        raise ValueError(f"window token count {mm} != {m}x{m}")
    per_image = (h // m) * (w // m)
    if per_image == 0 or nw_total % per_image:
        raise ValueError(
            f"{nw_total} windows do not tile a {h}x{w} grid with m={m}"
        )
    n = nw_total // per_image
    x = T.reshape(windows, (n, h // m, w // m, m, m, c))
    x = T.transpose(x, (0, 1, 3, 2, 4, 5))
    return T.reshape(x, (n, h, w, c))


def build_shift_mask(h, w, m, shift):
    """Additive per-window mask for cyclically shifted attention.

    Labels the (h, w) canvas with nine region ids split at -m and -shift,
    partitions the label image into windows, and blocks every pair whose
    labels differ. Returns (nW, m*m, m*m) float32 with 0 for allowed and
    a large negative surrogate for blocked pairs.
    """
    canvas = np.zeros((h, w), dtype=np.int32)
    cuts = (slice(0, -m), slice(-m, -shift), slice(-shift, None))
    region = 0
    for hs in cuts:
        for ws in cuts:
            canvas[hs, ws] = region
            region += 1
    tiles = canvas.reshape(h // m, m, w // m, m).transpose(0, 2, 1, 3)
    labels = tiles.reshape(-1, m * m)
    blocked = labels[:, :, None] != labels[:, None, :]
    return np.where(blocked, MASK_BLOCK, np.float32(0.0))


class PatchEmbed(Module):
    """4x4 patches, linear projection, learned position embeddings."""

    def __init__(self, in_channels, embed_dim, grid_h, grid_w, rng):
        super().__init__()
        self.grid_h = grid_h
        self.grid_w = grid_w
        self.proj = Linear(PATCH * PATCH * in_channels, embed_dim, rng)
        self.pos = Tensor(
            np.zeros((1, grid_h * grid_w, embed_dim), dtype=np.float32),
            requires_grad=True,
        )
        trunc_normal_(self.pos, rng)

    def forward(self, image):
        n, c, h, w = image.shape
        if h % PATCH or w % PATCH:
            raise ValueError(f"image {h}x{w} not divisible by patch {PATCH}")
        gh, gw = h // PATCH, w // PATCH
        x = T.reshape(image, (n, c, gh, PATCH, gw, PATCH))
        x = T.transpose(x, (0, 2, 4, 3, 5, 1))
        x = T.reshape(x, (n, gh * gw, PATCH * PATCH * c))
        tokens = self.proj(x)
        tokens = tokens + self._pos_for(gh, gw)
        return TokenGrid(tokens, gh, gw)

    def _pos_for(self, gh, gw):
        if (gh, gw) == (self.grid_h, self.grid_w):
            return self.pos
        # off-nominal input size: resample the embedding grid
        c = self.pos.shape[-1]
        as_map = T.transpose(
            T.reshape(self.pos, (1, self.grid_h, self.grid_w, c)), (0, 3, 1, 2)
        )
        resized = T.resize_nearest(as_map, (gh, gw))
        return T.reshape(T.transpose(resized, (0, 2, 3, 1)), (1, gh * gw, c))


class WindowAttention(Module):
    """Multi-head attention over the tokens of one window."""

    def __init__(self, dim, heads, rng):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.scale = self.head_dim**-0.5
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)

    def forward(self, windows, mask=None):
        b, l, c = windows.shape
        qkv = self.qkv(windows)
        qkv = T.reshape(qkv, (b, l, 3, self.heads, self.head_dim))
        qkv = T.transpose(qkv, (2, 0, 3, 1, 4))
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * self.scale
        if mask is not None:
            nw = mask.shape[0]
            attn = T.reshape(attn, (b // nw, nw, self.heads, l, l))
            attn = attn + Tensor(mask.reshape(1, nw, 1, l, l))
            attn = T.reshape(attn, (b, self.heads, l, l))
        attn = T.softmax(attn, axis=-1)
        out = T.matmul(attn, v)
        out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (b, l, c))
        return self.proj(out)


class SwinBlock(Module):
    """One transformer block: (shifted) window attention, then MLP.

    z' = attn(LN(z)) + z, z_out = mlp(LN(z')) + z'. The shift, window
    padding, and mask plumbing all live here; the attention module only
    sees flat windows.
    """

    MLP_RATIO = 4

    def __init__(self, dim, heads, window, shifted, rng):
        super().__init__()
        self.window = window
        self.shifted = shifted
        self.norm1 = LayerNorm(dim)
        self.attn = WindowAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.fc1 = Linear(dim, self.MLP_RATIO * dim, rng)
        self.fc2 = Linear(self.MLP_RATIO * dim, dim, rng)

    def _geometry(self, h, w):
        """Effective window and shift for this grid size.

        Small grids clamp the window; a window covering the whole grid
        makes shifting pointless, so it is disabled there.
        """
        m = min(self.window, h, w)
        shift = m // 2 if (self.shifted and (h > m or w > m)) else 0
        return m, shift

    def forward(self, grid):
        n, l, c = grid.tokens.shape
        h, w = grid.h, grid.w
        m, shift = self._geometry(h, w)

        shortcut = grid.tokens
        z = self.norm1(grid.tokens)
        z = T.reshape(z, (n, h, w, c))
        pad_h = (m - h % m) % m
        pad_w = (m - w % m) % m
        if pad_h or pad_w:
            z = T.pad(z, ((0, 0), (0, pad_h), (0, pad_w), (0, 0)))
        hp, wp = h + pad_h, w + pad_w
        if shift:
            z = T.roll2d(z, (-shift, -shift), (1, 2))

        mask = build_shift_mask(hp, wp, m, shift) if shift else None
        windows = window_partition(z, m)
        windows = self.attn(windows, mask=mask)
        z = window_reverse(windows, m, hp, wp)

        if shift:
            z = T.roll2d(z, (shift, shift), (1, 2))
        if pad_h or pad_w:
            z = z[:, :h, :w, :]
        z = T.reshape(z, (n, l, c))
        z = shortcut + z

        y = self.fc2(T.gelu(self.fc1(self.norm2(z))))
        return TokenGrid(z + y, h, w)


def gather_quads(grid):
    """Concatenate each 2x2 token neighborhood into one 4C token.

    Order is fixed: top-left, top-right, bottom-left, bottom-right.
    Odd grids are zero-padded at the bottom/right edge first. Returns
    a TokenGrid of shape (h/2, w/2) with 4C channels, pre-projection.
    """
    n, l, c = grid.tokens.shape
    h, w = grid.h, grid.w
    z = T.reshape(grid.tokens, (n, h, w, c))
    if h % 2 or w % 2:
        z = T.pad(z, ((0, 0), (0, h % 2), (0, w % 2), (0, 0)))
        h, w = h + h % 2, w + w % 2
    quads = [
        z[:, 0::2, 0::2, :],
        z[:, 0::2, 1::2, :],
        z[:, 1::2, 0::2, :],
        z[:, 1::2, 1::2, :],
    ]
    z = T.concat(quads, axis=3)
    z = T.reshape(z, (n, (h // 2) * (w // 2), 4 * c))
    return TokenGrid(z, h // 2, w // 2)


class PatchMerging(Module):
    """2x2 token neighborhoods -> one token with doubled channels.

    gather_quads collects the 4C neighborhood vector, which is then
    layer-normalized and projected to 2C.
    """

    def __init__(self, dim, rng):
        super().__init__()
        self.norm = LayerNorm(4 * dim)
        self.reduce = Linear(4 * dim, 2 * dim, rng)

    def forward(self, grid):
        gathered = gather_quads(grid)
        z = self.reduce(self.norm(gathered.tokens))
        return TokenGrid(z, gathered.h, gathered.w)


class SwinEncoder(Module):
    """Patch embedding plus four block stages with merges between them.

    ``stages`` is a list of four StageConfig entries whose channel counts
    must follow the C, 2C, 4C, 8C ladder. ``context_blocks`` maps a
    1-based stage index to a module applied to that stage's output map
    (see dcb.py); its output feeds both the feature list and the next
    stage.
    """

    def __init__(self, stages, in_channels, img_h, img_w, rng, context_blocks=None):
        super().__init__()
        if len(stages) != 4:
            raise ValueError(f"expected 4 stages, got {len(stages)}")
        base = stages[0].channels
        for i, s in enumerate(stages):
            if s.channels != base * 2**i:
                raise ValueError(
                    f"stage {i + 1} channels {s.channels} break the "
                    f"{base}*2^i ladder"
                )
        self.patch_embed = PatchEmbed(
            in_channels, base, img_h // PATCH, img_w // PATCH, rng
        )
        self.stages = ModuleList()
        self.merges = ModuleList()
        for i, s in enumerate(stages):
            blocks = ModuleList(
                SwinBlock(s.channels, s.heads, s.window, shifted=bool(d % 2), rng=rng)
                for d in range(s.depth)
            )
            self.stages.append(blocks)
            if i < 3:
                self.merges.append(PatchMerging(s.channels, rng))
        self.context = ModuleList()
        self._context_at = {}
        for stage_idx, mod in sorted((context_blocks or {}).items()):
            if not 1 <= stage_idx <= 4:
                raise ValueError(f"context block stage {stage_idx} out of range")
            self._context_at[stage_idx] = len(self.context)
            self.context.append(mod)

    def forward(self, image):
        """Return the four stage outputs, finest (stride 4) first."""
        grid = self.patch_embed(image)
        features = []
        for i in range(4):
            for block in self.stages[i]:
                grid = block(grid)
            slot = self._context_at.get(i + 1)
            if slot is not None:
                grid = self.context[slot](grid)
            features.append(grid)
            if i < 3:
                grid = self.merges[i](grid)
        return features
