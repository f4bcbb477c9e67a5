"""Shared test oracles."""

import numpy as np

from crowdloc import tensor as T
from crowdloc.dcb import DilatedConvBlock
from crowdloc.encoder import TokenGrid
from crowdloc.tensor import Tensor


def positive_eval_block(channels, rng, rates):
    """A context block rigged so every kernel tap transmits signal.

    All conv weights are strictly positive and batch norm runs in eval
    mode with its default unit statistics, so with a positive input the
    relus never clip and the full receptive field is live.
    """
    block = DilatedConvBlock(channels, rng, rates=rates)
    for conv in (block.conv1, block.conv2):
        conv.weight.data = np.abs(conv.weight.data) + np.float32(0.1)
    block.eval()
    return block


def footprint_by_perturbation(block, size, channels, h=1.0):
    """Side length of the output region that reacts to one input pixel.

    Runs the block twice, with and without a bump at the center pixel,
    and measures the bounding box of the changed outputs. Pixels outside
    the true receptive field recompute bit-identically, so any nonzero
    difference marks reachability.
    """
    base = np.ones((1, channels, size, size), dtype=np.float32)
    bumped = base.copy()
    bumped[0, 0, size // 2, size // 2] += h
    with T.no_grad():
        out_a = block(TokenGrid(_tokens(base), size, size))
        out_b = block(TokenGrid(_tokens(bumped), size, size))
    diff = np.abs(out_b.tokens.data - out_a.tokens.data).reshape(size, size, channels)
    return _box_side(diff.max(axis=2) != 0.0)


def footprint_by_gradient(block, size, channels):
    """Side length of the input region one output pixel depends on."""
    x = Tensor(np.ones((1, channels, size, size), dtype=np.float32),
               requires_grad=True)
    grid = TokenGrid(
        T.reshape(T.transpose(x, (0, 2, 3, 1)), (1, size * size, channels)),
        size, size,
    )
    out = block(grid)
    center = size // 2
    T.tsum(out.tokens[0, center * size + center, :]).backward()
    g = np.abs(x.grad).max(axis=(0, 1))
    return _box_side(g != 0.0)


def _tokens(arr):
    n, c, h, w = arr.shape
    return Tensor(arr.transpose(0, 2, 3, 1).reshape(n, h * w, c))


def _box_side(hit):
    ys, xs = np.nonzero(hit)
    if ys.size == 0:
        return 0
    side_y = int(ys.max() - ys.min() + 1)
    side_x = int(xs.max() - xs.min() + 1)
    assert side_y == side_x, f"footprint not square: {side_y}x{side_x}"
    return side_y


def exhaustive_match(preds, gts):
    """(match count, total distance) by trying every injective assignment.

    Objective mirrors the production matcher: most feasible pairs first,
    least total distance second. Memoized over (next pred, used-gt mask);
    meant for tiny inputs (<= 6 x 6).
    """
    import math
    from functools import lru_cache

    dist = [[math.dist(p, (g.x, g.y)) for g in gts] for p in preds]
    feas = [[dist[i][j] <= gts[j].sigma for j in range(len(gts))]
            for i in range(len(preds))]
    n_g = len(gts)

    @lru_cache(maxsize=None)
    def best(i, mask):
        if i == len(preds):
            return (0, 0.0)
        champ = best(i + 1, mask)  # pred i left unmatched
        for j in range(n_g):
            if feas[i][j] and not (mask >> j) & 1:
                tp, d = best(i + 1, mask | (1 << j))
                option = (tp + 1, d + dist[i][j])
                if option[0] > champ[0] or (
                    option[0] == champ[0] and option[1] < champ[1]
                ):
                    champ = option
        return champ

    return best(0, 0)


def flood_fill_labels(binary, connectivity=8):
    """Stack-based flood-fill labeling, the reference for union-find.

    Components are numbered 1..K by the raster position of their first
    pixel, matching the production labeler's contract exactly.
    """
    binary = np.asarray(binary, dtype=bool)
    h, w = binary.shape
    labels = np.zeros((h, w), dtype=np.int32)
    if connectivity == 8:
        steps = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)
                 if (dy, dx) != (0, 0)]
    else:
        steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    next_label = 1
    for y0 in range(h):
        for x0 in range(w):
            if not binary[y0, x0] or labels[y0, x0]:
                continue
            stack = [(y0, x0)]
            labels[y0, x0] = next_label
            while stack:
                y, x = stack.pop()
                for dy, dx in steps:
                    ny, nx = y + dy, x + dx
                    if (0 <= ny < h and 0 <= nx < w and binary[ny, nx]
                            and not labels[ny, nx]):
                        labels[ny, nx] = next_label
                        stack.append((ny, nx))
            next_label += 1
    return labels
