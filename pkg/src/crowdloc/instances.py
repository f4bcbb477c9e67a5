"""Score map -> binary map -> labeled components -> point instances.

Labeling is a two-pass union-find scan, 8-connected by default. Labels
are dense 1..K in raster order of each component's first pixel, so the
output is deterministic down to the bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

__all__ = [
    "Instance",
    "binarize",
    "connected_components",
    "extract_instances",
    "format_instances",
    "parse_instances",
]


@dataclass(frozen=True)
class Instance:
    """One detected blob, reduced to a point plus bookkeeping.

    ``bbox`` is (x0, y0, x1, y1) inclusive; it is None for instances
    parsed back from text, which only carries centroid and area.
    """

    id: int
    centroid: tuple[float, float]  # (x, y) in pixel coordinates
    area: int
    bbox: tuple[int, int, int, int] | None


def binarize(score, threshold):
    """Foreground wherever score > threshold; threshold must be in (0,1)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be inside (0, 1), got {threshold}")
    arr = score.data if isinstance(score, Tensor) else np.asarray(score)
    if arr.ndim != 2:
        arr = arr.reshape(arr.shape[-2], arr.shape[-1])
    return arr > threshold


def connected_components(binary, connectivity=8):
    """Label maximal connected foreground regions.

    Returns an int32 map with 0 for background and 1..K for components,
    numbered by the raster position of each component's first pixel.
    """
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    binary = np.asarray(binary, dtype=bool)
    h, w = binary.shape
    labels = np.zeros((h, w), dtype=np.int32)
    parent = [0]  # parent[i] for provisional label i; 0 unused

    def find(a):
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            # keep the smaller provisional label as root
            if rb < ra:
                ra, rb = rb, ra
            parent[rb] = ra

    if connectivity == 8:
        offsets = ((-1, -1), (-1, 0), (-1, 1), (0, -1))
    else:
        offsets = ((-1, 0), (0, -1))

    for y in range(h):
        row = binary[y]
        for x in range(w):
            if not row[x]:
                continue
            neighbor_labels = []
            for dy, dx in offsets:
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and labels[ny, nx]:
                    neighbor_labels.append(labels[ny, nx])
            if not neighbor_labels:
                parent.append(len(parent))
                labels[y, x] = len(parent) - 1
            else:
                first = min(neighbor_labels)
                labels[y, x] = first
                for other in neighbor_labels:
                    union(first, other)

    # second pass: collapse to roots, then densify in raster order
    dense = {}
    out = np.zeros((h, w), dtype=np.int32)
    for y in range(h):
        for x in range(w):
            lab = labels[y, x]
            if not lab:
                continue
            root = find(lab)
            if root not in dense:
                dense[root] = len(dense) + 1
            out[y, x] = dense[root]
    return out


def extract_instances(labels):
    """One Instance per label, sorted by id; centroid is the pixel mean."""
    labels = np.asarray(labels)
    k = int(labels.max(initial=0))
    instances = []
    for lab in range(1, k + 1):
        ys, xs = np.nonzero(labels == lab)
        if ys.size == 0:
            raise ValueError(f"label map skips id {lab}")
        instances.append(
            Instance(
                id=lab,
                centroid=(float(xs.mean()), float(ys.mean())),
                area=int(ys.size),
                bbox=(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())),
            )
        )
    return instances


def format_instances(instances, threshold):
    """Emit the prediction text block: header then one `x y area` per line."""
    lines = [f"count {len(instances)} threshold {threshold:g}"]
    for inst in instances:
        x, y = inst.centroid
        lines.append(f"{x:.4f} {y:.4f} {inst.area}")
    return "\n".join(lines) + "\n"


def parse_instances(text):
    """Inverse of format_instances; returns (instances, threshold)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty instance block")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "count" or head[2] != "threshold":
        raise ValueError(f"bad header: {lines[0]!r}")
    count, threshold = int(head[1]), float(head[3])
    body = lines[1:]
    if len(body) != count:
        raise ValueError(f"header says {count} instances, found {len(body)}")
    instances = []
    for i, line in enumerate(body, start=1):
        x, y, area = line.split()
        instances.append(
            Instance(id=i, centroid=(float(x), float(y)), area=int(area), bbox=None)
        )
    return instances, threshold
