"""Synthetic crowd scenes, label masks, augmentation, dataset files.

Scenes are stand-ins for street photography at desk scale: filled disks
on a textured background play the role of heads, shrinking toward the
top of the frame, with an optional blurred top band. Labels render each
head as its own mask component (nearest-center ownership, one-pixel
erosion along contested borders), so segmentation plus connected
components recovers the annotation exactly on clean labels.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from .metrics import HeadAnnotation
from .pnm import load_ppm, save_ppm, to_u8

__all__ = [
    "SyntheticConfig",
    "SceneSample",
    "generate_scene",
    "render_instance_mask",
    "flip_sample",
    "scale_sample",
    "crop_sample",
    "augment",
    "save_annotations",
    "load_annotations",
    "write_dataset",
    "read_manifest",
    "load_sample",
    "split_ids",
]


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs for scene generation; identical seeds give identical scenes."""

    height: int = 64
    width: int = 64
    count_range: tuple[int, int] = (4, 10)
    radius_range: tuple[float, float] = (2.0, 5.0)
    blur_band: float = 0.3
    blur_sigma: float = 1.2
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.count_range
        if not 0 <= lo <= hi:
            raise ValueError(f"bad count range {self.count_range}")
        rlo, rhi = self.radius_range
        if not 1.0 <= rlo <= rhi:
            raise ValueError(f"bad radius range {self.radius_range}")
        if not 0.0 <= self.blur_band <= 1.0:
            raise ValueError(f"blur band must be in [0,1], got {self.blur_band}")

    def to_flat(self):
        return {
            "data.height": self.height,
            "data.width": self.width,
            "data.count_range": list(self.count_range),
            "data.radius_range": [float(r) for r in self.radius_range],
            "data.blur_band": self.blur_band,
            "data.blur_sigma": self.blur_sigma,
            "data.seed": self.seed,
        }

    @staticmethod
    def from_flat(cfg):
        base = SyntheticConfig()
        get = lambda key, fallback: cfg.get(key, fallback)
        return SyntheticConfig(
            height=get("data.height", base.height),
            width=get("data.width", base.width),
            count_range=tuple(get("data.count_range", base.count_range)),
            radius_range=tuple(
                float(r) for r in get("data.radius_range", base.radius_range)
            ),
            blur_band=float(get("data.blur_band", base.blur_band)),
            blur_sigma=float(get("data.blur_sigma", base.blur_sigma)),
            seed=get("data.seed", base.seed),
        )


@dataclass
class SceneSample:
    """One image with its head annotations."""

    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    heads: list
    id: str = ""

    def __post_init__(self):
        _, h, w = self.image.shape
        for head in self.heads:
            if not (0 <= head.x < w and 0 <= head.y < h):
                raise ValueError(
                    f"head center ({head.x}, {head.y}) outside {w}x{h} image"
                )


def _background(rng, h, w):
    """Dark texture: coarse blotches plus fine grain."""
    tile = 8
    coarse = rng.uniform(0.15, 0.4, (3, h // tile + 1, w // tile + 1))
    coarse = coarse.repeat(tile, axis=1).repeat(tile, axis=2)[:, :h, :w]
    grain = rng.normal(0.0, 0.03, (3, h, w))
    return np.clip(coarse + grain, 0.0, 1.0).astype(np.float32)


def _place_heads(rng, cfg):
    """Perspective-sized, minimum-separation disk placement.

    Retries are bounded; a config too crowded for its canvas raises
    instead of looping forever.
    """
    count = int(rng.integers(cfg.count_range[0], cfg.count_range[1] + 1))
    rlo, rhi = cfg.radius_range
    placed = []
    budget = 400 * max(count, 1)
    while len(placed) < count:
        if budget == 0:
            raise ValueError(
                f"could not place {count} heads on a "
                f"{cfg.width}x{cfg.height} canvas; config too crowded"
            )
        budget -= 1
        y = float(rng.uniform(1.0, cfg.height - 2.0))
        x = float(rng.uniform(1.0, cfg.width - 2.0))
        depth = y / max(cfg.height - 1.0, 1.0)
        r = rlo + (rhi - rlo) * depth
        r = float(np.clip(r * rng.uniform(0.85, 1.15), 1.0, rhi))
        ok = True
        for (px, py, pr) in placed:
            gap = np.hypot(x - px, y - py)
            if gap < max(3.0, 0.7 * (r + pr)):
                ok = False
                break
        if ok:
            placed.append((x, y, r))
    return placed


def _draw_disk(image, rng, x, y, r):
    """Shaded bright disk with a slight per-channel tint."""
    h, w = image.shape[1:]
    base = rng.uniform(0.65, 0.95)
    tint = rng.uniform(-0.05, 0.05, size=3)
    y0, y1 = max(int(y - r) - 1, 0), min(int(y + r) + 2, h)
    x0, x1 = max(int(x - r) - 1, 0), min(int(x + r) + 2, w)
    ys, xs = np.mgrid[y0:y1, x0:x1]
    d2 = (ys - y) ** 2 + (xs - x) ** 2
    inside = d2 <= r * r
    shade = base * (1.0 - 0.3 * d2 / (r * r))
    for c in range(3):
        chan = image[c, y0:y1, x0:x1]
        chan[inside] = np.clip(shade + tint[c], 0.0, 1.0)[inside]


def generate_scene(cfg, index=0):
    """Deterministic scene number ``index`` of the stream seeded by cfg."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, index]))
    image = _background(rng, cfg.height, cfg.width)
    placed = _place_heads(rng, cfg)
    for x, y, r in placed:
        _draw_disk(image, rng, x, y, r)
    # blur is applied last and draws nothing from the rng, so configs
    # differing only in blur content produce identical geometry
    band = int(round(cfg.blur_band * cfg.height))
    if band > 0 and cfg.blur_sigma > 0:
        blurred = gaussian_filter(image, sigma=(0, cfg.blur_sigma, cfg.blur_sigma))
        image[:, :band, :] = blurred[:, :band, :]
    heads = [HeadAnnotation(x, y, 2.0 * r, 2.0 * r) for x, y, r in placed]
    return SceneSample(image, heads, id=f"scene_{cfg.seed}_{index:05d}")


def render_instance_mask(sample):
    """Binary (1, H, W) mask with one component per head.

    Each disk pixel belongs to its nearest head center; pixels whose
    8-neighborhood touches a different head's pixels are dropped on both
    sides, so no two components can be 8-connected.
    """
    _, h, w = sample.image.shape
    if not sample.heads:
        return np.zeros((1, h, w), dtype=np.float32)
    cx = np.array([hd.x for hd in sample.heads])
    cy = np.array([hd.y for hd in sample.heads])
    cr = np.array([hd.w for hd in sample.heads]) / 2.0
    ys, xs = np.mgrid[0:h, 0:w]
    d2 = (ys[..., None] - cy) ** 2 + (xs[..., None] - cx) ** 2
    owner = d2.argmin(axis=2)
    own_d2 = np.take_along_axis(d2, owner[..., None], axis=2)[..., 0]
    # a pixel belongs to its nearest center, and only within that head's
    # disk; each region is then convex, so it cannot fall apart on its own
    covered = own_d2 <= cr[owner] ** 2
    label = np.where(covered, owner + 1, 0)

    padded = np.pad(label, 1, constant_values=0)
    contested = np.zeros((h, w), dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            neigh = padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
            contested |= (label > 0) & (neigh > 0) & (neigh != label)
    mask = (label > 0) & ~contested
    return mask[None].astype(np.float32)


def flip_sample(sample):
    """Horizontal mirror; x -> W-1-x for every head."""
    _, _, w = sample.image.shape
    image = np.ascontiguousarray(sample.image[:, :, ::-1])
    heads = [
        replace(hd, x=w - 1.0 - hd.x) for hd in sample.heads
    ]
    return SceneSample(image, heads, sample.id)


def scale_sample(sample, factor):
    """Nearest-neighbor rescale of image and annotations."""
    _, h, w = sample.image.shape
    nh, nw = max(int(round(h * factor)), 1), max(int(round(w * factor)), 1)
    rows = (np.arange(nh) * h) // nh
    cols = (np.arange(nw) * w) // nw
    image = np.ascontiguousarray(sample.image[:, rows[:, None], cols[None, :]])
    sy, sx = nh / h, nw / w
    heads = []
    for hd in sample.heads:
        x, y = hd.x * sx, hd.y * sy
        if x < nw and y < nh:
            heads.append(HeadAnnotation(x, y, hd.w * sx, hd.h * sy))
    return SceneSample(image, heads, sample.id)


def crop_sample(sample, top, left, out_h, out_w):
    """Fixed-origin crop; pads with zeros when the source is too small."""
    c, h, w = sample.image.shape
    if h < out_h or w < out_w:
        pad_h, pad_w = max(out_h - h, 0), max(out_w - w, 0)
        image = np.pad(sample.image, ((0, 0), (0, pad_h), (0, pad_w)))
        sample = SceneSample(image, list(sample.heads), sample.id)
        c, h, w = image.shape
    if not (0 <= top <= h - out_h and 0 <= left <= w - out_w):
        raise ValueError(f"crop origin ({top}, {left}) out of range")
    image = np.ascontiguousarray(
        sample.image[:, top : top + out_h, left : left + out_w]
    )
    heads = []
    for hd in sample.heads:
        x, y = hd.x - left, hd.y - top
        if 0 <= x < out_w and 0 <= y < out_h:
            heads.append(replace(hd, x=x, y=y))
    return SceneSample(image, heads, sample.id)


def augment(sample, rng, out_h=None, out_w=None):
    """Random flip, scale in [0.8, 1.2], and crop back to target size."""
    _, h, w = sample.image.shape
    out_h = out_h if out_h is not None else h
    out_w = out_w if out_w is not None else w
    if rng.uniform() < 0.5:
        sample = flip_sample(sample)
    sample = scale_sample(sample, float(rng.uniform(0.8, 1.2)))
    _, sh, sw = sample.image.shape
    top = int(rng.integers(0, max(sh - out_h, 0) + 1))
    left = int(rng.integers(0, max(sw - out_w, 0) + 1))
    return crop_sample(sample, top, left, out_h, out_w)


def save_annotations(sample_or_heads, path):
    """One `x y w h` line per head."""
    heads = getattr(sample_or_heads, "heads", sample_or_heads)
    with open(path, "w", encoding="ascii") as fh:
        for hd in heads:
            fh.write(f"{hd.x:.3f} {hd.y:.3f} {hd.w:.3f} {hd.h:.3f}\n")


def load_annotations(path):
    heads = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(
                    f"{path}:{lineno}: expected 'x y w h', got {raw!r}"
                )
            try:
                x, y, w, h = (float(p) for p in parts)
            except ValueError:
                raise ValueError(
                    f"{path}:{lineno}: non-numeric field in {raw!r}"
                ) from None
            heads.append(HeadAnnotation(x, y, w, h))
    return heads


def write_dataset(cfg, count, out_dir):
    """Materialize ``count`` scenes as PPM + annotation files + manifest."""
    out_dir.mkdir(parents=True, exist_ok=True)
    ids = []
    for i in range(count):
        sample = generate_scene(cfg, index=i)
        save_ppm(out_dir / f"{sample.id}.ppm", _chw_to_u8(sample.image))
        save_annotations(sample, out_dir / f"{sample.id}.txt")
        ids.append(sample.id)
    with open(out_dir / "manifest.txt", "w", encoding="ascii") as fh:
        fh.write("\n".join(ids) + "\n")
    return ids


def read_manifest(dataset_dir):
    with open(dataset_dir / "manifest.txt", "r", encoding="ascii") as fh:
        return [line.strip() for line in fh if line.strip()]


def load_sample(dataset_dir, sample_id):
    image = load_ppm(dataset_dir / f"{sample_id}.ppm")
    heads = load_annotations(dataset_dir / f"{sample_id}.txt")
    chw = (image.astype(np.float32) / 255.0).transpose(2, 0, 1)
    return SceneSample(np.ascontiguousarray(chw), heads, sample_id)


def split_ids(ids, seed, val_fraction=0.2):
    """Seed-stable shuffle, then an 80/20 train/val cut by default."""
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_val = int(round(len(ids) * val_fraction))
    return shuffled[n_val:], shuffled[:n_val]


def _chw_to_u8(image):
    return to_u8(image.transpose(1, 2, 0))
