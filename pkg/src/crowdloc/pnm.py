"""Binary PGM (P5) and PPM (P6) image files, 8-bit, maxval 255.

Grayscale arrays travel as (H, W) uint8; color as (H, W, 3) uint8.
Floats in [0, 1] are scaled on write.
"""

from __future__ import annotations

import numpy as np

__all__ = ["save_pgm", "load_pgm", "save_ppm", "load_ppm", "to_u8"]


def to_u8(arr):
    """Clip-and-scale floats in [0,1] to uint8; pass uint8 through."""
    arr = np.asarray(arr)
    if arr.dtype == np.uint8:
        return arr
    return (np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def _write(path, magic, arr):
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"{magic}\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def _read_header(fh, magic):
    if fh.readline().strip() != magic:
        raise ValueError(f"not a {magic.decode()} file")
    fields = []
    while len(fields) < 3:
        line = fh.readline()
        if not line:
            raise ValueError("truncated header")
        text = line.split(b"#", 1)[0]
        fields.extend(int(tok) for tok in text.split())
    w, h, maxval = fields[:3]
    if maxval != 255:
        raise ValueError(f"only maxval 255 supported, got {maxval}")
    return w, h


def save_pgm(path, arr):
    arr = to_u8(arr)
    if arr.ndim != 2:
        raise ValueError(f"grayscale image must be 2-d, got shape {arr.shape}")
    _write(path, "P5", arr)


def load_pgm(path):
    with open(path, "rb") as fh:
        w, h = _read_header(fh, b"P5")
        data = np.frombuffer(fh.read(w * h), dtype=np.uint8)
    return data.reshape(h, w)


def save_ppm(path, arr):
    arr = to_u8(arr)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"color image must be (H, W, 3), got shape {arr.shape}")
    _write(path, "P6", arr)


def load_ppm(path):
    with open(path, "rb") as fh:
        w, h = _read_header(fh, b"P6")
        data = np.frombuffer(fh.read(w * h * 3), dtype=np.uint8)
    return data.reshape(h, w, 3)
