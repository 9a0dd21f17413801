"""PNG IO: 8-bit RGB, 16-bit millimetre depth (0 = invalid), 8-bit masks."""

from pathlib import Path

import numpy as np
from PIL import Image


def save_rgb(path, rgb):
    Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8)).save(path, format="PNG")


def load_rgb(path):
    with Image.open(path) as im:
        return np.array(im.convert("RGB"), dtype=np.uint8)


def depth_to_mm(depth_m):
    d = np.asarray(depth_m, dtype=np.float64)
    mm = np.floor(d * 1000.0 + 0.5)
    mm[(d <= 0) | ~np.isfinite(d) | (mm > 65535)] = 0
    return mm.astype(np.uint16)


def save_depth(path, depth_m):
    Image.fromarray(depth_to_mm(depth_m)).save(path, format="PNG")


def load_depth(path):
    with Image.open(path) as im:
        arr = np.array(im)
    if arr.dtype not in (np.uint16, np.int32, np.uint8) or arr.ndim != 2:
        raise ValueError(f"{path}: depth PNG must be single-channel 16-bit")
    return arr.astype(np.float64) / 1000.0


def save_mask(path, mask):
    m = np.asarray(mask)
    if m.dtype == bool:
        m = m.astype(np.uint8) * 255
    if m.max(initial=0) > 255 or m.min(initial=0) < 0:
        raise ValueError("mask ids must fit in 8 bits")
    Image.fromarray(np.ascontiguousarray(m, dtype=np.uint8)).save(path, format="PNG")


def load_mask(path):
    with Image.open(path) as im:
        return np.array(im.convert("L"), dtype=np.uint8)


def ensure_dir(path):
    Path(path).mkdir(parents=True, exist_ok=True)
    return Path(path)
