"""Portable-pixmap image output for maps."""
from __future__ import annotations

import numpy as np
from PIL import Image


def write_ppm(path, rgb):
    """Save a ``(rows, cols, 3)`` uint8 array as a binary PPM."""
    Image.fromarray(np.asarray(rgb, dtype=np.uint8)).save(path, format="PPM")


def write_scalar_pgm(path, raster):
    """Greyscale PGM scaled to the raster's own min/max; nodata is black.

    The value range is written next to the image as ``<path>.range.txt``.
    Returns ``(lo, hi)``.
    """
    values = raster.depths
    valid = ~raster.nodata_mask
    img = np.zeros(values.shape, dtype=np.uint8)
    if valid.any():
        lo, hi = float(values[valid].min()), float(values[valid].max())
        span = hi - lo if hi > lo else 1.0
        img[valid] = np.clip(np.rint(1 + 254 * (values[valid] - lo) / span), 1, 255).astype(np.uint8)
    else:
        lo = hi = float("nan")
    Image.fromarray(img).save(path, format="PPM")
    with open(f"{path}.range.txt", "w", encoding="utf-8") as fh:
        fh.write(f"min {lo!r}\nmax {hi!r}\nblack = nodata; grey levels 1..255 map linearly to [min, max]\n")
    return lo, hi
