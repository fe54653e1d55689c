"""Assorted utility methods shared by the pipeline stages."""

import os
import tempfile
from contextlib import contextmanager
from typing import Tuple

import colour
import numpy as np


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent, reproducible stream for a (seed, key...) pair."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF] + [int(k) & 0xFFFFFFFF for k in keys])


def bilinear_sample(grid: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample grid at continuous (x, y); NaN if a contributing neighbour is NaN or outside."""
    height, width = grid.shape
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x0 = np.floor(x)
    y0 = np.floor(y)
    ax = x - x0
    ay = y - y0
    x1 = np.where(ax > 0, x0 + 1, x0)
    y1 = np.where(ay > 0, y0 + 1, y0)
    inside = (x0 >= 0) & (y0 >= 0) & (x1 <= width - 1) & (y1 <= height - 1)
    xi0 = np.clip(x0, 0, width - 1).astype(int)
    xi1 = np.clip(x1, 0, width - 1).astype(int)
    yi0 = np.clip(y0, 0, height - 1).astype(int)
    yi1 = np.clip(y1, 0, height - 1).astype(int)
    top = grid[yi0, xi0] * (1 - ax) + np.where(ax > 0, grid[yi0, xi1] * ax, 0.0)
    bottom = grid[yi1, xi0] * (1 - ax) + np.where(ax > 0, grid[yi1, xi1] * ax, 0.0)
    value = top * (1 - ay) + np.where(ay > 0, bottom * ay, 0.0)
    return np.where(inside, value, np.nan)


@contextmanager
def atomic_write(path: str, mode: str = "wb"):
    """Write to a temporary sibling, then rename over path."""
    dir_name = os.path.dirname(os.path.abspath(path))
    os.makedirs(dir_name, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=".tmp-", dir=dir_name)
    try:
        with os.fdopen(fd, mode) as f:
            yield f
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise


def interpolate_color(color1: str, color2: str, ratio: float) -> str:
    if ratio < 0:
        ratio = 0
    elif ratio > 1:
        ratio = 1
    c1 = colour.Color(color1)
    c2 = colour.Color(color2)
    c3 = colour.Color(
        hue=((1 - ratio) * c1.hue + ratio * c2.hue),
        saturation=((1 - ratio) * c1.saturation + ratio * c2.saturation),
        luminance=((1 - ratio) * c1.luminance + ratio * c2.luminance),
    )
    return c3.hex_l


def hex_to_rgb(color: str) -> Tuple[int, int, int]:
    r, g, b = colour.Color(color).rgb
    return int(round(r * 255)), int(round(g * 255)), int(round(b * 255))
