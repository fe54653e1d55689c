import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "scripts"))

from localtraj.geometry import CameraIntrinsics  # noqa: E402


@pytest.fixture
def intrinsics():
    return CameraIntrinsics(500.0, 500.0, 320.0, 240.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def smooth_texture(height, width, seed=0, sigma=3.0):
    """Gaussian-smoothed noise scaled to [0.1, 0.9]."""
    from scipy import ndimage

    noise = np.random.default_rng(seed).random((height, width))
    smooth = ndimage.gaussian_filter(noise, sigma, mode="wrap")
    smooth -= smooth.min()
    smooth /= smooth.max()
    return 0.1 + 0.8 * smooth
