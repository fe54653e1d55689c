"""Optical flow and scene flow fields: containers, baseline estimation and composition."""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import ndimage

from .exceptions import ParameterError, ShapeError
from .geometry import CameraIntrinsics, back_project_grid, scene_flow_grid
from .utils import bilinear_sample

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FrameGray:
    """Grayscale frame, intensity in [0, 1], shape (height, width)."""

    intensity: np.ndarray

    @property
    def width(self) -> int:
        return self.intensity.shape[1]

    @property
    def height(self) -> int:
        return self.intensity.shape[0]


@dataclass(frozen=True)
class DepthFrame:
    """Depth in meters, NaN where the sensor returned nothing."""

    meters: np.ndarray

    @property
    def width(self) -> int:
        return self.meters.shape[1]

    @property
    def height(self) -> int:
        return self.meters.shape[0]


@dataclass(frozen=True)
class FlowField2D:
    """Per-pixel displacement (pixels/frame) from one frame to the next."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise ShapeError(f"u {self.u.shape} and v {self.v.shape} grids differ")

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @classmethod
    def zeros(cls, width: int, height: int) -> "FlowField2D":
        return cls(np.zeros((height, width)), np.zeros((height, width)))


@dataclass(frozen=True)
class SceneFlowField:
    """Per-pixel 3D displacement (meters/frame); NaN triples are invalid pixels."""

    dX: np.ndarray
    dY: np.ndarray
    dZ: np.ndarray

    def __post_init__(self):
        if not (self.dX.shape == self.dY.shape == self.dZ.shape) or self.dX.ndim != 2:
            raise ShapeError(
                f"Scene flow grids differ: {self.dX.shape}, {self.dY.shape}, {self.dZ.shape}"
            )

    @property
    def width(self) -> int:
        return self.dX.shape[1]

    @property
    def height(self) -> int:
        return self.dX.shape[0]

    def valid(self) -> np.ndarray:
        return np.isfinite(self.dX) & np.isfinite(self.dY) & np.isfinite(self.dZ)

    def stacked(self) -> np.ndarray:
        """(height, width, 3) view used by samplers."""
        return np.stack([self.dX, self.dY, self.dZ], axis=-1)

    @classmethod
    def zeros(cls, width: int, height: int) -> "SceneFlowField":
        z = np.zeros((height, width))
        return cls(z, z.copy(), z.copy())


@dataclass
class FlowConfig:
    """Baseline coarse-to-fine estimator settings.

    Attributes:
        levels: Pyramid levels (coarsest level is at least 8 px on its short side).
        window: Side of the square least-squares window.
        warps: Warp iterations per level.
        regularization: Tikhonov term added to the 2x2 normal equations.
        max_range_flow: |w| above this (m/frame) is treated as a depth discontinuity.
    """

    levels: int = 3
    window: int = 5
    warps: int = 3
    regularization: float = 1e-4
    max_range_flow: float = 0.3

    def __post_init__(self):
        if self.levels < 1 or self.window < 3 or self.window % 2 == 0 or self.warps < 1:
            raise ParameterError(f"Bad flow config: {self}")


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: {a.shape} vs {b.shape}")


def _pyramid(image: np.ndarray, levels: int):
    pyramid = [image]
    for _ in range(1, levels):
        smaller = ndimage.gaussian_filter(pyramid[-1], 1.0)[::2, ::2]
        if min(smaller.shape) < 8:
            break
        pyramid.append(smaller)
    return pyramid


def _upsample(field: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    rows, cols = np.mgrid[0 : shape[0], 0 : shape[1]].astype(float)
    return 2.0 * ndimage.map_coordinates(
        field, [rows / 2.0, cols / 2.0], order=1, mode="nearest"
    )


def _box(a: np.ndarray, size: int) -> np.ndarray:
    return ndimage.uniform_filter(a, size, mode="nearest")


def _refine(I0: np.ndarray, I1: np.ndarray, u: np.ndarray, v: np.ndarray, cfg: FlowConfig):
    rows, cols = np.mgrid[0 : I0.shape[0], 0 : I0.shape[1]].astype(float)
    gy0, gx0 = np.gradient(I0)
    for _ in range(cfg.warps):
        warped = ndimage.map_coordinates(I1, [rows + v, cols + u], order=1, mode="nearest")
        gy1, gx1 = np.gradient(warped)
        Ix = 0.5 * (gx0 + gx1)
        Iy = 0.5 * (gy0 + gy1)
        It = warped - I0
        Sxx = _box(Ix * Ix, cfg.window) + cfg.regularization
        Syy = _box(Iy * Iy, cfg.window) + cfg.regularization
        Sxy = _box(Ix * Iy, cfg.window)
        Sxt = _box(Ix * It, cfg.window)
        Syt = _box(Iy * It, cfg.window)
        det = Sxx * Syy - Sxy * Sxy
        du = (-Syy * Sxt + Sxy * Syt) / det
        dv = (Sxy * Sxt - Sxx * Syt) / det
        u = u + du
        v = v + dv
    return u, v


def estimate_flow_2d(prev: FrameGray, next: FrameGray, cfg: FlowConfig = None) -> FlowField2D:
    """Dense coarse-to-fine local least-squares flow, the stand-in for Farneback.

    Deterministic; constant frames yield an exactly zero field because the
    temporal derivative vanishes everywhere.
    """
    cfg = cfg or FlowConfig()
    _check_same_shape(prev.intensity, next.intensity, "Frame sizes differ")
    if min(prev.intensity.shape) < 16:
        raise ShapeError(f"Frames must be at least 16x16, got {prev.intensity.shape}")
    pyr0 = _pyramid(prev.intensity.astype(float), cfg.levels)
    pyr1 = _pyramid(next.intensity.astype(float), cfg.levels)
    u = np.zeros_like(pyr0[-1])
    v = np.zeros_like(pyr0[-1])
    for level in range(len(pyr0) - 1, -1, -1):
        if u.shape != pyr0[level].shape:
            u = _upsample(u, pyr0[level].shape)
            v = _upsample(v, pyr0[level].shape)
        u, v = _refine(pyr0[level], pyr1[level], u, v, cfg)
    return FlowField2D(u, v)


def range_flow_from_depth(
    prev_depth: DepthFrame, next_depth: DepthFrame, flow: FlowField2D, cfg: FlowConfig = None
) -> np.ndarray:
    """w(x, y) = nextD(x + u, y + v) - prevD(x, y), NaN where either side is invalid."""
    cfg = cfg or FlowConfig()
    _check_same_shape(prev_depth.meters, next_depth.meters, "Depth sizes differ")
    _check_same_shape(prev_depth.meters, flow.u, "Depth and flow sizes differ")
    rows, cols = np.mgrid[0 : flow.height, 0 : flow.width].astype(float)
    sampled = bilinear_sample(next_depth.meters, cols + flow.u, rows + flow.v)
    w = sampled - prev_depth.meters
    w[~(np.abs(w) <= cfg.max_range_flow)] = np.nan
    return w


def compose_scene_flow(
    flow: FlowField2D, w: np.ndarray, prev_depth: DepthFrame, k: CameraIntrinsics
) -> SceneFlowField:
    """Lift (u, v, w) to metric scene flow at every pixel of the previous frame."""
    _check_same_shape(flow.u, w, "Flow and range flow sizes differ")
    rows, cols = np.mgrid[0 : flow.height, 0 : flow.width].astype(float)
    X, Y, Z = back_project_grid(cols, rows, prev_depth.meters, k)
    dX, dY, dZ = scene_flow_grid(flow.u, flow.v, w, X, Y, Z, k)
    invalid = ~(np.isfinite(dX) & np.isfinite(dY) & np.isfinite(dZ))
    for channel in (dX, dY, dZ):
        channel[invalid] = np.nan
    return SceneFlowField(dX, dY, dZ)


def estimate_scene_flow(
    prev: FrameGray,
    next: FrameGray,
    prev_depth: DepthFrame,
    next_depth: DepthFrame,
    k: CameraIntrinsics,
    cfg: FlowConfig = None,
    flow: FlowField2D = None,
) -> SceneFlowField:
    """Fallback when no scene flow is on disk: 2D flow + range flow + metric mapping."""
    cfg = cfg or FlowConfig()
    if flow is None:
        flow = estimate_flow_2d(prev, next, cfg)
    w = range_flow_from_depth(prev_depth, next_depth, flow, cfg)
    return compose_scene_flow(flow, w, prev_depth, k)
