"""Pinhole camera model: pixels with depth <-> 3D world points, and the scene-flow mapping."""

import json
import math
from dataclasses import dataclass
from typing import NamedTuple, Tuple

import numpy as np

from .exceptions import (
    BehindCameraError,
    InvalidDepthError,
    InvalidPointError,
    ParameterError,
)

# config defaults, only used when a dataset ships no intrinsics file
DEFAULT_FOCAL = 525.0


@dataclass(frozen=True)
class CameraIntrinsics:
    """Focal lengths and principal point of an ideal pinhole camera, all in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ParameterError(f"Focal lengths must be positive: {self.fx}, {self.fy}")
        if not (math.isfinite(self.cx) and math.isfinite(self.cy)):
            raise ParameterError(f"Principal point must be finite: {self.cx}, {self.cy}")

    @classmethod
    def default_for(cls, width: int, height: int) -> "CameraIntrinsics":
        return cls(DEFAULT_FOCAL, DEFAULT_FOCAL, (width - 1) / 2, (height - 1) / 2)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}


class Point3(NamedTuple):
    """A world point in meters."""

    X: float
    Y: float
    Z: float

    def __add__(self, other: "Point3") -> "Point3":
        return Point3(self.X + other[0], self.Y + other[1], self.Z + other[2])

    def __sub__(self, other: "Point3") -> "Point3":
        return Point3(self.X - other[0], self.Y - other[1], self.Z - other[2])


class PixelDepth(NamedTuple):
    """Continuous pixel coordinates plus a depth in meters."""

    x: float
    y: float
    D: float


def back_project(p: PixelDepth, k: CameraIntrinsics) -> Point3:
    if not p.D > 0 or not math.isfinite(p.D):
        raise InvalidDepthError(f"Cannot back-project pixel ({p.x}, {p.y}) with depth {p.D}")
    return Point3((p.x - k.cx) * p.D / k.fx, (p.y - k.cy) * p.D / k.fy, p.D)


def project(q: Point3, k: CameraIntrinsics) -> PixelDepth:
    if not q.Z > 0:
        raise BehindCameraError(f"Point {tuple(q)} is behind the camera")
    return PixelDepth(q.X * k.fx / q.Z + k.cx, q.Y * k.fy / q.Z + k.cy, q.Z)


def motion_field_matrix(q: Point3, k: CameraIntrinsics) -> np.ndarray:
    """3x3 matrix M with Omega = M (u, v, w)^T, evaluated at the pre-motion point q."""
    if not q.Z > 0:
        raise InvalidPointError(f"Scene flow is undefined at {tuple(q)}")
    return np.array(
        [
            [q.Z / k.fx, 0.0, q.X / q.Z],
            [0.0, q.Z / k.fy, q.Y / q.Z],
            [0.0, 0.0, 1.0],
        ]
    )


def scene_flow_from_motion_field(
    s: Tuple[float, float, float], q: Point3, k: CameraIntrinsics
) -> Tuple[float, float, float]:
    """Map a depth motion field sample (u, v in px/frame, w in m/frame) to meters."""
    dX, dY, dZ = motion_field_matrix(q, k) @ np.asarray(s, dtype=float)
    return float(dX), float(dY), float(dZ)


# vectorized variants, NaN marks invalid samples instead of raising


def back_project_grid(
    x: np.ndarray, y: np.ndarray, depth: np.ndarray, k: CameraIntrinsics
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    depth = np.where(depth > 0, depth, np.nan)
    return (x - k.cx) * depth / k.fx, (y - k.cy) * depth / k.fy, depth


def project_grid(
    X: np.ndarray, Y: np.ndarray, Z: np.ndarray, k: CameraIntrinsics
) -> Tuple[np.ndarray, np.ndarray]:
    Z = np.where(Z > 0, Z, np.nan)
    return X * k.fx / Z + k.cx, Y * k.fy / Z + k.cy


def scene_flow_grid(
    u: np.ndarray,
    v: np.ndarray,
    w: np.ndarray,
    X: np.ndarray,
    Y: np.ndarray,
    Z: np.ndarray,
    k: CameraIntrinsics,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    Z = np.where(Z > 0, Z, np.nan)
    return Z / k.fx * u + X / Z * w, Z / k.fy * v + Y / Z * w, w + 0.0 * Z


def read_intrinsics(path: str) -> CameraIntrinsics:
    try:
        with open(path) as f:
            data = json.load(f)
        return CameraIntrinsics(
            float(data["fx"]), float(data["fy"]), float(data["cx"]), float(data["cy"])
        )
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise ParameterError(f"Cannot read intrinsics from {path}") from e


def write_intrinsics(path: str, k: CameraIntrinsics):
    with open(path, "w") as f:
        json.dump(k.to_dict(), f, indent=2)
