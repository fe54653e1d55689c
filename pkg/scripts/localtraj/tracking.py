"""Dense point sampling and fixed-length trajectory tracking in 2D and 3D."""

import json
import logging
import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from .exceptions import OutOfBoundsError, ParameterError, SequenceTooShortError, ShapeError
from .flow import DepthFrame, FlowField2D, FrameGray, SceneFlowField
from .geometry import CameraIntrinsics, back_project_grid, project_grid

log = logging.getLogger(__name__)


@dataclass
class TrackerConfig:
    """Tracking and pruning settings.

    Attributes:
        L: Trajectory length in frames; a trajectory carries L + 1 points.
        grid_step: Sampling stride in pixels.
        median_radius: Half side of the advection median window.
        homogeneity_threshold: Minimum smaller eigenvalue of the gradient autocorrelation.
        min_variance: Minimum positional variance (px^2) of a 2D trajectory.
        max_step: Maximum single-frame displacement (px) of a 2D trajectory.
        min_variance_3d: Same as min_variance for 3D trajectories (m^2).
        max_step_3d: Same as max_step for 3D trajectories (m).
    """

    L: int = 15
    grid_step: int = 5
    median_radius: int = 1
    homogeneity_threshold: float = 1e-4
    min_variance: float = 1.0
    max_step: float = 20.0
    min_variance_3d: float = 1e-4
    max_step_3d: float = 0.5

    def __post_init__(self):
        if self.L < 2:
            raise ParameterError(f"Trajectory length must be >= 2, got {self.L}")
        if self.grid_step < 1 or self.median_radius < 0:
            raise ParameterError("grid_step must be >= 1 and median_radius >= 0")
        for name in ("homogeneity_threshold", "min_variance", "max_step"):
            if getattr(self, name) < 0 or getattr(self, name + "_3d", 0) < 0:
                raise ParameterError(f"{name} must be non-negative")


@dataclass(frozen=True, eq=False)
class Trajectory2D:
    t0: int
    points: np.ndarray  # (L + 1, 2) pixel (x, y)

    @property
    def kind(self) -> str:
        return "2D"

    @property
    def pixel_track(self) -> np.ndarray:
        return self.points


@dataclass(frozen=True, eq=False)
class Trajectory3D:
    t0: int
    points: np.ndarray  # (L + 1, 3) world (X, Y, Z) meters
    pixel_track: np.ndarray  # (L + 1, 2), project(points)

    @property
    def kind(self) -> str:
        return "3D"


Trajectory = Union[Trajectory2D, Trajectory3D]


def _round(a):
    return np.floor(np.asarray(a, dtype=float) + 0.5).astype(int)


def min_eigenvalue_map(frame: FrameGray) -> np.ndarray:
    """Smaller eigenvalue of the 3x3-averaged gradient autocorrelation matrix."""
    gy, gx = np.gradient(frame.intensity.astype(float))
    Sxx = ndimage.uniform_filter(gx * gx, 3, mode="reflect")
    Syy = ndimage.uniform_filter(gy * gy, 3, mode="reflect")
    Sxy = ndimage.uniform_filter(gx * gy, 3, mode="reflect")
    half_trace = 0.5 * (Sxx + Syy)
    return half_trace - np.sqrt(np.maximum(0.25 * (Sxx - Syy) ** 2 + Sxy ** 2, 0.0))


def sample_points(
    frame: FrameGray,
    cfg: TrackerConfig,
    occupied: Optional[np.ndarray] = None,
    valid: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Grid positions (x, y) worth tracking.

    Positions on homogeneous texture, within grid_step / 2 of a True pixel of
    `occupied`, or on a False pixel of `valid` (no depth) are skipped.
    """
    height, width = frame.intensity.shape
    offset = cfg.grid_step // 2
    ys, xs = np.mgrid[offset:height:cfg.grid_step, offset:width:cfg.grid_step]
    eig = min_eigenvalue_map(frame)[ys, xs]
    keep = (eig >= cfg.homogeneity_threshold) & (eig > 0)
    if occupied is not None:
        if occupied.shape != frame.intensity.shape:
            raise ShapeError(f"Occupancy mask {occupied.shape} vs frame {frame.intensity.shape}")
        near = ndimage.maximum_filter(occupied.astype(np.uint8), size=2 * offset + 1)
        keep &= near[ys, xs] == 0
    if valid is not None:
        keep &= valid[ys, xs]
    return np.stack([xs[keep], ys[keep]], axis=-1).astype(float)


def occupancy_mask(pixels: np.ndarray, width: int, height: int) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    if len(pixels):
        xi = np.clip(_round(pixels[:, 0]), 0, width - 1)
        yi = np.clip(_round(pixels[:, 1]), 0, height - 1)
        mask[yi, xi] = True
    return mask


def _window_median(channels: np.ndarray, cx: np.ndarray, cy: np.ndarray, r: int) -> np.ndarray:
    """Component-wise median over (2r+1)^2 windows, ignoring NaN and off-image pixels.

    channels is (C, H, W); returns (n, C), NaN where a window holds no usable pixel.
    """
    C, height, width = channels.shape
    padded = np.pad(channels, ((0, 0), (r, r), (r, r)), constant_values=np.nan)
    offsets = np.arange(-r, r + 1)
    outside = (cx < -r) | (cx > width - 1 + r) | (cy < -r) | (cy > height - 1 + r)
    rows = np.clip(cy[:, None] + offsets[None, :] + r, 0, height + 2 * r - 1)
    cols = np.clip(cx[:, None] + offsets[None, :] + r, 0, width + 2 * r - 1)
    values = padded[:, rows[:, :, None], cols[:, None, :]].reshape(C, len(cx), -1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        med = np.nanmedian(values, axis=2).T
    med[outside] = np.nan
    return med


def _inside(pixels: np.ndarray, width: int, height: int) -> np.ndarray:
    return (
        (pixels[:, 0] >= 0)
        & (pixels[:, 0] <= width - 1)
        & (pixels[:, 1] >= 0)
        & (pixels[:, 1] <= height - 1)
    )


def _advect_many_2d(points: np.ndarray, flow: FlowField2D, r: int) -> np.ndarray:
    xi = np.clip(_round(points[:, 0]), 0, flow.width - 1)
    yi = np.clip(_round(points[:, 1]), 0, flow.height - 1)
    naive = points + np.stack([flow.u[yi, xi], flow.v[yi, xi]], axis=-1)
    med = _window_median(
        np.stack([flow.u, flow.v]), _round(naive[:, 0]), _round(naive[:, 1]), r
    )
    return points + med


def _advect_many_3d(
    points: np.ndarray, pixels: np.ndarray, scene_flow: SceneFlowField, r: int
) -> np.ndarray:
    channels = scene_flow.stacked().transpose(2, 0, 1).copy()
    channels[:, ~scene_flow.valid()] = np.nan
    med = _window_median(channels, _round(pixels[:, 0]), _round(pixels[:, 1]), r)
    return points + med


def advect_2d(p, flow: FlowField2D, cfg: TrackerConfig) -> np.ndarray:
    """p + median flow around the naive next position p + flow(p)."""
    p = np.asarray(p, dtype=float).reshape(1, 2)
    if not _inside(p, flow.width, flow.height)[0]:
        raise OutOfBoundsError(f"Point {p[0]} is outside the {flow.width}x{flow.height} field")
    nxt = _advect_many_2d(p, flow, cfg.median_radius)[0]
    if not np.all(np.isfinite(nxt)):
        raise OutOfBoundsError(f"Median window of point {p[0]} lies outside the field")
    return nxt


def advect_3d(q, scene_flow: SceneFlowField, k: CameraIntrinsics, cfg: TrackerConfig) -> np.ndarray:
    """q + median scene flow over the valid pixels around project(q)."""
    q = np.asarray(q, dtype=float).reshape(1, 3)
    if not q[0, 2] > 0:
        raise OutOfBoundsError(f"Point {q[0]} is behind the camera")
    pixel = np.stack(project_grid(q[:, 0], q[:, 1], q[:, 2], k), axis=-1)
    if not _inside(pixel, scene_flow.width, scene_flow.height)[0]:
        raise OutOfBoundsError(f"Point {q[0]} projects outside the image")
    nxt = _advect_many_3d(q, pixel, scene_flow, cfg.median_radius)[0]
    if not np.all(np.isfinite(nxt)):
        raise OutOfBoundsError(f"No valid scene flow around point {q[0]}")
    return nxt


class Tracker:
    """Grow trajectories frame by frame, resampling free grid cells on every frame.

    Attributes:
        cfg: Tracking and pruning settings.
        intrinsics: Camera model, needed for 3D tracking only.
        pruned: Counts of trajectories dropped per reason during the last run.

    Methods:
        track_2d: Trajectories from optical flow fields.
        track_3d: Trajectories from scene flow fields and depth.
    """

    def __init__(self, cfg: TrackerConfig = None, intrinsics: CameraIntrinsics = None):
        self.cfg = cfg or TrackerConfig()
        self.intrinsics = intrinsics
        self.pruned = {}

    def _check_length(self, n_frames: int, n_fields: int) -> int:
        steps = min(n_frames - 1, n_fields)
        if steps < self.cfg.L:
            raise SequenceTooShortError(
                f"Need {self.cfg.L + 1} frames of fields, got {n_frames} frames / {n_fields} fields"
            )
        return steps

    def _finish(self, tracks: np.ndarray, max_step: float, min_variance: float) -> np.ndarray:
        """Boolean keep-mask for completed (n, L + 1, dim) tracks."""
        steps = np.linalg.norm(np.diff(tracks, axis=1), axis=2)
        sudden = np.any(steps > max_step, axis=1)
        static = tracks.var(axis=1).sum(axis=1) < min_variance
        self.pruned["sudden"] = self.pruned.get("sudden", 0) + int(np.sum(sudden))
        self.pruned["static"] = self.pruned.get("static", 0) + int(np.sum(static & ~sudden))
        return ~(sudden | static)

    def track_2d(
        self, frames: Sequence[FrameGray], flows: Sequence[FlowField2D]
    ) -> List[Trajectory2D]:
        L = self.cfg.L
        steps = self._check_length(len(frames), len(flows))
        width, height = frames[0].width, frames[0].height
        self.pruned = {}
        done = []
        # active tracks: start frame and (n, t, 2) position history, grouped by start frame
        active = []
        for t in range(steps + 1):
            if t + L <= steps:
                current = [hist[:, -1] for _, hist in active]
                mask = occupancy_mask(
                    np.concatenate(current) if current else np.zeros((0, 2)), width, height
                )
                new = sample_points(frames[t], self.cfg, mask)
                if len(new):
                    active.append((t, new[:, None, :]))
            if t == steps:
                break
            advanced = []
            for t0, hist in active:
                nxt = _advect_many_2d(hist[:, -1], flows[t], self.cfg.median_radius)
                ok = np.all(np.isfinite(nxt), axis=1) & _inside(nxt, width, height)
                self.pruned["bounds"] = self.pruned.get("bounds", 0) + int(np.sum(~ok))
                hist = np.concatenate([hist[ok], nxt[ok][:, None, :]], axis=1)
                if hist.shape[1] == L + 1:
                    keep = self._finish(hist, self.cfg.max_step, self.cfg.min_variance)
                    done.extend(Trajectory2D(t0, points) for points in hist[keep])
                elif len(hist):
                    advanced.append((t0, hist))
            active = advanced
        log.info(f"Tracked {len(done)} 2D trajectories, pruned {self.pruned}")
        return done

    def track_3d(
        self,
        frames: Sequence[FrameGray],
        depths: Sequence[DepthFrame],
        scene_flows: Sequence[SceneFlowField],
    ) -> List[Trajectory3D]:
        if self.intrinsics is None:
            raise ParameterError("3D tracking needs camera intrinsics")
        k = self.intrinsics
        L = self.cfg.L
        steps = self._check_length(min(len(frames), len(depths)), len(scene_flows))
        width, height = frames[0].width, frames[0].height
        self.pruned = {}
        done = []
        active = []
        for t in range(steps + 1):
            if t + L <= steps:
                current = [pix[:, -1] for _, _, pix in active]
                mask = occupancy_mask(
                    np.concatenate(current) if current else np.zeros((0, 2)), width, height
                )
                depth = depths[t].meters
                valid = np.isfinite(depth) & (depth > 0)
                new = sample_points(frames[t], self.cfg, mask, valid)
                if len(new):
                    xi, yi = new[:, 0].astype(int), new[:, 1].astype(int)
                    X, Y, Z = back_project_grid(new[:, 0], new[:, 1], depth[yi, xi], k)
                    world = np.stack([X, Y, Z], axis=-1)
                    active.append((t, world[:, None, :], new[:, None, :]))
            if t == steps:
                break
            advanced = []
            for t0, hist, pix in active:
                nxt = _advect_many_3d(hist[:, -1], pix[:, -1], scene_flows[t], self.cfg.median_radius)
                with np.errstate(invalid="ignore", divide="ignore"):
                    nxt_pix = np.stack(project_grid(nxt[:, 0], nxt[:, 1], nxt[:, 2], k), axis=-1)
                ok = (
                    np.all(np.isfinite(nxt), axis=1)
                    & (nxt[:, 2] > 0)
                    & np.all(np.isfinite(nxt_pix), axis=1)
                )
                ok &= _inside(np.nan_to_num(nxt_pix, nan=-1.0), width, height)
                self.pruned["bounds"] = self.pruned.get("bounds", 0) + int(np.sum(~ok))
                hist = np.concatenate([hist[ok], nxt[ok][:, None, :]], axis=1)
                pix = np.concatenate([pix[ok], nxt_pix[ok][:, None, :]], axis=1)
                if hist.shape[1] == L + 1:
                    keep = self._finish(hist, self.cfg.max_step_3d, self.cfg.min_variance_3d)
                    done.extend(
                        Trajectory3D(t0, points, pixels)
                        for points, pixels in zip(hist[keep], pix[keep])
                    )
                elif len(hist):
                    advanced.append((t0, hist, pix))
            active = advanced
        log.info(f"Tracked {len(done)} 3D trajectories, pruned {self.pruned}")
        return done


def track(
    frames: Sequence[FrameGray],
    fields: Sequence[Union[FlowField2D, SceneFlowField]],
    cfg: TrackerConfig = None,
    depths: Sequence[DepthFrame] = None,
    intrinsics: CameraIntrinsics = None,
) -> List[Trajectory]:
    """2D trajectories from optical flow, 3D trajectories from scene flow (plus depth)."""
    tracker = Tracker(cfg, intrinsics)
    if fields and isinstance(fields[0], SceneFlowField):
        if depths is None:
            raise ParameterError("3D tracking needs depth frames")
        return tracker.track_3d(frames, depths, fields)
    return tracker.track_2d(frames, fields)


def trajectory_records(video_id: str, trajectories: Sequence[Trajectory]):
    for t in trajectories:
        yield {
            "video": video_id,
            "t0": int(t.t0),
            "kind": t.kind,
            "coords": [float(c) for c in np.asarray(t.points).ravel()],
        }


def write_trajectory_dump(path: str, video_id: str, trajectories: Sequence[Trajectory]):
    """Line-delimited JSON, one trajectory per line; for debugging only."""
    with open(path, "w") as f:
        for record in trajectory_records(video_id, trajectories):
            f.write(json.dumps(record) + "\n")
