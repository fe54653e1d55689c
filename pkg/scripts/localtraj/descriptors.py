"""Trajectory-aligned descriptors over 32x32xL volumes split into 2x2x3 cells.

2D kinds: TSD, HOG, HOF, MBH. 3D kinds: TSD3D, HSF, MBH3D.

Every kind except the trajectory shapes works the same way: each frame is
turned into a per-pixel vote array (height, width, bins), the volume around
the trajectory point is cropped from it, and votes are summed per cell.
Crops are read from a summed-area table so that all trajectories touching a
frame are handled in one vectorized pass.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .exceptions import ParameterError, ShapeError
from .flow import FlowField2D, FrameGray, SceneFlowField

log = logging.getLogger(__name__)

KINDS_2D = ("TSD", "HOG", "HOF", "MBH")
KINDS_3D = ("TSD3D", "HSF", "MBH3D")
KIND_TAGS = {"TSD": 0, "HOG": 1, "HOF": 2, "MBH": 3, "TSD3D": 4, "HSF": 5, "MBH3D": 6}
TAG_KINDS = {tag: kind for kind, tag in KIND_TAGS.items()}

ORIENTATION_BINS = 8
HOF_ZERO_THRESHOLD = 0.25  # px/frame
HSF_ZERO_THRESHOLD = 1e-3  # m/frame
MBH3D_ZERO_THRESHOLD = 1e-4  # (m/frame)/px


@dataclass(frozen=True)
class VolumeSpec:
    """Spatio-temporal volume around a trajectory.

    Attributes:
        size: Side of the square window in pixels.
        cells_x: Horizontal cells.
        cells_y: Vertical cells.
        cells_t: Temporal cells.
        L: Frames covered, the trajectory length.
    """

    size: int = 32
    cells_x: int = 2
    cells_y: int = 2
    cells_t: int = 3
    L: int = 15

    def __post_init__(self):
        if self.size % self.cells_x or self.size % self.cells_y:
            raise ParameterError(f"Volume size {self.size} not divisible by its cells")
        if self.L < 3 or self.cells_t < 1 or self.cells_t > self.L:
            raise ParameterError(f"Bad temporal layout: L={self.L}, cells_t={self.cells_t}")

    @property
    def cells(self) -> int:
        return self.cells_x * self.cells_y * self.cells_t

    def temporal_cell(self) -> np.ndarray:
        """Cell index of each of the L frame offsets."""
        index = np.zeros(self.L, dtype=int)
        for cell, chunk in enumerate(np.array_split(np.arange(self.L), self.cells_t)):
            index[chunk] = cell
        return index


def descriptor_dim(kind: str, volume: VolumeSpec = VolumeSpec()) -> int:
    cells = volume.cells
    dims = {
        "TSD": 2 * volume.L,
        "HOG": cells * ORIENTATION_BINS,
        "HOF": cells * (ORIENTATION_BINS + 1),
        "MBH": 2 * cells * ORIENTATION_BINS,
        "TSD3D": 3 * volume.L,
        "HSF": cells * (ORIENTATION_BINS + 1),
        "MBH3D": 3 * cells * (ORIENTATION_BINS + 1),
    }
    if kind not in dims:
        raise ParameterError(f"Unknown descriptor kind {kind!r}")
    return dims[kind]


@dataclass(frozen=True, eq=False)
class DescriptorBlock:
    kind: str
    values: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.values)


# per-pixel votes


def _orientation_votes(gx: np.ndarray, gy: np.ndarray, signed: bool, weights=None) -> np.ndarray:
    """Magnitude-weighted orientation votes, linearly shared between the two nearest bin centres."""
    span = 2 * math.pi if signed else math.pi
    magnitude = np.hypot(gx, gy) if weights is None else weights
    position = np.mod(np.arctan2(gy, gx), span) / (span / ORIENTATION_BINS)
    low = np.floor(position)
    frac = position - low
    low = low.astype(int) % ORIENTATION_BINS
    high = (low + 1) % ORIENTATION_BINS
    votes = np.zeros(gx.shape + (ORIENTATION_BINS,))
    for b in range(ORIENTATION_BINS):
        votes[..., b] = magnitude * ((low == b) * (1 - frac) + (high == b) * frac)
    return votes


def _with_zero_bin(gx: np.ndarray, gy: np.ndarray, threshold: float) -> np.ndarray:
    magnitude = np.hypot(gx, gy)
    moving = magnitude >= threshold
    votes = np.zeros(gx.shape + (ORIENTATION_BINS + 1,))
    votes[..., :ORIENTATION_BINS] = _orientation_votes(gx, gy, True, np.where(moving, magnitude, 0.0))
    votes[..., ORIENTATION_BINS] = ~moving
    return votes


def hog_votes(frame: FrameGray) -> np.ndarray:
    gy, gx = np.gradient(frame.intensity.astype(float))
    return _orientation_votes(gx, gy, signed=False)


def hof_votes(flow: FlowField2D) -> np.ndarray:
    return _with_zero_bin(flow.u, flow.v, HOF_ZERO_THRESHOLD)


def mbh_votes(flow: FlowField2D) -> np.ndarray:
    channels = []
    for component in (flow.u, flow.v):
        gy, gx = np.gradient(component)
        channels.append(_orientation_votes(gx, gy, signed=True))
    return np.concatenate(channels, axis=-1)


def hsf_votes(scene_flow: SceneFlowField) -> np.ndarray:
    """Azimuth quadrant x elevation sign bins plus a zero-motion bin; invalid pixels cast no vote."""
    valid = scene_flow.valid()
    dX = np.where(valid, scene_flow.dX, 0.0)
    dY = np.where(valid, scene_flow.dY, 0.0)
    dZ = np.where(valid, scene_flow.dZ, 0.0)
    lateral = np.hypot(dX, dY)
    magnitude = np.sqrt(lateral ** 2 + dZ ** 2)
    azimuth = np.arctan2(dY, dX)
    elevation = np.arctan2(dZ, lateral)
    quadrant = np.floor(np.mod(azimuth + math.pi / 4, 2 * math.pi) / (math.pi / 2)).astype(int) % 4
    index = 2 * quadrant + (elevation < 0)
    moving = valid & (magnitude >= HSF_ZERO_THRESHOLD)
    votes = np.zeros(dX.shape + (ORIENTATION_BINS + 1,))
    rows, cols = np.nonzero(moving)
    votes[rows, cols, index[moving]] = magnitude[moving]
    votes[..., ORIENTATION_BINS] = valid & ~moving
    return votes


def mbh3d_votes(scene_flow: SceneFlowField) -> np.ndarray:
    channels = []
    for component in (scene_flow.dX, scene_flow.dY, scene_flow.dZ):
        gy, gx = np.gradient(component)
        usable = np.isfinite(gx) & np.isfinite(gy)
        gx = np.where(usable, gx, 0.0)
        gy = np.where(usable, gy, 0.0)
        votes = _with_zero_bin(gx, gy, MBH3D_ZERO_THRESHOLD)
        votes[~usable] = 0.0
        channels.append(votes)
    return np.concatenate(channels, axis=-1)


# cell accumulation


def _integral(votes: np.ndarray, pad: int) -> np.ndarray:
    padded = np.pad(votes, ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    table = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1, votes.shape[2]))
    table[1:, 1:] = padded.cumsum(axis=0).cumsum(axis=1)
    return table


def _accumulate(
    vote_frames: Iterable[np.ndarray],
    tracks: np.ndarray,
    starts: np.ndarray,
    volume: VolumeSpec,
) -> np.ndarray:
    """Sum votes per cell; returns (M, cells_t, cells_y, cells_x, bins).

    vote_frames yields the vote array of frame 0, 1, ...; tracks holds pixel
    positions (M, L + 1, 2) and the point of frame t0 + i is tracks[:, i].
    """
    half = volume.size // 2
    cell_h = volume.size // volume.cells_y
    cell_w = volume.size // volume.cells_x
    temporal = volume.temporal_cell()
    out = None
    last = int(starts.max()) + volume.L if len(starts) else 0
    for frame_index, votes in enumerate(vote_frames):
        if frame_index >= last:
            break
        if out is None:
            out = np.zeros(
                (len(tracks), volume.cells_t, volume.cells_y, volume.cells_x, votes.shape[2])
            )
        offsets = frame_index - starts
        sel = np.nonzero((offsets >= 0) & (offsets < volume.L))[0]
        if not len(sel):
            continue
        height, width = votes.shape[:2]
        table = _integral(votes, half)
        points = tracks[sel, offsets[sel]]
        xs = np.clip(np.floor(points[:, 0] + 0.5).astype(int), 0, width - 1)
        ys = np.clip(np.floor(points[:, 1] + 0.5).astype(int), 0, height - 1)
        for iy in range(volume.cells_y):
            r0 = ys + iy * cell_h
            r1 = r0 + cell_h
            for ix in range(volume.cells_x):
                c0 = xs + ix * cell_w
                c1 = c0 + cell_w
                block = table[r1, c1] - table[r0, c1] - table[r1, c0] + table[r0, c0]
                np.add.at(out, (sel, temporal[offsets[sel]], iy, ix), block)
    if out is None:
        raise ShapeError("No frames to describe")
    return out


def _normalize(cells: np.ndarray, order: int) -> np.ndarray:
    if order == 2:
        norm = np.sqrt((cells ** 2).sum(axis=-1, keepdims=True))
    else:
        norm = np.abs(cells).sum(axis=-1, keepdims=True)
    return np.where(norm > 0, cells / np.where(norm > 0, norm, 1.0), 0.0)


def _split_normalize(cells: np.ndarray, parts: int, order: int) -> np.ndarray:
    """Normalize each of `parts` equal channel groups per cell, then lay the groups out one after another."""
    groups = np.split(cells, parts, axis=-1)
    return np.concatenate(
        [_normalize(g, order).reshape(len(cells), -1) for g in groups], axis=1
    )


def _check_tracks(tracks: np.ndarray, volume: VolumeSpec):
    if tracks.ndim != 3 or tracks.shape[1] != volume.L + 1:
        raise ShapeError(f"Expected trajectories of {volume.L + 1} points, got {tracks.shape}")


def _stack(trajectories: Sequence, attr: str) -> Tuple[np.ndarray, np.ndarray]:
    tracks = np.array([getattr(t, attr) for t in trajectories], dtype=float)
    starts = np.array([t.t0 for t in trajectories], dtype=int)
    return tracks, starts


# trajectory shape


def trajectory_shape(points: np.ndarray) -> np.ndarray:
    """Steps divided by the summed step length; rows of zeros for motionless tracks.

    points may be (L + 1, dim) or batched (M, L + 1, dim).
    """
    points = np.asarray(points, dtype=float)
    batched = points.ndim == 3
    if not batched:
        points = points[None]
    steps = np.diff(points, axis=1)
    total = np.linalg.norm(steps, axis=2).sum(axis=1)
    values = np.zeros((len(points), steps.shape[1] * steps.shape[2]))
    moving = total > 0
    values[moving] = (steps[moving] / total[moving, None, None]).reshape(int(moving.sum()), -1)
    return values if batched else values[0]


def tsd(traj) -> DescriptorBlock:
    return DescriptorBlock("TSD", trajectory_shape(traj.points))


def tsd3d(traj) -> DescriptorBlock:
    return DescriptorBlock("TSD3D", trajectory_shape(traj.points))


# batched extraction


def describe_2d(
    frames: Sequence[FrameGray],
    flows: Sequence[FlowField2D],
    trajectories: Sequence,
    volume: VolumeSpec = VolumeSpec(),
    kinds: Sequence[str] = KINDS_2D,
) -> Dict[str, np.ndarray]:
    """Descriptor matrices (M, dim) per kind for 2D trajectories."""
    if not trajectories:
        return {kind: np.zeros((0, descriptor_dim(kind, volume))) for kind in kinds}
    tracks, starts = _stack(trajectories, "points")
    _check_tracks(tracks, volume)
    out = {}
    if "TSD" in kinds:
        out["TSD"] = trajectory_shape(tracks)
    if "HOG" in kinds:
        cells = _accumulate((hog_votes(f) for f in frames), tracks, starts, volume)
        out["HOG"] = _normalize(cells, 2).reshape(len(tracks), -1)
    if "HOF" in kinds or "MBH" in kinds:
        cells = _accumulate(
            (np.concatenate([hof_votes(f), mbh_votes(f)], axis=-1) for f in flows),
            tracks,
            starts,
            volume,
        )
        if "HOF" in kinds:
            out["HOF"] = _normalize(cells[..., : ORIENTATION_BINS + 1], 1).reshape(len(tracks), -1)
        if "MBH" in kinds:
            out["MBH"] = _split_normalize(cells[..., ORIENTATION_BINS + 1 :], 2, 2)
    return {kind: out[kind] for kind in kinds}


def describe_3d(
    scene_flows: Sequence[SceneFlowField],
    trajectories: Sequence,
    volume: VolumeSpec = VolumeSpec(),
    kinds: Sequence[str] = KINDS_3D,
) -> Dict[str, np.ndarray]:
    """Descriptor matrices (M, dim) per kind for 3D trajectories, volumes along the pixel track."""
    if not trajectories:
        return {kind: np.zeros((0, descriptor_dim(kind, volume))) for kind in kinds}
    tracks, starts = _stack(trajectories, "pixel_track")
    _check_tracks(tracks, volume)
    out = {}
    if "TSD3D" in kinds:
        out["TSD3D"] = trajectory_shape(np.array([t.points for t in trajectories], dtype=float))
    if "HSF" in kinds or "MBH3D" in kinds:
        cells = _accumulate(
            (np.concatenate([hsf_votes(f), mbh3d_votes(f)], axis=-1) for f in scene_flows),
            tracks,
            starts,
            volume,
        )
        if "HSF" in kinds:
            out["HSF"] = _normalize(cells[..., : ORIENTATION_BINS + 1], 1).reshape(len(tracks), -1)
        if "MBH3D" in kinds:
            out["MBH3D"] = _split_normalize(cells[..., ORIENTATION_BINS + 1 :], 3, 1)
    return {kind: out[kind] for kind in kinds}


def _single(kind: str, values: Dict[str, np.ndarray]) -> DescriptorBlock:
    return DescriptorBlock(kind, values[kind][0])


def hog(frames: Sequence[FrameGray], traj, spec: VolumeSpec = VolumeSpec()) -> DescriptorBlock:
    return _single("HOG", describe_2d(frames, [], [traj], spec, ("HOG",)))


def hof(flows: Sequence[FlowField2D], traj, spec: VolumeSpec = VolumeSpec()) -> DescriptorBlock:
    return _single("HOF", describe_2d([], flows, [traj], spec, ("HOF",)))


def mbh(flows: Sequence[FlowField2D], traj, spec: VolumeSpec = VolumeSpec()) -> DescriptorBlock:
    return _single("MBH", describe_2d([], flows, [traj], spec, ("MBH",)))


def hsf(scene_flows: Sequence[SceneFlowField], traj, spec: VolumeSpec = VolumeSpec()) -> DescriptorBlock:
    return _single("HSF", describe_3d(scene_flows, [traj], spec, ("HSF",)))


def mbh3d(scene_flows: Sequence[SceneFlowField], traj, spec: VolumeSpec = VolumeSpec()) -> DescriptorBlock:
    return _single("MBH3D", describe_3d(scene_flows, [traj], spec, ("MBH3D",)))


def kinds_for(mode: str) -> List[str]:
    if mode == "2d":
        return list(KINDS_2D)
    if mode == "3d":
        return list(KINDS_3D)
    raise ParameterError(f"Unknown mode {mode!r}, expected 2d or 3d")
