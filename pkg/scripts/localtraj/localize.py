"""Skeleton joints and the assignment of trajectories to their nearest joint."""

import json
import logging
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .exceptions import NoJointsError, NoOverlapError, ParameterError, VideoLoadError

log = logging.getLogger(__name__)

REJECTED = -1
NORMALIZATIONS = ("diagonal", "none")


@dataclass
class LocalizeConfig:
    """Rejection thresholds on the trajectory-joint distance.

    Attributes:
        distance_threshold: Largest accepted distance for 2D trajectories, in
            frame-diagonal units when normalization is "diagonal".
        distance_threshold_3d: Largest accepted distance for 3D trajectories (m*m).
        normalization: "diagonal" divides pixel coordinates by the frame diagonal,
            "none" keeps pixels.
    """

    distance_threshold: float = 0.02
    distance_threshold_3d: float = 0.05
    normalization: str = "diagonal"

    def __post_init__(self):
        if not (self.distance_threshold > 0 and self.distance_threshold_3d > 0):
            raise ParameterError("Distance thresholds must be positive")
        if self.normalization not in NORMALIZATIONS:
            raise ParameterError(
                f"Unknown normalization {self.normalization!r}, expected one of {NORMALIZATIONS}"
            )


class SkeletonJoint(NamedTuple):
    id: int
    x: float
    y: float
    X: float
    Y: float
    Z: float


@dataclass(frozen=True)
class Skeleton:
    frame: int
    joints: Tuple[SkeletonJoint, ...]

    @property
    def J(self) -> int:
        return len(self.joints)


@dataclass(frozen=True, eq=False)
class JointTrack:
    joint_id: int
    positions: np.ndarray  # (frames, 2) pixels or (frames, 3) meters


@dataclass(eq=False)
class ClusterAssignment:
    """Joint id (or REJECTED) and the minimal distance for every trajectory."""

    joints: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return len(self.joints)

    def __getitem__(self, m: int) -> int:
        return int(self.joints[m])

    @property
    def rejected(self) -> np.ndarray:
        return self.joints == REJECTED


def parse_skeleton(record: dict) -> Skeleton:
    joints = tuple(
        SkeletonJoint(
            int(j["id"]),
            float(j["x"]),
            float(j["y"]),
            float(j["X"]),
            float(j["Y"]),
            float(j["Z"]),
        )
        for j in record["joints"]
    )
    if not all(math.isfinite(c) for joint in joints for c in joint[1:]):
        raise ValueError(f"Non-finite joint coordinate in frame {record['frame']}")
    return Skeleton(int(record["frame"]), joints)


def read_skeletons(path: str) -> List[Skeleton]:
    """One JSON object per line: {frame, joints: [{id, x, y, X, Y, Z}]}."""
    skeletons = []
    try:
        with open(path) as f:
            for line in f:
                if line.strip():
                    skeletons.append(parse_skeleton(json.loads(line)))
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise VideoLoadError(f"Cannot read skeletons from {path}") from e
    skeletons.sort(key=lambda s: s.frame)
    counts = {s.J for s in skeletons}
    if len(counts) > 1:
        raise VideoLoadError(f"{path}: joint count varies across frames {sorted(counts)}")
    return skeletons


def write_skeletons(path: str, records: Sequence[dict]):
    with open(path, "w") as f:
        for record in records:
            f.write(json.dumps(record) + "\n")


def joint_tracks(skeletons: Sequence[Skeleton], mode: str = "2d") -> List[JointTrack]:
    """Per-joint position sequences ordered by joint id; 2D uses pixels, 3D meters."""
    if not skeletons or not skeletons[0].joints:
        raise NoJointsError("Skeleton sequence has no joints")
    ids = sorted(j.id for j in skeletons[0].joints)
    tracks = []
    for joint_id in ids:
        positions = []
        for skeleton in skeletons:
            joint = next((j for j in skeleton.joints if j.id == joint_id), None)
            if joint is None:
                raise VideoLoadError(f"Joint {joint_id} missing in frame {skeleton.frame}")
            positions.append((joint.x, joint.y) if mode == "2d" else (joint.X, joint.Y, joint.Z))
        tracks.append(JointTrack(joint_id, np.array(positions, dtype=float)))
    return tracks


def _overlap(t0: int, length: int, frames: int) -> Tuple[int, int]:
    lo = max(t0, 0)
    hi = min(t0 + length, frames)
    if hi <= lo:
        raise NoOverlapError(
            f"Trajectory frames [{t0}, {t0 + length - 1}] miss joint frames [0, {frames - 1}]"
        )
    return lo, hi


def _distance_rows(points: np.ndarray, t0: int, joints: np.ndarray):
    """Distance d and mean spatial distance to each of the (J, frames, dim) joint tracks."""
    lo, hi = _overlap(t0, len(points), joints.shape[1])
    P = points[lo - t0 : hi - t0]
    Q = joints[:, lo:hi]
    s = np.linalg.norm(P[None] - Q, axis=2)
    r = np.linalg.norm(np.diff(P, axis=0)[None] - np.diff(Q, axis=1), axis=2)
    L = max(len(P) - 1, 1)
    return s.max(axis=1) * r.sum(axis=1) / L, s.mean(axis=1)


def traj_joint_distance(points: np.ndarray, t0: int, track: JointTrack) -> float:
    """d = max_t s_t * (1/L) sum_t r_t over the frames both tracks cover.

    s_t is the distance between the two positions at frame t, r_t the norm of
    the difference of their frame-to-frame steps; the first overlapping frame
    has no step and contributes no r.
    """
    d, _ = _distance_rows(np.asarray(points, dtype=float), t0, track.positions[None])
    return float(d[0])


def affinity(points: np.ndarray, t0: int, track: JointTrack) -> float:
    return math.exp(-traj_joint_distance(points, t0, track))


def _scale(trajectories: Sequence, cfg: LocalizeConfig, frame_size) -> Tuple[float, float]:
    """Coordinate scale and threshold for the trajectories' kind."""
    if trajectories and trajectories[0].kind == "3D":
        return 1.0, cfg.distance_threshold_3d
    if cfg.normalization == "none":
        return 1.0, cfg.distance_threshold
    if frame_size is None:
        raise ParameterError("Diagonal normalization needs the frame size")
    width, height = frame_size
    return 1.0 / math.hypot(width, height), cfg.distance_threshold


def assign(
    trajectories: Sequence,
    tracks: Sequence[JointTrack],
    cfg: LocalizeConfig = None,
    frame_size: Optional[Tuple[int, int]] = None,
) -> ClusterAssignment:
    """Membership of every trajectory: the joint with minimal distance, or REJECTED.

    Ties on the distance go to the smaller mean spatial distance, then to the
    lower joint id.
    """
    cfg = cfg or LocalizeConfig()
    if not tracks:
        raise NoJointsError("Cannot localize trajectories without joints")
    scale, threshold = _scale(trajectories, cfg, frame_size)
    ids = np.array([t.joint_id for t in tracks])
    joints = np.stack([t.positions for t in tracks]) * scale
    assigned = np.full(len(trajectories), REJECTED, dtype=np.int32)
    distances = np.zeros(len(trajectories))
    for m, traj in enumerate(trajectories):
        d, mean_s = _distance_rows(np.asarray(traj.points, dtype=float) * scale, traj.t0, joints)
        best = np.lexsort((ids, mean_s, d))[0]
        distances[m] = d[best]
        if d[best] <= threshold:
            assigned[m] = ids[best]
    rejected = int(np.sum(assigned == REJECTED))
    log.info(f"Localized {len(trajectories) - rejected} trajectories, rejected {rejected}")
    return ClusterAssignment(assigned, distances)
