"""Per-video archives of trajectories, joint assignments and descriptor blocks."""

import logging
import struct
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .descriptors import KIND_TAGS, TAG_KINDS, VolumeSpec, descriptor_dim
from .exceptions import ArchiveFormatError, TruncatedFileError
from .utils import atomic_write

log = logging.getLogger(__name__)

ARCHIVE_MAGIC = b"TLAR"
ARCHIVE_VERSION = 1
ARCHIVE_SUFFIX = ".tlar"


@dataclass(eq=False)
class VideoFeatures:
    """Everything extraction produced for one video, one row per trajectory."""

    video_id: str
    mode: str
    joint_ids: np.ndarray
    t0: np.ndarray
    points: np.ndarray  # (M, L + 1, 2) pixels or (M, L + 1, 3) meters
    assignment: np.ndarray
    distances: np.ndarray
    descriptors: Dict[str, np.ndarray] = field(default_factory=dict)
    pixel_track: Optional[np.ndarray] = None

    @property
    def count(self) -> int:
        return len(self.t0)

    @classmethod
    def empty(cls, video_id: str, mode: str, joint_ids: Sequence[int], kinds: Sequence[str], volume: VolumeSpec):
        dim = 3 if mode == "3d" else 2
        return cls(
            video_id,
            mode,
            np.asarray(joint_ids, dtype=np.int32),
            np.zeros(0, dtype=np.int32),
            np.zeros((0, volume.L + 1, dim)),
            np.zeros(0, dtype=np.int32),
            np.zeros(0),
            {kind: np.zeros((0, descriptor_dim(kind, volume)), dtype=np.float32) for kind in kinds},
            np.zeros((0, volume.L + 1, 2)) if mode == "3d" else None,
        )


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, size: int) -> int:
        if self.offset + size > len(self.data):
            raise TruncatedFileError(f"{self.path}: truncated at byte {self.offset}")
        start = self.offset
        self.offset += size
        return start

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack_from(fmt, self.data, self.take(size))

    def array(self, dtype: str, shape) -> np.ndarray:
        dtype = np.dtype(dtype)
        count = int(np.prod(shape))
        start = self.take(count * dtype.itemsize)
        return np.frombuffer(self.data, dtype=dtype, count=count, offset=start).reshape(shape)


def write_archive(path: str, features: VideoFeatures):
    M = features.count
    points = features.points.shape[1]
    dim = features.points.shape[2]
    name = features.video_id.encode("utf-8")
    with atomic_write(path) as f:
        f.write(ARCHIVE_MAGIC + struct.pack("<I", ARCHIVE_VERSION))
        f.write(struct.pack("<H", len(name)) + name)
        f.write(struct.pack("<BIIII", 3 if features.mode == "3d" else 2, M, points, dim, len(features.joint_ids)))
        f.write(np.asarray(features.joint_ids, dtype="<i4").tobytes())
        f.write(np.asarray(features.t0, dtype="<i4").tobytes())
        f.write(np.asarray(features.points, dtype="<f8").tobytes())
        if features.mode == "3d":
            f.write(np.asarray(features.pixel_track, dtype="<f8").tobytes())
        f.write(np.asarray(features.assignment, dtype="<i4").tobytes())
        f.write(np.asarray(features.distances, dtype="<f8").tobytes())
        f.write(struct.pack("<I", len(features.descriptors)))
        for kind, block in features.descriptors.items():
            f.write(struct.pack("<BI", KIND_TAGS[kind], block.shape[1]))
            f.write(np.asarray(block, dtype="<f4").tobytes())


def read_archive(path: str) -> VideoFeatures:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != ARCHIVE_MAGIC:
        raise ArchiveFormatError(f"{path}: not a trajectory archive")
    reader = _Reader(data, path)
    reader.take(4)
    (version,) = reader.unpack("<I")
    if version != ARCHIVE_VERSION:
        raise ArchiveFormatError(f"{path}: unsupported archive version {version}")
    (length,) = reader.unpack("<H")
    video_id = bytes(reader.array("u1", (length,))).decode("utf-8")
    mode_tag, M, points, dim, J = reader.unpack("<BIIII")
    if mode_tag not in (2, 3):
        raise ArchiveFormatError(f"{path}: unknown mode {mode_tag}")
    mode = f"{mode_tag}d"
    joint_ids = reader.array("<i4", (J,)).astype(np.int32)
    t0 = reader.array("<i4", (M,)).astype(np.int32)
    track = reader.array("<f8", (M, points, dim)).astype(np.float64)
    pixel_track = reader.array("<f8", (M, points, 2)).astype(np.float64) if mode == "3d" else None
    assignment = reader.array("<i4", (M,)).astype(np.int32)
    distances = reader.array("<f8", (M,)).astype(np.float64)
    descriptors = {}
    (kinds,) = reader.unpack("<I")
    for _ in range(kinds):
        tag, width = reader.unpack("<BI")
        kind = TAG_KINDS.get(tag)
        if kind is None:
            raise ArchiveFormatError(f"{path}: unknown descriptor tag {tag}")
        descriptors[kind] = reader.array("<f4", (M, width)).astype(np.float32)
    return VideoFeatures(video_id, mode, joint_ids, t0, track, assignment, distances, descriptors, pixel_track)
