"""Dataset manifests and the loading of per-video frames, depth, skeletons and motion fields."""

import csv
import hashlib
import json
import logging
import os
import shutil
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from . import flow_io
from .exceptions import LocalTrajError, ManifestError, VideoLoadError
from .flow import (
    DepthFrame,
    FlowConfig,
    FlowField2D,
    FrameGray,
    SceneFlowField,
    estimate_flow_2d,
    estimate_scene_flow,
)
from .geometry import CameraIntrinsics, read_intrinsics
from .localize import Skeleton, read_skeletons

log = logging.getLogger(__name__)


@dataclass
class VideoEntry:
    id: str
    frames: str
    skeleton: str
    label: Optional[str] = None
    depth: Optional[str] = None
    flow: Optional[str] = None
    scene_flow: Optional[str] = None
    subject: Optional[int] = None


@dataclass
class DatasetManifest:
    """Videos of a dataset with their labels and train/test split.

    Attributes:
        root: Directory relative paths are resolved against.
        videos: Entries in manifest order.
        intrinsics: Path of the camera intrinsics JSON file, if any.
        splits: {"train": [ids], "test": [ids]}.
    """

    root: str
    videos: List[VideoEntry]
    intrinsics: Optional[str] = None
    splits: Dict[str, List[str]] = field(default_factory=dict)

    def path(self, relative: Optional[str]) -> Optional[str]:
        if relative is None:
            return None
        return relative if os.path.isabs(relative) else os.path.join(self.root, relative)

    def video(self, video_id: str) -> VideoEntry:
        for v in self.videos:
            if v.id == video_id:
                return v
        raise ManifestError(f"Unknown video {video_id!r}")

    def split(self, name: str) -> List[VideoEntry]:
        return [self.video(i) for i in self.splits.get(name, [])]

    @property
    def classes(self) -> List[str]:
        return sorted({v.label for v in self.videos if v.label is not None})

    def camera(self, width: int, height: int) -> CameraIntrinsics:
        if self.intrinsics:
            return read_intrinsics(self.path(self.intrinsics))
        return CameraIntrinsics.default_for(width, height)

    def validate(self, need_depth: bool = False):
        """Every video has a label and its frames, and the splits are disjoint.

        Skeleton files are checked when a video is loaded so that a missing one
        fails that video only.
        """
        ids = [v.id for v in self.videos]
        if len(set(ids)) != len(ids):
            raise ManifestError("Duplicate video ids in manifest")
        if self.intrinsics and not os.path.isfile(self.path(self.intrinsics)):
            raise ManifestError(f"Missing intrinsics file {self.intrinsics}")
        for v in self.videos:
            if v.label is None:
                raise ManifestError(f"Video {v.id} has no label")
            if not os.path.isdir(self.path(v.frames)):
                raise ManifestError(f"Video {v.id}: missing frame directory {v.frames}")
            if need_depth and not (v.depth and os.path.isdir(self.path(v.depth))):
                raise ManifestError(f"Video {v.id}: missing depth directory")
        train = set(self.splits.get("train", []))
        test = set(self.splits.get("test", []))
        if train & test:
            raise ManifestError(f"Videos in both splits: {sorted(train & test)}")
        stray = (train | test) - set(ids)
        if stray:
            raise ManifestError(f"Split names unknown videos: {sorted(stray)}")


def read_labels(path: str) -> Dict[str, str]:
    labels = {}
    with open(path, newline="") as f:
        for row in csv.reader(f):
            if not row or row[0].startswith("#"):
                continue
            if len(row) < 2:
                raise ManifestError(f"{path}: expected video_id,label rows, got {row}")
            if row[0] == "video_id" and not labels:
                continue
            labels[row[0].strip()] = row[1].strip()
    return labels


def write_labels(path: str, labels: Dict[str, str]):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["video_id", "label"])
        for video_id, label in labels.items():
            writer.writerow([video_id, label])


def read_manifest(path: str) -> DatasetManifest:
    try:
        with open(path) as f:
            data = json.load(f)
    except (OSError, ValueError) as e:
        raise ManifestError(f"Cannot read manifest {path}") from e
    base = os.path.dirname(os.path.abspath(path))
    root = os.path.join(base, data.get("root", "."))
    try:
        videos = [VideoEntry(**entry) for entry in data["videos"]]
    except (KeyError, TypeError) as e:
        raise ManifestError(f"Bad video entry in {path}: {e}") from e
    manifest = DatasetManifest(root, videos, data.get("intrinsics"))
    if data.get("labels"):
        labels = read_labels(manifest.path(data["labels"]))
        for v in videos:
            v.label = labels.get(v.id, v.label)
    if data.get("splits"):
        try:
            with open(manifest.path(data["splits"])) as f:
                manifest.splits = json.load(f)
        except (OSError, ValueError) as e:
            raise ManifestError(f"Cannot read splits file {data['splits']}") from e
    return manifest


def write_manifest(path: str, manifest: DatasetManifest, labels_file: str = None, splits_file: str = None):
    entries = []
    for v in manifest.videos:
        entry = {k: val for k, val in v.__dict__.items() if val is not None}
        if labels_file:
            entry.pop("label", None)
        entries.append(entry)
    data = {"root": ".", "videos": entries}
    if manifest.intrinsics:
        data["intrinsics"] = manifest.intrinsics
    if labels_file:
        data["labels"] = labels_file
    if splits_file:
        data["splits"] = splits_file
    with open(path, "w") as f:
        json.dump(data, f, indent=2)


def _checksum(*file_names: str) -> str:
    digest = hashlib.sha256()
    try:
        for name in file_names:
            with open(name, "rb") as f:
                digest.update(f.read())
    except OSError as e:
        raise VideoLoadError("Failed to compute checksum.") from e
    return digest.hexdigest()


class VideoLoader:
    """Load the inputs of one manifest video, estimating missing motion fields.

    Attributes:
        manifest: The dataset the videos belong to.
        flow_cfg: Settings of the fallback estimators.
        cache_dir: Directory storing estimated fields; None disables caching.

    Methods:
        clear_cache: Remove cache directory
        load_frames: Grayscale frames of a video
        load_depths: Depth frames of a video
        load_skeletons: Skeleton records of a video
        load_flows: Optical flow between consecutive frames
        load_scene_flows: Scene flow between consecutive frames
    """

    def __init__(self, manifest: DatasetManifest, flow_cfg: FlowConfig = None, cache_dir: str = None):
        self.manifest = manifest
        self.flow_cfg = flow_cfg or FlowConfig()
        self.cache_dir = cache_dir

    def clear_cache(self):
        """Remove cache directory, if it exists"""
        if self.cache_dir and os.path.isdir(self.cache_dir):
            log.info(f"Removing cache dir: {self.cache_dir}")
            try:
                shutil.rmtree(self.cache_dir)
            except OSError as e:
                log.error(f"Failed: {e}")

    def _frame_files(self, video: VideoEntry) -> List[str]:
        return flow_io.list_frames(self.manifest.path(video.frames))

    def _depth_files(self, video: VideoEntry) -> List[str]:
        if not video.depth:
            raise VideoLoadError(f"Video {video.id} has no depth frames")
        return flow_io.list_frames(self.manifest.path(video.depth))

    def load_frames(self, video: VideoEntry) -> List[FrameGray]:
        files = self._frame_files(video)
        if not files:
            raise VideoLoadError(f"Video {video.id}: no frames in {video.frames}")
        try:
            return [flow_io.read_frame(name) for name in files]
        except (OSError, LocalTrajError) as e:
            raise VideoLoadError(f"Video {video.id}: cannot read frames") from e

    def load_depths(self, video: VideoEntry) -> List[DepthFrame]:
        try:
            return [flow_io.read_depth(name) for name in self._depth_files(video)]
        except (OSError, LocalTrajError) as e:
            raise VideoLoadError(f"Video {video.id}: cannot read depth frames") from e

    def load_skeletons(self, video: VideoEntry) -> List[Skeleton]:
        return read_skeletons(self.manifest.path(video.skeleton))

    def _cache_file_name(self, suffix: str, *file_names: str) -> str:
        return os.path.join(self.cache_dir, f"{_checksum(*file_names)}{suffix}")

    def _from_disk(self, directory: Optional[str], suffix: str, needed: int, reader):
        if not directory:
            return None
        files = flow_io.list_frames(self.manifest.path(directory), suffix)
        if len(files) < needed:
            return None
        try:
            return [reader(name) for name in files[:needed]]
        except (OSError, LocalTrajError) as e:
            raise VideoLoadError(f"Cannot read {suffix} files in {directory}") from e

    def _cached(self, suffix: str, sources: List[str], reader, writer, compute):
        if not self.cache_dir:
            return compute()
        cache_file = self._cache_file_name(suffix, *sources)
        if os.path.isfile(cache_file):
            try:
                return reader(cache_file)
            except (OSError, LocalTrajError) as e:
                log.error(f"Ignoring broken cache file {cache_file}: {e}")
        value = compute()
        try:
            os.makedirs(self.cache_dir, exist_ok=True)
            writer(cache_file, value)
        except OSError as e:
            log.error(f"Failed to store {cache_file}: {e}")
        return value

    def load_flows(self, video: VideoEntry, frames: List[FrameGray]) -> List[FlowField2D]:
        """Flow fields from .flo files when present, else estimated (and cached)."""
        needed = len(frames) - 1
        flows = self._from_disk(video.flow, ".flo", needed, flow_io.read_flo)
        if flows is not None:
            log.info(f"Video {video.id}: read {needed} flow fields")
            return flows
        files = self._frame_files(video)
        flows = []
        for t in range(needed):
            flows.append(
                self._cached(
                    ".flo",
                    files[t : t + 2],
                    flow_io.read_flo,
                    flow_io.write_flo,
                    lambda t=t: estimate_flow_2d(frames[t], frames[t + 1], self.flow_cfg),
                )
            )
        log.info(f"Video {video.id}: estimated {needed} flow fields")
        return flows

    def load_scene_flows(
        self,
        video: VideoEntry,
        frames: List[FrameGray],
        depths: List[DepthFrame],
        k: CameraIntrinsics,
    ) -> List[SceneFlowField]:
        """Scene flow from .sf3 files when present, else composed from flow and depth (and cached)."""
        needed = min(len(frames), len(depths)) - 1
        fields = self._from_disk(video.scene_flow, ".sf3", needed, flow_io.read_sf3)
        if fields is not None:
            log.info(f"Video {video.id}: read {needed} scene flow fields")
            return fields
        flows = self.load_flows(video, frames)
        files = self._frame_files(video)
        depth_files = self._depth_files(video)
        fields = []
        for t in range(needed):
            fields.append(
                self._cached(
                    ".sf3",
                    files[t : t + 2] + depth_files[t : t + 2],
                    flow_io.read_sf3,
                    flow_io.write_sf3,
                    lambda t=t: estimate_scene_flow(
                        frames[t], frames[t + 1], depths[t], depths[t + 1], k, self.flow_cfg, flows[t]
                    ),
                )
            )
        log.info(f"Video {video.id}: composed {needed} scene flow fields")
        return fields
