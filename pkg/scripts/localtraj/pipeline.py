"""Batch stages: synth, extract, train, eval and inspect.

Every stage reads and writes files under a work directory and skips work whose
output already exists unless forced. Per-video work runs on a process pool;
results are merged in manifest order so outputs do not depend on the job count.
"""

import concurrent.futures
import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import archive, flow_io
from . import report as report_files
from .archive import ARCHIVE_SUFFIX, VideoFeatures
from .classify import EvalReport, evaluate, read_model, train, write_model
from .dataset import (
    DatasetManifest,
    VideoEntry,
    VideoLoader,
    read_manifest,
    write_labels,
    write_manifest,
)
from .descriptors import describe_2d, describe_3d, kinds_for
from .encode import (
    encode_video,
    learn_codebooks,
    read_codebooks,
    select_codebook_pool,
    write_codebooks,
)
from .exceptions import LocalTrajError, ManifestError, ParameterError
from .geometry import write_intrinsics
from .localize import assign, joint_tracks, write_skeletons
from .settings import PipelineConfig, to_dict
from .synth import SynthSpec, inject_noise_trajectories, synth_sequence
from .tracking import Tracker, write_trajectory_dump
from .utils import atomic_write, derive_rng

log = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
LABELS_FILE = "labels.csv"
SPLITS_FILE = "splits.json"
INTRINSICS_FILE = "intrinsics.json"
CODEBOOK_FILE = "codebooks.tlcb"
MODEL_FILE = "model.tlmd"
SELECTION_FILE = "selection.json"


@dataclass
class StageResult:
    """Outcome of a per-video stage.

    Attributes:
        done: Video ids processed in this run.
        skipped: Video ids whose output already existed.
        failed: Error message per failed video id.
        outputs: Files written (or found) by the stage.
    """

    done: List[str] = field(default_factory=list)
    skipped: List[str] = field(default_factory=list)
    failed: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return 2 if self.failed else 0


def variant_name(cfg: PipelineConfig) -> str:
    """local, global or dense (global codebooks over every trajectory)."""
    if not cfg.encode.global_bow:
        return "local"
    return "dense" if cfg.encode.use_rejected else "global"


def archive_dir(work_dir: str, mode: str) -> str:
    return os.path.join(work_dir, "archives", mode)


def archive_path(work_dir: str, mode: str, video_id: str) -> str:
    return os.path.join(archive_dir(work_dir, mode), f"{video_id}{ARCHIVE_SUFFIX}")


def model_dir(work_dir: str, cfg: PipelineConfig) -> str:
    return os.path.join(work_dir, "models", f"{cfg.mode}-{variant_name(cfg)}")


def report_dir(work_dir: str, cfg: PipelineConfig) -> str:
    return os.path.join(work_dir, "reports", f"{cfg.mode}-{variant_name(cfg)}")


def _failure(key: str, e: Exception) -> Exception:
    if not isinstance(e, LocalTrajError):
        log.exception(f"Unexpected error in {key}", exc_info=e)
    return e


def _run(worker, tasks: Sequence[tuple], keys: Sequence[str], jobs: int):
    """Yield (key, result or exception) in task order; one failing task never stops the rest."""
    if jobs > 1 and len(tasks) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as executor:
            futures = [executor.submit(worker, task) for task in tasks]
            for key, future in zip(keys, futures):
                try:
                    yield key, future.result()
                except Exception as e:
                    yield key, _failure(key, e)
    else:
        for key, task in zip(keys, tasks):
            try:
                yield key, worker(task)
            except Exception as e:
                yield key, _failure(key, e)


# synth


def _synth_video(task) -> str:
    video_id, spec, seed, L, out_dir = task
    sequence = synth_sequence(spec, seed, L)
    base = os.path.join(out_dir, "videos", video_id)
    for sub in ("frames", "depth", "flow", "scene_flow"):
        os.makedirs(os.path.join(base, sub), exist_ok=True)
    for t, (frame, depth) in enumerate(zip(sequence.frames, sequence.depths)):
        flow_io.write_frame(os.path.join(base, "frames", f"{t:06d}.pgm"), frame)
        flow_io.write_depth(os.path.join(base, "depth", f"{t:06d}.pgm"), depth)
    for t, (flow, scene_flow) in enumerate(zip(sequence.flows, sequence.scene_flows)):
        flow_io.write_flo(os.path.join(base, "flow", f"{t:06d}.flo"), flow)
        flow_io.write_sf3(os.path.join(base, "scene_flow", f"{t:06d}.sf3"), scene_flow)
    write_skeletons(os.path.join(base, "skeleton.jsonl"), sequence.skeletons)
    return video_id


def synth_seed(seed: int, index: int) -> int:
    return int(derive_rng(seed, 3, index).integers(2 ** 31))


def cmd_synth(
    specs: Sequence[Tuple[str, SynthSpec]],
    out_dir: str,
    seed: int,
    splits: Optional[Dict[str, List[str]]] = None,
    L: int = 15,
    jobs: int = 1,
) -> StageResult:
    """Render a dataset with ground-truth flow fields and write its manifest.

    Video i is rendered from a stream derived from (seed, i), so the tree is
    identical for identical arguments.
    """
    if not specs:
        raise ParameterError("Nothing to synthesize")
    sizes = {(spec.width, spec.height, spec.fx, spec.fy) for _, spec in specs}
    if len(sizes) > 1:
        raise ParameterError("All synthetic videos of a dataset must share one camera")
    os.makedirs(out_dir, exist_ok=True)
    tasks = [
        (video_id, spec, synth_seed(seed, index), L, out_dir)
        for index, (video_id, spec) in enumerate(specs)
    ]
    ids = [video_id for video_id, _ in specs]
    result = StageResult()
    for video_id, outcome in _run(_synth_video, tasks, ids, jobs):
        if isinstance(outcome, Exception):
            log.error(f"Error while rendering {video_id}: {outcome}")
            result.failed[video_id] = str(outcome)
        else:
            result.done.append(video_id)

    write_intrinsics(os.path.join(out_dir, INTRINSICS_FILE), specs[0][1].intrinsics)
    write_labels(os.path.join(out_dir, LABELS_FILE), {vid: spec.label for vid, spec in specs if vid in result.done})
    if splits is None:
        splits = {"train": [], "test": []}
    splits = {name: [vid for vid in members if vid in result.done] for name, members in splits.items()}
    with open(os.path.join(out_dir, SPLITS_FILE), "w") as f:
        json.dump(splits, f, indent=2)
    videos = [
        VideoEntry(
            id=vid,
            frames=f"videos/{vid}/frames",
            skeleton=f"videos/{vid}/skeleton.jsonl",
            depth=f"videos/{vid}/depth",
            flow=f"videos/{vid}/flow",
            scene_flow=f"videos/{vid}/scene_flow",
            subject=spec.subject,
        )
        for vid, spec in specs
        if vid in result.done
    ]
    manifest_file = os.path.join(out_dir, MANIFEST_FILE)
    write_manifest(
        manifest_file,
        DatasetManifest(out_dir, videos, INTRINSICS_FILE),
        LABELS_FILE,
        SPLITS_FILE,
    )
    result.outputs["manifest"] = manifest_file
    log.info(f"Synthesized {len(result.done)} videos into {out_dir}")
    return result


# extract


def extract_video(
    manifest: DatasetManifest,
    video: VideoEntry,
    cfg: PipelineConfig,
    cache_dir: Optional[str] = None,
) -> Tuple[VideoFeatures, list]:
    """Track, localize and describe one video; returns its features and trajectories."""
    loader = VideoLoader(manifest, cfg.flow, cache_dir)
    frames = loader.load_frames(video)
    tracks = joint_tracks(loader.load_skeletons(video), cfg.mode)
    width, height = frames[0].width, frames[0].height
    k = manifest.camera(width, height)
    kinds = kinds_for(cfg.mode)
    tracker = Tracker(cfg.tracker, k)
    if cfg.mode == "2d":
        flows = loader.load_flows(video, frames)
        trajectories = tracker.track_2d(frames, flows)
        descriptors = describe_2d(frames, flows, trajectories, cfg.volume, kinds)
    else:
        depths = loader.load_depths(video)
        scene_flows = loader.load_scene_flows(video, frames, depths, k)
        trajectories = tracker.track_3d(frames, depths, scene_flows)
        descriptors = describe_3d(scene_flows, trajectories, cfg.volume, kinds)
    joint_ids = [t.joint_id for t in tracks]
    if not trajectories:
        log.info(f"Video {video.id}: no trajectories survived tracking")
        return VideoFeatures.empty(video.id, cfg.mode, joint_ids, kinds, cfg.volume), trajectories
    clusters = assign(trajectories, tracks, cfg.localize, (width, height))
    features = VideoFeatures(
        video.id,
        cfg.mode,
        np.asarray(joint_ids, dtype=np.int32),
        np.array([t.t0 for t in trajectories], dtype=np.int32),
        np.array([t.points for t in trajectories], dtype=float),
        clusters.joints,
        clusters.distances,
        {kind: np.asarray(block, dtype=np.float32) for kind, block in descriptors.items()},
        np.array([t.pixel_track for t in trajectories], dtype=float) if cfg.mode == "3d" else None,
    )
    return features, trajectories


def _extract_task(task) -> int:
    manifest, video, cfg, cache_dir, out_path, dump_path = task
    features, trajectories = extract_video(manifest, video, cfg, cache_dir)
    archive.write_archive(out_path, features)
    if dump_path:
        os.makedirs(os.path.dirname(dump_path), exist_ok=True)
        write_trajectory_dump(dump_path, video.id, trajectories)
    return features.count


def cmd_extract(
    manifest_file: str,
    cfg: PipelineConfig,
    work_dir: str,
    force: bool = False,
    jobs: int = 1,
    cache_dir: Optional[str] = None,
    dump_trajectories: bool = False,
) -> StageResult:
    """One archive per manifest video; existing archives are kept unless forced."""
    manifest = read_manifest(manifest_file)
    manifest.validate(need_depth=cfg.mode == "3d")
    result = StageResult()
    tasks, ids = [], []
    for video in manifest.videos:
        out_path = archive_path(work_dir, cfg.mode, video.id)
        if os.path.isfile(out_path) and not force:
            result.skipped.append(video.id)
            continue
        dump_path = None
        if dump_trajectories:
            dump_path = os.path.join(work_dir, "trajectories", cfg.mode, f"{video.id}.jsonl")
        tasks.append((manifest, video, cfg, cache_dir, out_path, dump_path))
        ids.append(video.id)
    print(f"Extracting {len(tasks)} videos with {jobs} jobs ({len(result.skipped)} already done)...")
    for video_id, outcome in _run(_extract_task, tasks, ids, jobs):
        if isinstance(outcome, Exception):
            log.error(f"Error while extracting {video_id}: {outcome}")
            result.failed[video_id] = str(outcome)
        else:
            log.info(f"Video {video_id}: archived {outcome} trajectories")
            result.done.append(video_id)
    result.outputs["archives"] = archive_dir(work_dir, cfg.mode)
    return result


# train and eval


def noise_seed(seed: int, index: int) -> int:
    return int(derive_rng(seed, 5, index).integers(2 ** 31))


def _load_split(
    manifest: DatasetManifest,
    split: str,
    cfg: PipelineConfig,
    work_dir: str,
    result: StageResult,
    noise_fraction: float = 0.0,
) -> Tuple[List[VideoFeatures], List[str]]:
    """Archives and labels of one split; missing or unreadable archives are reported as failures."""
    entries = manifest.split(split)
    if not entries:
        raise ManifestError(f"Manifest has no {split} videos")
    index_of = {v.id: i for i, v in enumerate(manifest.videos)}
    videos, labels = [], []
    for entry in entries:
        path = archive_path(work_dir, cfg.mode, entry.id)
        try:
            features = archive.read_archive(path)
        except (OSError, LocalTrajError) as e:
            log.error(f"Error while reading archive of {entry.id}: {e}")
            result.failed[entry.id] = str(e)
            continue
        if noise_fraction:
            features = inject_noise_trajectories(features, noise_fraction, noise_seed(cfg.seed, index_of[entry.id]))
        videos.append(features)
        labels.append(entry.label)
    return videos, labels


def _pool_subsets(videos: Sequence[VideoFeatures], sample_size: int, seed: int) -> List[np.ndarray]:
    subsets = []
    for index, video in enumerate(videos):
        if video.count <= sample_size:
            subsets.append(np.arange(video.count))
        else:
            rng = derive_rng(seed, 6, index)
            subsets.append(np.sort(rng.choice(video.count, sample_size, replace=False)))
    return subsets


def _as_stored(codebooks):
    """Codebooks with the precision they have once written to disk."""
    return {
        key: dataclasses.replace(book, words=book.words.astype(np.float32).astype(np.float64))
        for key, book in codebooks.items()
    }


def cmd_train(
    manifest_file: str,
    cfg: PipelineConfig,
    work_dir: str,
    force: bool = False,
    jobs: int = 1,
    noise_fraction: float = 0.0,
) -> StageResult:
    """Learn codebooks and the classifier from training-split archives only."""
    manifest = read_manifest(manifest_file)
    out_dir = model_dir(work_dir, cfg)
    codebook_file = os.path.join(out_dir, CODEBOOK_FILE)
    model_file = os.path.join(out_dir, MODEL_FILE)
    result = StageResult(outputs={"codebooks": codebook_file, "model": model_file})
    if os.path.isfile(codebook_file) and os.path.isfile(model_file) and not force:
        print(f"Model {model_file} already exists, use --force to retrain.")
        result.skipped = [v.id for v in manifest.split("train")]
        return result

    videos, labels = _load_split(manifest, "train", cfg, work_dir, result, noise_fraction)
    if not videos:
        raise ManifestError("No readable training archives")
    kinds = kinds_for(cfg.mode)
    print(f"Training {variant_name(cfg)} {cfg.mode} model on {len(videos)} videos...")
    if cfg.selection.enabled:
        selection = select_codebook_pool(
            videos, labels, kinds, cfg.selection, cfg.encode, cfg.classify, cfg.seed, jobs
        )
        best = selection.best
        pool = [videos[i] for i in best.train_videos]
        subsets = best.subsets
        os.makedirs(out_dir, exist_ok=True)
        with atomic_write(os.path.join(out_dir, SELECTION_FILE), "w") as f:
            json.dump(
                {
                    "chosen": selection.chosen,
                    "candidates": [
                        {
                            "index": c.index,
                            "train_videos": [videos[i].video_id for i in c.train_videos],
                            "holdout_videos": [videos[i].video_id for i in c.holdout_videos],
                            "confidence": c.confidence,
                            "ambiguity": c.ambiguity,
                            "score": c.score,
                        }
                        for c in selection.candidates
                    ],
                },
                f,
                indent=2,
            )
        result.outputs["selection"] = os.path.join(out_dir, SELECTION_FILE)
    else:
        pool = videos
        subsets = _pool_subsets(videos, cfg.selection.sample_size, cfg.seed)

    codebooks = _as_stored(learn_codebooks(pool, kinds, cfg.encode, cfg.seed, subsets, jobs))
    histograms = np.array([encode_video(v, codebooks, cfg.encode) for v in videos])
    model = train(histograms, labels, cfg.classify, cfg.seed, jobs)
    write_codebooks(codebook_file, codebooks)
    write_model(model_file, model)
    with atomic_write(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump(to_dict(cfg), f, indent=2)
    result.done = [v.video_id for v in videos]
    log.info(f"Wrote {len(codebooks)} codebooks and a {len(model.classes)}-class model to {out_dir}")
    return result


def _read_report(path: str) -> EvalReport:
    with open(path) as f:
        data = json.load(f)
    classes = data["classes"]
    return EvalReport(
        classes,
        np.array(data["confusion"], dtype=int),
        float(data["accuracy"]),
        [float(data["per_class_accuracy"][c]) for c in classes],
    )


def _newer(models: str, report_file: str) -> bool:
    """True when a model file changed after the report was written."""
    written = os.stat(report_file).st_mtime_ns
    for name in (CODEBOOK_FILE, MODEL_FILE):
        path = os.path.join(models, name)
        if os.path.isfile(path) and os.stat(path).st_mtime_ns > written:
            log.info(f"{path} is newer than {report_file}, evaluating again")
            return True
    return False


def cmd_eval(
    manifest_file: str,
    cfg: PipelineConfig,
    work_dir: str,
    force: bool = False,
    noise_fraction: float = 0.0,
    model_path: Optional[str] = None,
) -> Tuple[EvalReport, StageResult]:
    """Classify the test split and write confusion.csv/.ppm/.svg and report.json."""
    manifest = read_manifest(manifest_file)
    out_dir = report_dir(work_dir, cfg)
    report_file = os.path.join(out_dir, "report.json")
    result = StageResult(outputs={"reports": out_dir})
    models = model_path or model_dir(work_dir, cfg)
    if os.path.isfile(report_file) and not force and not _newer(models, report_file):
        result.skipped = [v.id for v in manifest.split("test")]
        return _read_report(report_file), result

    try:
        codebooks = read_codebooks(os.path.join(models, CODEBOOK_FILE))
        model = read_model(os.path.join(models, MODEL_FILE))
    except FileNotFoundError as e:
        raise ParameterError(f"No trained model in {models}, run train first") from e
    videos, labels = _load_split(manifest, "test", cfg, work_dir, result, noise_fraction)
    if not videos:
        raise ManifestError("No readable test archives")
    histograms = np.array([encode_video(v, codebooks, cfg.encode) for v in videos])
    report = evaluate(model, histograms, labels)
    result.outputs.update(report_files.write_all(out_dir, report))
    result.done = [v.video_id for v in videos]
    return report, result


# inspect


def inspect_path(path: str) -> dict:
    """Summary of a manifest (.json), archive, codebook file or model."""
    if path.endswith(ARCHIVE_SUFFIX):
        features = archive.read_archive(path)
        assigned, counts = np.unique(features.assignment, return_counts=True)
        return {
            "video": features.video_id,
            "mode": features.mode,
            "trajectories": features.count,
            "joints": features.joint_ids.tolist(),
            "assigned": {int(j): int(c) for j, c in zip(assigned, counts)},
            "descriptors": {kind: list(block.shape) for kind, block in features.descriptors.items()},
        }
    if path.endswith(".tlcb"):
        codebooks = read_codebooks(path)
        return {
            "codebooks": [
                {"kind": kind, "joint": joint_id, "words": book.K, "dim": book.dim}
                for (kind, joint_id), book in codebooks.items()
            ]
        }
    if path.endswith(".tlmd"):
        model = read_model(path)
        return {"classes": model.classes, "dim": model.dim}
    if path.endswith(".json"):
        manifest = read_manifest(path)
        return {
            "videos": len(manifest.videos),
            "classes": manifest.classes,
            "splits": {name: len(members) for name, members in manifest.splits.items()},
        }
    raise ParameterError(f"Don't know how to inspect {path}")
