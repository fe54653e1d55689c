"""End-to-end behaviour on synthetic datasets, plus the randomized oracles behind it."""

import dataclasses
import json
import os

import numpy as np
import pytest

from localtraj import archive, pipeline
from localtraj.encode import kmeans
from localtraj.localize import REJECTED, JointTrack, LocalizeConfig, assign, traj_joint_distance
from localtraj.settings import PipelineConfig
from localtraj.synth import preset_dataset, subject_split
from localtraj.tracking import Trajectory2D


def synthesize(root, preset, videos, seed=0):
    specs = preset_dataset(preset, videos, seed, subjects=4)
    result = pipeline.cmd_synth(specs, str(root), seed, subject_split(specs, 4))
    return result.outputs["manifest"]


def evaluate_variant(manifest, work, cfg, noise_fraction=0.0):
    pipeline.cmd_train(manifest, cfg, work, force=True, noise_fraction=noise_fraction)
    report, _ = pipeline.cmd_eval(manifest, cfg, work, force=True, noise_fraction=noise_fraction)
    return report


def pair_accuracy(report, labels):
    index = [report.classes.index(label) for label in labels]
    block = report.confusion[index]
    return block[np.arange(len(index)), index].sum() / block.sum()


@pytest.fixture(scope="module")
def local_vs_global(tmp_path_factory):
    root = tmp_path_factory.mktemp("local_vs_global")
    manifest = synthesize(root / "data", "local_vs_global", 60)
    work = str(root / "work")
    pipeline.cmd_extract(manifest, PipelineConfig(), work)
    return manifest, work


@pytest.mark.slow
def test_local_beats_global(local_vs_global):
    manifest, work = local_vs_global
    local = evaluate_variant(manifest, work, PipelineConfig())
    global_ = evaluate_variant(manifest, work, PipelineConfig().with_encode(global_bow=True))
    assert local.accuracy >= 0.90
    assert local.accuracy - global_.accuracy >= 0.15


@pytest.mark.slow
def test_radial_motion_needs_3d(tmp_path):
    manifest = synthesize(tmp_path / "data", "radial", 40)
    work = str(tmp_path / "work")
    two = PipelineConfig()
    three = PipelineConfig(mode="3d")
    pipeline.cmd_extract(manifest, two, work)
    pipeline.cmd_extract(manifest, three, work)
    report_2d = evaluate_variant(manifest, work, two)
    report_3d = evaluate_variant(manifest, work, three)
    assert report_3d.accuracy >= 0.90
    assert pair_accuracy(report_2d, ["left_horizontal", "left_horizontal_radial"]) <= 0.70
    assert pair_accuracy(report_2d, ["right_vertical", "right_vertical_radial"]) <= 0.70


@pytest.mark.slow
def test_background_is_rejected(tmp_path, local_vs_global):
    manifest = synthesize(tmp_path / "data", "background", 60)
    work = str(tmp_path / "work")
    cfg = PipelineConfig()
    pipeline.cmd_extract(manifest, cfg, work)
    background = 0
    for name in os.listdir(pipeline.archive_dir(work, "2d")):
        features = archive.read_archive(os.path.join(pipeline.archive_dir(work, "2d"), name))
        # the distractor sways around x = 100, the hands stay left of x = 40
        far = features.points[:, 0, 0] >= 60
        background += int(far.sum())
        assert np.all(features.assignment[far] == REJECTED)
    assert background > 0
    noisy = evaluate_variant(manifest, work, cfg)
    clean = evaluate_variant(*local_vs_global, cfg)
    assert clean.accuracy - noisy.accuracy < 0.05


@pytest.mark.slow
def test_selection_with_noise(local_vs_global):
    manifest, work = local_vs_global
    with_selection, without = [], []
    for seed in range(10):
        base = PipelineConfig(seed=seed).with_encode(K=32)
        plain = base.replace(selection=dataclasses.replace(base.selection, sample_size=200))
        chosen = plain.replace(selection=dataclasses.replace(plain.selection, enabled=True))
        report = evaluate_variant(manifest, work, chosen, noise_fraction=0.2)
        with_selection.append(report.accuracy)
        without.append(evaluate_variant(manifest, work, plain, noise_fraction=0.2).accuracy)
        with open(os.path.join(pipeline.model_dir(work, chosen), pipeline.SELECTION_FILE)) as f:
            selection = json.load(f)
        confidences = [c["confidence"] for c in selection["candidates"]]
        best = selection["candidates"][selection["chosen"]]["confidence"]
        assert best >= np.median(confidences)
    assert np.mean(with_selection) >= np.mean(without)


@pytest.mark.slow
def test_pipeline_is_deterministic(tmp_path):
    manifest = synthesize(tmp_path / "data", "local_vs_global", 24, seed=3)
    cfg = PipelineConfig(seed=5).with_encode(K=16)
    outputs = []
    for jobs in (1, 3):
        work = str(tmp_path / f"work{jobs}")
        pipeline.cmd_extract(manifest, cfg, work, jobs=jobs)
        pipeline.cmd_train(manifest, cfg, work, jobs=jobs)
        report, _ = pipeline.cmd_eval(manifest, cfg, work)
        models = pipeline.model_dir(work, cfg)
        outputs.append(
            (
                open(os.path.join(models, pipeline.MODEL_FILE), "rb").read(),
                open(os.path.join(models, pipeline.CODEBOOK_FILE), "rb").read(),
                report.to_dict(),
            )
        )
    assert outputs[0] == outputs[1]


def scalar_distance(points, t0, positions):
    """Direct evaluation over the overlapping frames, one frame at a time."""
    lo = max(t0, 0)
    hi = min(t0 + len(points), len(positions))
    s_max = 0.0
    r_sum = 0.0
    for t in range(lo, hi):
        p = points[t - t0]
        q = positions[t]
        s_max = max(s_max, float(np.sqrt(((p - q) ** 2).sum())))
        if t > lo:
            step = (p - points[t - t0 - 1]) - (q - positions[t - 1])
            r_sum += float(np.sqrt((step ** 2).sum()))
    return s_max * r_sum / max(hi - lo - 1, 1)


def test_clustering_oracle():
    rng = np.random.default_rng(2024)
    cfg = LocalizeConfig(distance_threshold=1e12, normalization="none")
    for _ in range(1000):
        J = int(rng.integers(1, 8))
        frames = int(rng.integers(16, 30))
        joints = [
            JointTrack(j, np.cumsum(rng.normal(scale=2.0, size=(frames, 2)), axis=0) + rng.uniform(0, 100, 2))
            for j in range(1, J + 1)
        ]
        t0 = int(rng.integers(0, frames - 15))
        traj = Trajectory2D(t0, np.cumsum(rng.normal(scale=2.0, size=(16, 2)), axis=0) + rng.uniform(0, 100, 2))
        brute = [scalar_distance(traj.points, t0, j.positions) for j in joints]
        for joint, expected in zip(joints, brute):
            assert abs(traj_joint_distance(traj.points, t0, joint) - expected) <= 1e-9 * max(1.0, expected)
        result = assign([traj], joints, cfg)
        assert result[0] == int(np.argmin(brute)) + 1
        assert result.distances[0] == pytest.approx(min(brute), rel=1e-9)


def test_kmeans_sse_is_monotone():
    rng = np.random.default_rng(99)
    for instance in range(100):
        n = int(rng.integers(10, 80))
        dim = int(rng.integers(1, 6))
        K = int(rng.integers(1, min(n, 12) + 1))
        features = rng.normal(size=(n, dim)) * rng.uniform(0.1, 10)
        history = np.array(kmeans(features, K, seed=instance).sse_history)
        assert np.all(np.diff(history) <= 1e-9 * max(history[0], 1.0))


def test_two_cluster_example():
    book = kmeans(np.array([[0.0], [1.0], [10.0], [11.0]]), 2, seed=0)
    np.testing.assert_allclose(np.sort(book.words[:, 0]), [0.5, 10.5], atol=1e-9)
