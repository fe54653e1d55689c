import json
import os

import numpy as np
import pytest

from localtraj import archive, flow_io, pipeline
from localtraj.exceptions import ParameterError
from localtraj.settings import from_dict
from localtraj.synth import JointSpec, SynthSpec, preset_dataset, subject_split, synth_sequence

FRAMES = 17


def small_config(**encode):
    return from_dict(
        {
            "seed": 3,
            "encode": dict({"K": 8}, **encode),
            "selection": {"sample_size": 200},
            "classify": {"epochs": 20},
        }
    )


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out_dir = str(tmp_path_factory.mktemp("data"))
    specs = preset_dataset("local_vs_global", 12, seed=1, subjects=2, frames=FRAMES)
    result = pipeline.cmd_synth(specs, out_dir, seed=1, splits=subject_split(specs, 2))
    assert result.exit_code == 0
    return result.outputs["manifest"]


def test_synth_layout(dataset):
    root = os.path.dirname(dataset)
    for name in ("labels.csv", "splits.json", "intrinsics.json", "manifest.json"):
        assert os.path.isfile(os.path.join(root, name))
    video = os.path.join(root, "videos", "v0000")
    assert len(os.listdir(os.path.join(video, "frames"))) == FRAMES
    assert len(os.listdir(os.path.join(video, "depth"))) == FRAMES
    assert len(os.listdir(os.path.join(video, "flow"))) == FRAMES - 1
    assert len(os.listdir(os.path.join(video, "scene_flow"))) == FRAMES - 1
    splits = json.load(open(os.path.join(root, "splits.json")))
    assert len(splits["train"]) == len(splits["test"]) == 6


def test_synth_is_deterministic(tmp_path):
    specs = preset_dataset("radial", 4, seed=2, frames=FRAMES)
    pipeline.cmd_synth(specs, str(tmp_path / "a"), seed=5)
    pipeline.cmd_synth(specs, str(tmp_path / "b"), seed=5, jobs=2)
    for sub in ("frames/000009.pgm", "scene_flow/000003.sf3", "skeleton.jsonl"):
        a = (tmp_path / "a" / "videos" / "v0002" / sub).read_bytes()
        b = (tmp_path / "b" / "videos" / "v0002" / sub).read_bytes()
        assert a == b


def test_synth_files_match_generated_fields(tmp_path):
    specs = preset_dataset("radial", 4, seed=6, frames=FRAMES)
    pipeline.cmd_synth(specs, str(tmp_path), seed=8)
    index = 3
    video_id, spec = specs[index]
    seq = synth_sequence(spec, pipeline.synth_seed(8, index))
    base = tmp_path / "videos" / video_id
    for t in (0, 7, FRAMES - 2):
        flow = flow_io.read_flo(str(base / "flow" / f"{t:06d}.flo"))
        np.testing.assert_allclose(flow.u, seq.flows[t].u, atol=1e-5)
        np.testing.assert_allclose(flow.v, seq.flows[t].v, atol=1e-5)
        scene_flow = flow_io.read_sf3(str(base / "scene_flow" / f"{t:06d}.sf3"))
        np.testing.assert_allclose(scene_flow.dZ, seq.scene_flows[t].dZ, atol=1e-6)
        np.testing.assert_allclose(scene_flow.dX, seq.scene_flows[t].dX, atol=1e-6)
        frame = flow_io.read_frame(str(base / "frames" / f"{t:06d}.pgm"))
        np.testing.assert_allclose(frame.intensity, seq.frames[t].intensity, atol=0.5 / 255 + 1e-9)
        depth = flow_io.read_depth(str(base / "depth" / f"{t:06d}.pgm"))
        np.testing.assert_allclose(depth.meters, seq.depths[t].meters, atol=5e-4 + 1e-9)

def test_synth_needs_one_camera(tmp_path):
    specs = [("a", SynthSpec(frames=FRAMES, joints=[JointSpec(1, 10, 10)])), ("b", SynthSpec(width=64))]
    with pytest.raises(ParameterError):
        pipeline.cmd_synth(specs, str(tmp_path), seed=0)
    with pytest.raises(ParameterError):
        pipeline.cmd_synth([], str(tmp_path), seed=0)


def test_end_to_end(dataset, tmp_path):
    work = str(tmp_path)
    cfg = small_config()
    extracted = pipeline.cmd_extract(dataset, cfg, work, dump_trajectories=True)
    assert extracted.exit_code == 0
    assert len(extracted.done) == 12
    features = archive.read_archive(pipeline.archive_path(work, "2d", "v0001"))
    assert features.count > 0
    assert features.descriptors["HOF"].shape == (features.count, 108)
    assert os.path.isfile(os.path.join(work, "trajectories", "2d", "v0001.jsonl"))

    trained = pipeline.cmd_train(dataset, cfg, work)
    assert trained.exit_code == 0
    assert sorted(trained.done) == sorted(json.load(open(os.path.join(os.path.dirname(dataset), "splits.json")))["train"])
    models = pipeline.model_dir(work, cfg)
    for name in ("codebooks.tlcb", "model.tlmd", "config.json"):
        assert os.path.isfile(os.path.join(models, name))

    report, evaluated = pipeline.cmd_eval(dataset, cfg, work)
    assert evaluated.exit_code == 0
    assert len(report.classes) == 6
    assert report.confusion.sum() == 6
    assert 0.0 <= report.accuracy <= 1.0
    for key in ("csv", "ppm", "svg", "json"):
        assert os.path.isfile(evaluated.outputs[key])

    again, skipped = pipeline.cmd_eval(dataset, cfg, work)
    assert skipped.done == []
    assert len(skipped.skipped) == 6
    assert again.accuracy == report.accuracy
    assert again.confusion.tolist() == report.confusion.tolist()

    info = pipeline.inspect_path(os.path.join(models, "codebooks.tlcb"))
    keys = {(entry["kind"], entry["joint"]) for entry in info["codebooks"]}
    assert keys == {(kind, j) for kind in ("TSD", "HOG", "HOF", "MBH") for j in (1, 2, 3)}
    assert all(1 <= entry["words"] <= 8 for entry in info["codebooks"])
    words = sum(entry["words"] for entry in info["codebooks"])
    assert pipeline.inspect_path(os.path.join(models, "model.tlmd"))["dim"] == words


def test_stages_skip_existing_outputs(dataset, tmp_path):
    work = str(tmp_path)
    cfg = small_config()
    pipeline.cmd_extract(dataset, cfg, work)
    path = pipeline.archive_path(work, "2d", "v0003")
    stamp = os.path.getmtime(path)
    second = pipeline.cmd_extract(dataset, cfg, work)
    assert second.done == []
    assert len(second.skipped) == 12
    assert os.path.getmtime(path) == stamp
    forced = pipeline.cmd_extract(dataset, cfg, work, force=True)
    assert len(forced.done) == 12

    pipeline.cmd_train(dataset, cfg, work)
    retrain = pipeline.cmd_train(dataset, cfg, work)
    assert retrain.done == []
    assert len(retrain.skipped) == 6


def test_extraction_does_not_depend_on_jobs(dataset, tmp_path):
    cfg = small_config()
    pipeline.cmd_extract(dataset, cfg, str(tmp_path / "one"), jobs=1)
    pipeline.cmd_extract(dataset, cfg, str(tmp_path / "two"), jobs=2)
    for video_id in ("v0000", "v0005", "v0011"):
        a = open(pipeline.archive_path(str(tmp_path / "one"), "2d", video_id), "rb").read()
        b = open(pipeline.archive_path(str(tmp_path / "two"), "2d", video_id), "rb").read()
        assert a == b


def test_training_reads_train_split_only(dataset, tmp_path, monkeypatch):
    work = str(tmp_path)
    cfg = small_config()
    pipeline.cmd_extract(dataset, cfg, work)
    seen = []
    original = archive.read_archive

    def spy(path):
        seen.append(os.path.basename(path)[: -len(archive.ARCHIVE_SUFFIX)])
        return original(path)

    monkeypatch.setattr(archive, "read_archive", spy)
    pipeline.cmd_train(dataset, cfg, work)
    train_ids = json.load(open(os.path.join(os.path.dirname(dataset), "splits.json")))["train"]
    assert sorted(seen) == sorted(train_ids)


def test_variants_use_their_own_directories(dataset, tmp_path):
    work = str(tmp_path)
    local = small_config()
    global_ = small_config(global_bow=True)
    dense = small_config(global_bow=True, use_rejected=True)
    assert [pipeline.variant_name(c) for c in (local, global_, dense)] == ["local", "global", "dense"]
    pipeline.cmd_extract(dataset, local, work)
    pipeline.cmd_train(dataset, global_, work)
    info = pipeline.inspect_path(os.path.join(pipeline.model_dir(work, global_), "codebooks.tlcb"))
    assert {entry["joint"] for entry in info["codebooks"]} == {-1}
    assert not os.path.exists(pipeline.model_dir(work, local))
    with pytest.raises(ParameterError):
        pipeline.cmd_eval(dataset, dense, work)


def test_static_video_gives_empty_archive(tmp_path):
    still = SynthSpec(frames=FRAMES, joints=[JointSpec(1, 40.0, 30.0), JointSpec(2, 90.0, 30.0)], label="still")
    result = pipeline.cmd_synth([("s0", still)], str(tmp_path / "data"), seed=0)
    work = str(tmp_path / "work")
    extracted = pipeline.cmd_extract(result.outputs["manifest"], small_config(), work)
    assert extracted.done == ["s0"]
    features = archive.read_archive(pipeline.archive_path(work, "2d", "s0"))
    assert features.count == 0
    assert features.joint_ids.tolist() == [1, 2]
    assert pipeline.inspect_path(pipeline.archive_path(work, "2d", "s0"))["trajectories"] == 0


def test_failed_video_sets_exit_code(tmp_path):
    specs = preset_dataset("local_vs_global", 6, seed=4, frames=FRAMES)
    result = pipeline.cmd_synth(specs, str(tmp_path / "data"), seed=4)
    os.remove(tmp_path / "data" / "videos" / "v0002" / "skeleton.jsonl")
    work = str(tmp_path / "work")
    extracted = pipeline.cmd_extract(result.outputs["manifest"], small_config(), work)
    assert extracted.exit_code == 2
    assert list(extracted.failed) == ["v0002"]
    assert len(extracted.done) == 5
    assert not os.path.exists(pipeline.archive_path(work, "2d", "v0002"))


def test_inspect_manifest_and_unknown(dataset, tmp_path):
    info = pipeline.inspect_path(dataset)
    assert info["videos"] == 12
    assert info["splits"] == {"train": 6, "test": 6}
    assert len(info["classes"]) == 6
    with pytest.raises(ParameterError):
        pipeline.inspect_path(str(tmp_path / "notes.txt"))


def test_unexpected_error_fails_one_video(dataset, tmp_path, monkeypatch):
    original = pipeline.extract_video

    def flaky(manifest, video, cfg, cache_dir=None):
        if video.id == "v0004":
            raise RuntimeError("disk on fire")
        return original(manifest, video, cfg, cache_dir)

    monkeypatch.setattr(pipeline, "extract_video", flaky)
    extracted = pipeline.cmd_extract(dataset, small_config(), str(tmp_path))
    assert extracted.exit_code == 2
    assert extracted.failed == {"v0004": "disk on fire"}
    assert len(extracted.done) == 11


def test_retraining_invalidates_the_report(dataset, tmp_path):
    work = str(tmp_path)
    cfg = small_config()
    pipeline.cmd_extract(dataset, cfg, work)
    pipeline.cmd_train(dataset, cfg, work)
    _, first = pipeline.cmd_eval(dataset, cfg, work)
    assert len(first.done) == 6

    _, cached = pipeline.cmd_eval(dataset, cfg, work)
    assert cached.done == []

    pipeline.cmd_train(dataset, cfg, work, force=True)
    model_file = os.path.join(pipeline.model_dir(work, cfg), pipeline.MODEL_FILE)
    report_file = os.path.join(pipeline.report_dir(work, cfg), "report.json")
    later = os.stat(report_file).st_mtime_ns + 10 ** 9
    os.utime(model_file, ns=(later, later))
    _, again = pipeline.cmd_eval(dataset, cfg, work)
    assert len(again.done) == 6
    assert again.skipped == []
