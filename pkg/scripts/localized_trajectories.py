#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import argparse
import dataclasses
import json
import logging
import os
import sys

import appdirs
from config import (
    DATA_DIR,
    FRAMES,
    PRESET,
    SUBJECTS,
    VIDEOS,
    WORK_DIR,
    __app_author__,
    __app_name__,
    config,
)
from localtraj import pipeline, settings, synth
from localtraj.dataset import VideoLoader, read_manifest
from localtraj.exceptions import LocalTrajError, ParameterError


def build_config(args) -> settings.PipelineConfig:
    """Config file (or the pipeline section of config.yaml), then command line overrides."""
    if args.config:
        cfg = settings.load_config(args.config)
    else:
        cfg = settings.from_dict(config("pipeline"))
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.mode:
        cfg = cfg.replace(mode=args.mode)
    if args.global_bow:
        cfg = cfg.with_encode(global_bow=True)
    if args.use_rejected:
        if not cfg.encode.global_bow:
            raise ParameterError("--use-rejected only applies together with --global-bow")
        cfg = cfg.with_encode(use_rejected=True)
    if getattr(args, "select", False):
        cfg = cfg.replace(selection=dataclasses.replace(cfg.selection, enabled=True))
    return cfg


def _default_cache_dir() -> str:
    return os.path.join(appdirs.user_cache_dir(__app_name__, __app_author__), "flows")


def _report(result: pipeline.StageResult, what: str):
    print(f"{what}: {len(result.done)} done, {len(result.skipped)} skipped, {len(result.failed)} failed.")
    for video_id, message in result.failed.items():
        print(f"  {video_id}: {message}")


def run_synth(args, cfg):
    specs = synth.preset_dataset(args.preset, args.videos, cfg.seed, args.subjects, args.frames)
    splits = synth.subject_split(specs, args.subjects)
    print(f"Rendering {len(specs)} {args.preset} videos into {args.data_dir}...")
    result = pipeline.cmd_synth(specs, args.data_dir, cfg.seed, splits, cfg.tracker.L, args.jobs)
    _report(result, "Synth")
    print(f"Manifest: {result.outputs['manifest']}")
    return result.exit_code


def run_extract(args, cfg):
    cache_dir = args.cache_dir or _default_cache_dir()
    if args.clear_cache:
        print("Clearing cache...")
        VideoLoader(read_manifest(args.manifest), cfg.flow, cache_dir).clear_cache()
    result = pipeline.cmd_extract(
        args.manifest,
        cfg,
        args.work_dir,
        args.force,
        args.jobs,
        cache_dir,
        args.dump_trajectories,
    )
    _report(result, "Extract")
    return result.exit_code


def run_train(args, cfg):
    result = pipeline.cmd_train(args.manifest, cfg, args.work_dir, args.force, args.jobs, args.noise_fraction)
    _report(result, "Train")
    print(f"Model: {result.outputs['model']}")
    return result.exit_code


def run_eval(args, cfg):
    report, result = pipeline.cmd_eval(
        args.manifest, cfg, args.work_dir, args.force, args.noise_fraction, args.model_dir
    )
    _report(result, "Eval")
    for label, value in zip(report.classes, report.per_class_accuracy):
        print(f"  {label}: {value:.4f}")
    print(f"Accuracy: {report.accuracy:.4f}")
    return result.exit_code


def run_inspect(args, cfg):
    if args.default_config:
        print(settings.default_config_json())
        return 0
    if not args.path:
        raise ParameterError("Nothing to inspect: give a file or --default-config")
    print(json.dumps(pipeline.inspect_path(args.path), indent=2))
    return 0


def main() -> int:
    """Handle command line arguments and call other modules as needed."""

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", type=str, help="Pipeline config (YAML or JSON).")
    common.add_argument("--seed", metavar="SEED", type=int, help="Seed of every random choice (default: config).")
    common.add_argument(
        "--mode",
        choices=settings.MODES,
        help="2d: optical flow trajectories; 3d: scene flow trajectories (default: config).",
    )
    common.add_argument(
        "--global-bow",
        dest="global_bow",
        action="store_true",
        help="Baseline: one codebook per descriptor kind instead of per joint.",
    )
    common.add_argument(
        "--use-rejected",
        dest="use_rejected",
        action="store_true",
        help="With --global-bow, also encode trajectories no joint accepted.",
    )
    common.add_argument("--force", action="store_true", help="Redo work whose output already exists.")
    common.add_argument("--jobs", metavar="N", type=int, default=1, help="Worker processes (default: 1).")
    common.add_argument("--verbose", dest="verbose", action="store_true", help="Verbose logging.")
    common.add_argument("--logfile", dest="logfile", metavar="FILE", type=str)

    args_parser = argparse.ArgumentParser(description="Action recognition with localized trajectories.")
    commands = args_parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("synth", parents=[common], help="Render a synthetic dataset.")
    p.add_argument("--preset", choices=synth.PRESETS, default=PRESET, help=f'Dataset preset (default: "{PRESET}").')
    p.add_argument("--videos", type=int, default=VIDEOS, help=f"Number of videos (default: {VIDEOS}).")
    p.add_argument("--subjects", type=int, default=SUBJECTS, help=f"Number of subjects (default: {SUBJECTS}).")
    p.add_argument("--frames", type=int, default=FRAMES, help=f"Frames per video (default: {FRAMES}).")
    p.add_argument(
        "--data-dir",
        dest="data_dir",
        metavar="DIR",
        default=DATA_DIR,
        help=f'Output directory (default: "{DATA_DIR}").',
    )
    p.set_defaults(run=run_synth)

    for name, run, help_text in (
        ("extract", run_extract, "Track, localize and describe every video."),
        ("train", run_train, "Learn codebooks and the classifier on the training split."),
        ("eval", run_eval, "Classify the test split and write the confusion matrix."),
    ):
        p = commands.add_parser(name, parents=[common], help=help_text)
        p.add_argument("manifest", metavar="MANIFEST", help="Dataset manifest JSON file.")
        p.add_argument(
            "--work-dir",
            dest="work_dir",
            metavar="DIR",
            default=WORK_DIR,
            help="Directory of archives, models and reports (default: ./work).",
        )
        if name == "extract":
            p.add_argument("--cache-dir", dest="cache_dir", metavar="DIR", help="Cache of estimated flow fields.")
            p.add_argument("--clear-cache", dest="clear_cache", action="store_true", help="Clear the flow cache.")
            p.add_argument(
                "--dump-trajectories",
                dest="dump_trajectories",
                action="store_true",
                help="Also write every trajectory as JSON lines.",
            )
        else:
            p.add_argument(
                "--noise-fraction",
                dest="noise_fraction",
                metavar="FRACTION",
                type=float,
                default=0.0,
                help="Append this share of random descriptor rows to every video (default: 0).",
            )
        if name == "train":
            p.add_argument("--select", action="store_true", help="Select the codebook pool by confidence/ambiguity.")
        if name == "eval":
            p.add_argument("--model-dir", dest="model_dir", metavar="DIR", help="Trained model directory.")
        p.set_defaults(run=run)

    p = commands.add_parser("inspect", parents=[common], help="Summarize a manifest, archive, codebook or model file.")
    p.add_argument("path", metavar="FILE", nargs="?")
    p.add_argument(
        "--default-config",
        dest="default_config",
        action="store_true",
        help="Print the full default config as JSON.",
    )
    p.set_defaults(run=run_inspect)

    args = args_parser.parse_args()

    log = logging.getLogger("localtraj")
    log.setLevel(logging.INFO if args.verbose else logging.ERROR)
    log.addHandler(logging.StreamHandler())
    if args.logfile:
        handler = logging.FileHandler(args.logfile)
        log.addHandler(handler)

    if args.jobs < 1:
        raise ParameterError(f"--jobs must be at least 1, got {args.jobs}")
    cfg = build_config(args)
    return args.run(args, cfg)


if __name__ == "__main__":
    try:
        sys.exit(main())
    except LocalTrajError as e:
        print(e)
        sys.exit(1)
