"""Command-line entry points: generate | train | eval | study.

Every command is driven by the flat config (file plus --set overrides,
overrides win) and is idempotent: identical config and seed reproduce
identical output bytes.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as datamod
from . import studies
from .config import RunConfig, defaults_help, load_config
from .errors import ConfigError, DataError, PolytrajError
from .evaluation import RMSE_OFFSETS, rmse_at_offsets
from .model import (
    COORDINATES,
    ModelConfig,
    TrainSettings,
    TrajectoryModel,
    load_model,
    save_model,
    train,
)
from .report import (
    Series,
    format_summary_table,
    write_eval_csv,
    write_loss_csv,
    write_study_csv,
    write_svg_chart,
)

STUDIES = ("anchoring", "anchor_count", "extrapolation", "table1")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="polytraj",
        description="Continuous polynomial trajectory prediction: data, training, evaluation.",
        epilog=defaults_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("generate", "generate or ingest a dataset into scene files"),
        ("train", "train a model on a generated dataset"),
        ("eval", "evaluate a checkpoint on the test split"),
        ("study", "reproduce one of the experimental studies"),
    ):
        p = sub.add_parser(name, help=help_text, epilog=defaults_help(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="path to a key = value config file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one config key (repeatable; wins over the file)",
        )
        if name == "eval":
            p.add_argument("--checkpoint", required=True, help="checkpoint file to evaluate")
        if name == "study":
            p.add_argument("name", choices=STUDIES, help="which study to run")
    return parser


# -- shared helpers ---------------------------------------------------------------


def _prepare_out_dir(cfg: RunConfig) -> Path:
    out_dir = Path(cfg["out.dir"])
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise DataError(f"output dir {out_dir} is not writable: {exc}") from None
    return out_dir


def _model_config(cfg: RunConfig) -> ModelConfig:
    return ModelConfig(
        head=cfg["model.head"],
        units=cfg["model.units"],
        encoder_layers=cfg["model.encoder_layers"],
        decoder_layers=cfg["model.decoder_layers"],
        decoder_steps=cfg["model.decoder_steps"],
        d_x=cfg["model.d_x"],
        d_y=cfg["model.d_y"],
        horizon=cfg["horizon_frames"],
        anchor_count=cfg["anchors.count"],
        anchor_mode=cfg["anchors.mode"],
        anchor_min=cfg["anchors.min"],
        anchor_max=cfg["anchors.max"],
    )


def _train_settings(cfg: RunConfig) -> TrainSettings:
    return TrainSettings(
        lr=cfg["train.lr"],
        epochs=cfg["train.epochs"],
        steps=cfg["train.steps"],
        batch=cfg["train.batch"],
        optimizer=cfg["train.optimizer"],
        grad_clip=cfg["train.grad_clip"],
        seed=(cfg["run.seed"], cfg["train.seed"]),
    )


def _load_samples(cfg: RunConfig, split: str) -> list:
    split_dir = Path(cfg["data.dir"]) / split
    if not split_dir.is_dir():
        raise DataError(f"no {split} split under {cfg['data.dir']}; run generate first")
    scene_files = sorted(split_dir.glob("scene_*.csv"))
    if not scene_files:
        raise DataError(f"no scene files in {split_dir}")
    scenes = [datamod.read_scene(path, frame_rate=cfg["data.frame_rate"]) for path in scene_files]
    return datamod.build_samples(scenes, history_len=cfg["data.history_len"])


def _synth_params(cfg: RunConfig) -> dict:
    return {
        "speed_min": cfg["synthetic.speed_min"],
        "speed_max": cfg["synthetic.speed_max"],
        "accel_max": cfg["synthetic.accel_max"],
        "lane_offset_m": cfg["synthetic.lane_offset_m"],
        "lane_mid_min": cfg["synthetic.lane_mid_min"],
        "lane_mid_max": cfg["synthetic.lane_mid_max"],
        "lane_steepness": cfg["synthetic.lane_steepness"],
        "noise": cfg["synthetic.noise"],
        "neighbors": cfg["synthetic.neighbors"],
    }


def _write_scene_split(scenes, split_dir: Path) -> list[str]:
    split_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for i, scene in enumerate(scenes):
        name = f"scene_{i:05d}.csv"
        datamod.write_scene(scene, split_dir / name)
        names.append(name)
    return names


# -- commands ---------------------------------------------------------------------


def cmd_generate(cfg: RunConfig) -> int:
    out_dir = _prepare_out_dir(cfg)
    source = cfg["data.source"]
    seed = cfg["run.seed"]
    if source == "synthetic":
        params = _synth_params(cfg)
        n_total = cfg["synthetic.n"]
        n_test = int(n_total * cfg["synthetic.test_fraction"] + 0.5)
        n_train = n_total - n_test
        kind = cfg["synthetic.kind"]
        train_scenes = datamod.gen_synthetic(
            kind, params, n_train, np.random.default_rng([seed, 10]),
            n_frames=cfg["synthetic.frames"], frame_rate=cfg["data.frame_rate"],
        )
        test_scenes = datamod.gen_synthetic(
            kind, params, n_test, np.random.default_rng([seed, 11]),
            n_frames=cfg["synthetic.frames"], frame_rate=cfg["data.frame_rate"],
        )
        detail = {"kind": kind}
    elif source == "ngsim":
        csv_path = cfg["data.ngsim_csv"]
        if not csv_path:
            raise ConfigError("data.source=ngsim requires data.ngsim_csv")
        tracks = datamod.ingest_ngsim(csv_path, frame_rate=cfg["data.frame_rate"])
        train_segments, test_segments = datamod.segment_and_split(
            tracks, segment_len=cfg["data.segment_len"], ratio=cfg["data.split_ratio"]
        )
        history_len = cfg["data.history_len"]
        neighbors = cfg["data.neighbors"]
        train_scenes = [
            datamod.build_scene(seg, tracks, history_len, neighbors) for seg in train_segments
        ]
        test_scenes = [
            datamod.build_scene(seg, tracks, history_len, neighbors) for seg in test_segments
        ]
        train_scenes = datamod.filter_straight(
            train_scenes,
            fraction=cfg["data.straight.fraction"],
            rng=np.random.default_rng([seed, 12]),
            lateral_range_m=cfg["data.straight.lateral_range_m"],
            speed_std=cfg["data.straight.speed_std"],
        )
        detail = {"ngsim_csv": str(csv_path), "tracks": len(tracks)}
    else:
        raise ConfigError(f"unknown data.source {source!r}; valid sources: synthetic, ngsim")
    train_names = _write_scene_split(train_scenes, out_dir / "train")
    test_names = _write_scene_split(test_scenes, out_dir / "test")
    manifest = {
        "source": source,
        "seed": seed,
        "fingerprint": cfg.fingerprint(),
        "scenes": {"train": len(train_names), "test": len(test_names),
                   "total": len(train_names) + len(test_names)},
        **detail,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    print(f"wrote {manifest['scenes']['total']} scenes "
          f"({len(train_names)} train, {len(test_names)} test) to {out_dir}")
    print(f"fingerprint: {manifest['fingerprint']}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    out_dir = _prepare_out_dir(cfg)
    samples = _load_samples(cfg, "train")
    model = TrajectoryModel(_model_config(cfg), seed=(cfg["run.seed"], cfg["train.seed"]))
    settings = _train_settings(cfg)
    result = train(model, samples, settings)
    fingerprint = cfg.fingerprint()
    checkpoint = out_dir / "checkpoint.txt"
    save_model(model, checkpoint, extra_meta={"fingerprint": fingerprint})
    write_loss_csv(result.loss_curve, out_dir / f"loss_{fingerprint}.csv")
    if result.loss_curve:
        print(f"trained {len(result.loss_curve)} steps, final loss {result.final_loss:.6f}")
    else:
        print("trained 0 steps (checkpoint equals initialization)")
    print(f"checkpoint: {checkpoint}")
    print(f"fingerprint: {fingerprint}")
    return 0


def cmd_eval(cfg: RunConfig, checkpoint_path: str) -> int:
    out_dir = _prepare_out_dir(cfg)
    model, meta = load_model(checkpoint_path)
    if model.config.head != cfg["model.head"]:
        raise ConfigError(
            f"checkpoint head {model.config.head!r} does not match configured "
            f"model.head {cfg['model.head']!r}"
        )
    samples = _load_samples(cfg, "test")
    fingerprint = cfg.fingerprint()
    offsets = cfg.eval_offsets()
    report = rmse_at_offsets(model, samples, offsets, fingerprint=fingerprint)
    write_eval_csv(report, out_dir / f"eval_{fingerprint}.csv")
    label = "Poly (ours)" if model.config.head != COORDINATES else "Coords baseline"
    series = [Series(label, report.rmse_offsets, tuple(float(v) for v in report.ade_curve))]
    write_svg_chart(series, out_dir / f"eval_{fingerprint}.svg", title=f"ADE, {label}")
    if offsets == RMSE_OFFSETS:
        print(format_summary_table({label: report.rmse}))
    else:
        print("offset_frames  rmse_m  ade_m")
        for offset, rmse, ade in zip(report.rmse_offsets, report.rmse, report.ade_curve):
            print(f"{offset:>13d}  {rmse:.4f}  {ade:.4f}")
    print(f"samples: {report.sample_count}")
    print(f"fingerprint: {fingerprint}")
    return 0


def cmd_study(cfg: RunConfig, name: str) -> int:
    out_dir = _prepare_out_dir(cfg)
    train_samples = _load_samples(cfg, "train")
    test_samples = _load_samples(cfg, "test")
    base = _model_config(cfg)
    settings = _train_settings(cfg)
    fingerprint = cfg.fingerprint()
    if name == "table1":
        reports = studies.table1_protocol(train_samples, test_samples, base, settings, fingerprint)
        for label, report in reports.items():
            slug = "poly" if "Poly" in label else "coords"
            write_eval_csv(report, out_dir / f"table1_{slug}_{fingerprint}.csv")
        print(format_summary_table({label: r.rmse for label, r in reports.items()}))
        print(f"fingerprint: {fingerprint}")
        return 0
    study_fn = {
        "anchoring": studies.anchoring_study,
        "anchor_count": studies.anchor_count_study,
        "extrapolation": studies.extrapolation_study,
    }[name]
    report, _ = study_fn(train_samples, test_samples, base, settings, fingerprint)
    write_study_csv(report, out_dir / f"{name}_{fingerprint}.csv")
    write_svg_chart(report.series, out_dir / f"{name}_{fingerprint}.svg", title=f"{name} study")
    for series in report.series:
        mean_ade = sum(series.values) / len(series.values)
        print(f"{series.label}: mean ADE {mean_ade:.4f} m over {len(series.offsets)} offsets")
    print(f"fingerprint: {fingerprint}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args.config, args.overrides)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint)
        return cmd_study(cfg, args.name)
    except PolytrajError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
