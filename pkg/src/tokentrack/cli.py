"""Command-line entry points: train, track, cost-report, dump-compression, selftest."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .compressor import compression_record
from .config import RunConfig, b224_config, make_scenarios, toy_config, train_eval_split
from .costs import macs_pipeline, savings_summary
from .model import ConfigError, TrackerModel
from .synthetic import context_crop
from .tracking import TEMPLATE_CONTEXT
from .report import (
    save_compression_figure,
    save_cost_figure,
    save_loss_figure,
    save_trajectory_figure,
    write_compression_grid_csv,
    write_cost_csv,
    write_loss_csv,
    write_trajectory_csv,
)
from .tensor import ShapeError, read_tensor
from .tracking import mean_iou, track_sequence
from .training import TrainingDiverged, train_toy

EXIT_OK = 0
EXIT_SELFTEST = 1
EXIT_VALIDATION = 2
EXIT_TRAINING = 3
EXIT_IO = 4


def _add_common(parser: argparse.ArgumentParser, preset: str) -> None:
    parser.add_argument("--config", type=Path, help="JSON run config (overrides the preset)")
    parser.add_argument("--preset", choices=("toy", "b224"), default=preset,
                        help=f"built-in config when --config is absent (default: {preset})")
    parser.add_argument("--seed", type=int, help="run seed")
    parser.add_argument("--keep-ratio", type=float, dest="keep_ratio", help="token keep ratio r")
    parser.add_argument("--templates", type=int, help="template frame count")
    parser.add_argument("--tau", type=float, help="bank update confidence threshold")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory")


def _load_config(args) -> RunConfig:
    if args.config is not None:
        cfg = RunConfig.from_json(args.config)
    else:
        cfg = toy_config() if args.preset == "toy" else b224_config()
    return cfg.override(
        seed=args.seed,
        keep_ratio=args.keep_ratio,
        templates=args.templates,
        tau=args.tau,
        steps=getattr(args, "steps", None),
    ).validate()


def _outdir(args) -> Path:
    args.out.mkdir(parents=True, exist_ok=True)
    return args.out


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _outdir(args)
    cfg.to_json(out / "config.json")
    model = TrackerModel(cfg.model)
    train, evals = train_eval_split(cfg)
    result = train_toy(
        model,
        train,
        steps=cfg.steps,
        lr=cfg.learning_rate,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        log_every=max(1, cfg.steps // 10),
    )
    write_loss_csv(result.losses, out / "loss.csv")
    save_loss_figure(result.losses, out / "loss.png")
    model.save(out / "checkpoint")
    ious = [mean_iou(track_sequence(model, s, tau=cfg.tau)) for s in evals]
    summary = {
        "steps": cfg.steps,
        "first_decile_loss": float(np.mean(result.losses[: max(1, cfg.steps // 10)])),
        "last_decile_loss": float(np.mean(result.losses[-max(1, cfg.steps // 10) :])),
        "eval_mean_iou": float(np.mean(ious)) if ious else None,
    }
    with open(out / "train_summary.json", "w") as f:
        json.dump(summary, f, indent=1)
    print(json.dumps(summary, indent=1))
    return EXIT_OK


def _load_model(args, cfg: RunConfig) -> TrackerModel:
    if getattr(args, "checkpoint", None) is not None:
        model = TrackerModel.load(args.checkpoint)
        # inference-time knobs still apply to a loaded model
        if args.keep_ratio is not None:
            model.cfg = replace(model.cfg, keep_ratio=args.keep_ratio).validate()
        return model
    return TrackerModel(cfg.model)


def cmd_track(args) -> int:
    cfg = _load_config(args)
    out = _outdir(args)
    model = _load_model(args, cfg)
    scenarios = make_scenarios(cfg, 1, offset=1000 + args.scenario)
    steps = track_sequence(
        model, scenarios[0], templates=cfg.model.templates if args.templates else None, tau=cfg.tau
    )
    write_trajectory_csv(steps, out / "trajectory.csv")
    save_trajectory_figure(steps, out / "trajectory.png")
    print(f"tracked {len(steps)} frames, mean IoU {mean_iou(steps):.3f}")
    return EXIT_OK


def cmd_cost_report(args) -> int:
    cfg = _load_config(args)
    out = _outdir(args)
    m = cfg.model

    def report_at(r: float, atc: bool = True):
        return macs_pipeline(
            template_tokens=m.templates * m.tokens_per_template,
            search_tokens=m.search_tokens,
            channels=m.channels,
            r=r,
            correlation_depth=m.correlation_depth,
            interaction_blocks=m.interaction_blocks,
            inner_blocks=m.inner_blocks,
            head_depth=m.head_depth,
            atc_enabled=atc,
            cross_attention=m.cross_attention,
        )

    report = report_at(m.keep_ratio, atc=m.atc_enabled)
    baseline = report_at(1.0, atc=m.atc_enabled)
    no_atc = report_at(1.0, atc=False)
    payload = {
        "note": "MACs cover matmul work only; norms, softmax, activations and "
        "depthwise taps are excluded",
        "report": report.to_dict(),
        "baseline_r1": baseline.to_dict(),
        "baseline_no_atc": no_atc.to_dict(),
        "savings_vs_r1": savings_summary(report, baseline),
    }
    with open(out / "cost.json", "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
    sweep = [report_at(r) for r in (0.4, 0.5, 0.7, 0.9, 1.0)]
    write_cost_csv(sweep, out / "cost.csv")
    save_cost_figure(sweep, out / "cost.png")
    print(json.dumps(payload["savings_vs_r1"], indent=1))
    return EXIT_OK


def cmd_dump_compression(args) -> int:
    cfg = _load_config(args)
    out = _outdir(args)
    model = _load_model(args, cfg)
    if args.frames:
        crops = [read_tensor(path) for path in sorted(args.frames)]
        if len(crops) > model.cfg.templates:
            raise ConfigError(
                f"got {len(crops)} frame dumps for {model.cfg.templates} template slots"
            )
    else:
        scenario = make_scenarios(cfg, 1, offset=2000)[0]
        count = min(model.cfg.templates, len(scenario.frames))
        crops = [
            context_crop(
                scenario.frames[t], scenario.boxes[t], TEMPLATE_CONTEXT, model.cfg.template_size
            )[0]
            for t in range(count)
        ]
    tokens = model.embed_templates(crops)
    _, result = model.compress_templates(tokens)
    if result is None:
        raise ConfigError("compression dump requires the compressor to be enabled")
    with open(out / "compression.json", "w") as f:
        json.dump(compression_record(result), f, indent=1, sort_keys=True)
    grid = model.cfg.template_spec.grid
    write_compression_grid_csv(result, grid, out / "compression_grid.csv")
    save_compression_figure(result, grid, out / "compression.png")
    kept = result.kept_count
    total = result.frames * result.tokens_per_frame
    print(f"kept {kept}/{total} tokens ({kept / total:.1%}) at r={result.r:g}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from . import selftest

    return EXIT_OK if selftest.run() else EXIT_SELFTEST


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tokentrack",
        description="Desk-scale compress-then-interact tracker utilities",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the toy model on synthetic scenarios")
    _add_common(p, preset="toy")
    p.add_argument("--steps", type=int, help="override training step count")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("track", help="track one synthetic scenario")
    _add_common(p, preset="toy")
    p.add_argument("--checkpoint", type=Path, help="checkpoint directory to load")
    p.add_argument("--scenario", type=int, default=0, help="held-out scenario index")
    p.set_defaults(fn=cmd_track)

    p = sub.add_parser("cost-report", help="emit the analytic MAC report")
    _add_common(p, preset="b224")
    p.set_defaults(fn=cmd_cost_report)

    p = sub.add_parser("dump-compression", help="dump one compression pass for visualization")
    _add_common(p, preset="toy")
    p.add_argument("--checkpoint", type=Path, help="checkpoint directory to load")
    p.add_argument("--frames", type=Path, nargs="*",
                   help="template frames as binary tensor dumps instead of a synthetic scenario")
    p.set_defaults(fn=cmd_dump_compression)

    p = sub.add_parser("selftest", help="run quick in-process sanity checks")
    p.set_defaults(fn=cmd_selftest)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (ConfigError, ShapeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
