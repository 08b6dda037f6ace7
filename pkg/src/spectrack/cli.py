"""Command-line entry points.

Subcommands: voxelize, track, eval, train-toy, gradcheck, plot-data.
Run `spectrack <subcommand> --help` for the flags of each.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .autodiff import load_checkpoint, save_checkpoint
from .backbone import TrackConfig
from .errors import ContractError, SpectrackError
from .evaluation import (
    compute_metrics,
    gradient_checks,
    read_predictions,
    track_sequence,
    train_toy,
    write_curves_csv,
    write_history_csv,
    write_predictions,
    write_report,
)
from .events import event_voxel, parse_events
from .model import TrackerModel
from .sequences import load_manifest_frames, load_sequence
from .simulate import SimConfig, synth_sequence


def _load_config(path: str | None) -> TrackConfig:
    return TrackConfig.from_json(path) if path else TrackConfig()


def _cmd_voxelize(args: argparse.Namespace) -> int:
    sensor, frames, manifest_events = load_manifest_frames(args.manifest)
    events_path = Path(args.events) if args.events else manifest_events
    events = parse_events(events_path, sensor)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for frame in frames:
        voxel = event_voxel(events, frame, bins=args.bins)
        fname = f"voxel_{frame.frame_id:06d}.bin"
        voxel.astype(np.float64).tofile(out_dir / fname)
        records.append({"frame_id": frame.frame_id, "file": fname, "shape": list(voxel.shape)})
    descriptor = {"dtype": "float64", "order": "C", "frames": records}
    (out_dir / "shapes.json").write_text(json.dumps(descriptor, indent=1))
    print(f"wrote {len(records)} voxel grids to {out_dir}")
    return 0


def _cmd_track(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    model = TrackerModel(config, seed=args.seed)
    if args.checkpoint:
        model.load_state(load_checkpoint(args.checkpoint))
    seq = load_sequence(args.manifest)
    result, rows = track_sequence(model, seq)
    write_predictions(rows, args.out)
    print(f"tracked {len(rows)} frames; SR AUC {result.sr_auc:.4f}, PR@20 {result.pr_at_20:.4f}")
    print(f"predictions -> {args.out}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    _, frames, _ = load_manifest_frames(args.manifest)
    preds = {row.frame_id: row for row in read_predictions(args.pred)}
    pred_boxes = []
    gt_boxes = []
    for frame in frames:
        if frame.bbox is None or frame.frame_id not in preds:
            continue
        pred_boxes.append(preds[frame.frame_id].box)
        gt_boxes.append(frame.bbox)
    if not pred_boxes:
        raise ContractError("no overlapping labelled frames between manifest and predictions")
    result = compute_metrics(pred_boxes, gt_boxes)
    write_report(result, args.out)
    print(
        f"evaluated {len(pred_boxes)} frames: sr_auc={result.sr_auc:.4f} "
        f"sr@0.5={result.sr_at_05:.4f} pr@20={result.pr_at_20:.4f}"
    )
    print(f"report -> {args.out}")
    return 0


def _cmd_train_toy(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    seq = synth_sequence(SimConfig(), seed=args.seed)
    model = TrackerModel(config, seed=args.seed)
    history = train_toy(model, seq, steps=args.steps, lr=args.lr, seed=args.seed, optimizer=args.optimizer)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model.state_arrays(), out_dir / "checkpoint")
    write_history_csv(history, out_dir / "history.csv")
    config.to_json(out_dir / "config.json")
    first, last = history[0]["total"], history[-1]["total"]
    print(f"trained {args.steps} steps: loss {first:.4f} -> {last:.4f}")
    print(f"checkpoint + history -> {out_dir}")
    return 0


def _cmd_gradcheck(args: argparse.Namespace) -> int:
    results = gradient_checks(module=args.module, tol=args.tol)
    failed = 0
    for name, report in results:
        state = "ok" if report.passed else "FAIL"
        print(
            f"{state:4s} {name:28s} max_rel={report.max_rel_error:.3e} "
            f"checked={report.checked} kinks={report.flagged}"
        )
        failed += 0 if report.passed else 1
    print(f"{len(results) - failed}/{len(results)} checks passed (tol {args.tol:g})")
    return 0 if failed == 0 else 1


def _cmd_plot_data(args: argparse.Namespace) -> int:
    report = json.loads(Path(args.report).read_text())
    write_curves_csv(report, args.out)
    print(f"curves -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spectrack", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("voxelize", help="event CSV + manifest -> per-frame voxel grids")
    p.add_argument("--events", default=None, help="event CSV; defaults to the manifest's event file")
    p.add_argument("--manifest", required=True)
    p.add_argument("--bins", type=int, default=4)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=_cmd_voxelize)

    p = sub.add_parser("track", help="run the tracker over a sequence")
    p.add_argument("--config", default=None, help="TrackConfig JSON; defaults to the toy config")
    p.add_argument("--checkpoint", default=None, help="checkpoint path (.bin/.json pair)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="prediction CSV path")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_track)

    p = sub.add_parser("eval", help="score a prediction CSV against manifest ground truth")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("train-toy", help="overfit the tracker on a synthetic sequence")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--optimizer", choices=("sgd", "adamw"), default="sgd")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=_cmd_train_toy)

    p = sub.add_parser("gradcheck", help="finite-difference checks of the differentiable units")
    p.add_argument("--module", default="all", choices=("all", "dff", "dwf", "wer", "set", "std", "head", "loss"))
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("plot-data", help="flatten a report JSON into a curves CSV")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_plot_data)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except SpectrackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
