"""Command-line entry point: synth, train, track, eval, and gls subcommands.

Every run writes a ``run_manifest.json`` into its output directory before
producing outputs. Device selection comes from the ``TISSUETRACK_DEVICE``
environment variable (default ``cpu``).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch

from . import gls as gls_mod
from . import metrics as metrics_mod
from .core import QuerySet, TrajectorySet, load_sequence
from .synthdata import Benchmark, BenchmarkConfig, make_benchmark
from .tracker import TissueTracker, load_checkpoint
from .training import TrainConfig, fit

TRACKS_SCHEMA_VERSION = 1


def _device() -> str:
    return os.environ.get("TISSUETRACK_DEVICE", "cpu")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _write_run_manifest(out_dir: Path, command: str, args: argparse.Namespace) -> Path:
    """Record the run before any outputs are produced; finished timestamp is
    filled in by :func:`_finish_run_manifest`."""
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema_version": 1,
        "command": command,
        "config": {k: _jsonable(v) for k, v in vars(args).items() if k != "func"},
        "seed": getattr(args, "seed", None),
        "checkpoint": _jsonable(getattr(args, "checkpoint", None)),
        "output_dir": str(out_dir),
        "started": _now(),
        "finished": None,
    }
    path = out_dir / "run_manifest.json"
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return path


def _finish_run_manifest(path: Path):
    with open(path) as f:
        manifest = json.load(f)
    manifest["finished"] = _now()
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, tuple):
        return list(v)
    return v


def _parse_phases(spec: str) -> tuple[tuple[int, int], ...]:
    """Parse '2x16,1x32' into ((2, 16), (1, 32)): epochs x sequence length."""
    phases = []
    for chunk in spec.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            epochs, seq_len = chunk.split("x")
            phases.append((int(epochs), int(seq_len)))
        except ValueError as e:
            raise argparse.ArgumentTypeError(
                f"bad phase {chunk!r}, expected EPOCHSxSEQLEN"
            ) from e
    if not phases:
        raise argparse.ArgumentTypeError("empty phase list")
    return tuple(phases)


def _positive_int(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return n


# ----- synth ----------------------------------------------------------------


def cmd_synth(args) -> int:
    out_dir = Path(args.out)
    manifest_path = _write_run_manifest(out_dir, "synth", args)
    cfg = BenchmarkConfig(
        resolution=(args.height, args.width),
        frames_range=tuple(args.frames),
        points_range=tuple(args.points),
        amplitude_range=tuple(args.amplitude),
        noise_range=tuple(args.noise),
        seed=args.seed,
    )
    data_dir = out_dir / "dataset"
    make_benchmark(data_dir, args.scenes, cfg, force=args.force)
    bench = Benchmark(data_dir)
    splits = bench.manifest["splits"]
    print(f"generated {args.scenes} scenes in {data_dir}")
    print(
        "split sizes: "
        + " ".join(f"{name}={len(splits[name])}" for name in ("train", "val", "test"))
    )
    _finish_run_manifest(manifest_path)
    return 0


# ----- train ----------------------------------------------------------------


def cmd_train(args) -> int:
    out_dir = Path(args.out)
    manifest_path = _write_run_manifest(out_dir, "train", args)
    device = _device()

    torch.manual_seed(args.seed)
    if args.resume:
        # architecture comes from the config snapshot stored with the state
        state = torch.load(args.resume, map_location=device, weights_only=True)
        model_cfg = dict(state["model_config"])
        if model_cfg.get("resolution") is not None:
            model_cfg["resolution"] = tuple(model_cfg["resolution"])
        model = TissueTracker(**model_cfg)
    else:
        resolution = None if args.resolution == "native" else (int(args.resolution),) * 2
        model = TissueTracker(iterations=args.iters, resolution=resolution)
    model.to(device)

    bench = Benchmark(Path(args.data))
    train_scenes = bench.load_split("train")
    val_scenes = bench.load_split("val")
    config = TrainConfig(
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        gamma=args.gamma,
        batch_size=args.batch_size,
        phases=args.phases,
        seed=args.seed,
        augment=not args.no_augment,
    )
    result = fit(
        model,
        train_scenes,
        val_scenes,
        config,
        out_dir,
        resume_from=args.resume,
    )
    print(f"trained {result.steps} steps; best val delta_avg: {result.best_val_delta:.2f}")
    print(f"best checkpoint: {result.best_checkpoint}")
    print(f"log: {result.log_path}")
    _finish_run_manifest(manifest_path)
    return 0


# ----- track ----------------------------------------------------------------


def _load_queries_file(path: Path, height: int, width: int) -> QuerySet:
    with open(path) as f:
        data = json.load(f)
    pts = data["points"] if isinstance(data, dict) else data
    return QuerySet(np.asarray(pts, dtype=np.float64), height=height, width=width)


def cmd_track(args) -> int:
    out_path = Path(args.out)
    manifest_path = _write_run_manifest(out_path.parent, "track", args)
    model, _ = load_checkpoint(args.checkpoint, device=_device())
    seq, gt = load_sequence(args.sequence)
    src_h, src_w = seq.source_resolution
    if args.queries:
        queries = _load_queries_file(Path(args.queries), src_h, src_w)
    elif gt is not None:
        queries = gt.queries(src_h, src_w)
    else:
        print("error: sequence has no ground-truth tracks; pass --queries", file=sys.stderr)
        return 1
    if (seq.height, seq.width) != (src_h, src_w):
        # stored coordinates live at the source resolution
        scaled = queries.points * [seq.width / src_w, seq.height / src_h]
        queries_seq = QuerySet(scaled, height=seq.height, width=seq.width)
    else:
        queries_seq = queries
    pred = model.track(seq, queries_seq)
    payload = {
        "schema_version": TRACKS_SCHEMA_VERSION,
        "resolution": [src_h, src_w],
        "tracks": pred.tracks.tolist(),
        "valid_mask": pred.valid_mask.tolist(),
    }
    with open(out_path, "w") as f:
        json.dump(payload, f)
    print(f"tracked {pred.point_count} points over {pred.frame_count} frames -> {out_path}")
    _finish_run_manifest(manifest_path)
    return 0


# ----- eval -----------------------------------------------------------------


def cmd_eval(args) -> int:
    out_path = Path(args.out) if args.out else None
    manifest_dir = out_path.parent if out_path else Path(args.data)
    manifest_path = _write_run_manifest(manifest_dir, "eval", args)
    model, _ = load_checkpoint(args.checkpoint, device=_device())
    bench = Benchmark(Path(args.data))
    scenes = bench.load_split(args.split)
    report = metrics_mod.evaluate_dataset(
        model.track, scenes, eval_resolution=(args.eval_size, args.eval_size)
    )
    print(metrics_mod.EvalReport.header())
    print(report.row())
    if out_path:
        report.save(out_path)
        print(f"report -> {out_path}")
    _finish_run_manifest(manifest_path)
    return 0


# ----- gls ------------------------------------------------------------------


def _tracks_from_path(path: Path) -> TrajectorySet:
    """Load tracks from either a tracks JSON file or a sequence directory."""
    if path.is_dir():
        _, gt = load_sequence(path)
        if gt is None:
            raise ValueError(f"{path} has no ground-truth tracks")
        return gt
    with open(path) as f:
        data = json.load(f)
    return TrajectorySet(
        np.asarray(data["tracks"], dtype=np.float64),
        valid_mask=np.asarray(data["valid_mask"], dtype=bool)
        if data.get("valid_mask") is not None
        else None,
    )


def _peak_gls_of(path: Path, ed_frame: int) -> float:
    return gls_mod.peak_gls(_tracks_from_path(path), ed_frame=ed_frame).peak_gls


def cmd_gls(args) -> int:
    out_path = Path(args.out) if args.out else None
    manifest_dir = out_path.parent if out_path else Path(".")
    manifest_path = _write_run_manifest(manifest_dir, "gls", args)

    if args.pairs:
        with open(args.pairs) as f:
            pairs_spec = json.load(f)
        rows = [
            (
                entry.get("exam"),
                _peak_gls_of(Path(entry["test"]), args.ed_frame),
                _peak_gls_of(Path(entry["retest"]), args.ed_frame),
            )
            for entry in pairs_spec
        ]
        if args.per_exam_mean:
            by_exam: dict = {}
            for exam, t, r in rows:
                by_exam.setdefault(exam, []).append((t, r))
            pairs = [
                (float(np.mean([t for t, _ in vals])), float(np.mean([r for _, r in vals])))
                for vals in by_exam.values()
            ]
        else:
            pairs = [(t, r) for _, t, r in rows]
        stats = gls_mod.test_retest(pairs)
        print(f"pairs: {len(pairs)}")
        print(f"bias mu: {stats.mu:+.3f}%  sigma: {stats.sigma:.3f}%  MAD: {stats.mad:.3f}%")
        payload = stats.to_dict()
    else:
        source = Path(args.tracks) if args.tracks else Path(args.sequence)
        report = gls_mod.peak_gls(_tracks_from_path(source), ed_frame=args.ed_frame)
        print(f"peak GLS: {report.peak_gls:+.2f}% (ED frame {report.ed_frame})")
        payload = report.to_dict()

    if out_path:
        with open(out_path, "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
        print(f"report -> {out_path}")
    _finish_run_manifest(manifest_path)
    return 0


# ----- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tissuetrack",
        description="Point tracking for ultrasound-like sequences: synthetic data, "
        "training, tracking, evaluation, and strain reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic benchmark dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scenes", type=_positive_int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--frames", type=int, nargs=2, default=[16, 16], metavar=("LO", "HI"))
    p.add_argument("--points", type=int, nargs=2, default=[8, 8], metavar=("LO", "HI"))
    p.add_argument(
        "--amplitude", type=float, nargs=2, default=[0.10, 0.30], metavar=("LO", "HI")
    )
    p.add_argument("--noise", type=float, nargs=2, default=[0.02, 0.08], metavar=("LO", "HI"))
    p.add_argument("--force", action="store_true", help="overwrite an existing dataset")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a tracker on a generated dataset")
    p.add_argument("--data", required=True, help="dataset directory (with manifest.json)")
    p.add_argument("--out", required=True, help="output directory for checkpoints and logs")
    p.add_argument("--phases", type=_parse_phases, default=((20, 16),),
                   help="curriculum as EPOCHSxSEQLEN[,EPOCHSxSEQLEN...], e.g. 2x16,1x32")
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--weight-decay", type=float, default=1e-5)
    p.add_argument("--gamma", type=float, default=0.8)
    p.add_argument("--iters", type=int, default=4, help="refinement iterations")
    p.add_argument("--batch-size", type=int, default=1,
                   help="sequences per optimizer step (only 1 supported)")
    p.add_argument("--resolution", default="native",
                   help="working resolution (pixels) or 'native'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resume", default=None, help="resume from a last.pt training state")
    p.add_argument("--no-augment", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="track query points through one sequence")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sequence", required=True, help="sequence directory")
    p.add_argument("--out", required=True, help="output tracks JSON")
    p.add_argument("--queries", default=None,
                   help="JSON file with query points (defaults to ground-truth frame 0)")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--eval-size", type=int, default=256,
                   help="resolution metrics are computed at")
    p.add_argument("--out", default=None, help="write the report JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gls", help="peak GLS of tracked points, or test-retest stats")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--tracks", help="tracks JSON from the track command")
    src.add_argument("--sequence", help="sequence directory with ground-truth tracks")
    src.add_argument("--pairs", help="JSON manifest of test/retest pairs")
    p.add_argument("--ed-frame", type=int, default=0)
    p.add_argument("--per-exam-mean", action="store_true",
                   help="average views per exam before the retest statistics")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gls)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileExistsError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
