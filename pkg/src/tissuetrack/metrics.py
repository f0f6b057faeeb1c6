"""Trajectory evaluation: position accuracy at pixel thresholds, its average,
median trajectory error, and average inference time.

Position accuracy at threshold x is the percentage of (point, frame) pairs
whose Euclidean error is within x pixels, pooled over all frames of a video
(frame 0 included; it contributes zero error for anchored trackers). Dataset
aggregates are unweighted means of the per-video values. Dataset metrics are
computed at a fixed evaluation resolution (default 256x256) regardless of
the native video size, so thresholds are comparable across videos.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import TrajectorySet, rescale_trajectories

THRESHOLDS = (1, 2, 4, 8, 16)

REPORT_SCHEMA_VERSION = 1


def _paired_errors(pred, gt) -> np.ndarray:
    """Euclidean error per valid (point, frame) pair, flattened."""
    pred_mask = None
    gt_mask = None
    if isinstance(pred, TrajectorySet):
        pred_mask = pred.valid_mask
        pred = pred.tracks
    if isinstance(gt, TrajectorySet):
        gt_mask = gt.valid_mask
        gt = gt.tracks
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: predictions {pred.shape} vs ground truth {gt.shape}")
    mask = np.ones(pred.shape[0], dtype=bool)
    if pred_mask is not None:
        mask &= pred_mask
    if gt_mask is not None:
        mask &= gt_mask
    err = np.linalg.norm(pred - gt, axis=-1)  # (N, S)
    return err[mask].reshape(-1)


def position_accuracy(pred, gt, x: float) -> float:
    """Percentage of valid (point, frame) pairs with error <= x pixels."""
    err = _paired_errors(pred, gt)
    if err.size == 0:
        raise ValueError("no valid (point, frame) pairs to evaluate")
    return 100.0 * int(np.count_nonzero(err <= x)) / err.size


def delta_avg(pred, gt) -> float:
    """Mean position accuracy over the thresholds 1, 2, 4, 8 and 16 pixels."""
    err = _paired_errors(pred, gt)
    if err.size == 0:
        raise ValueError("no valid (point, frame) pairs to evaluate")
    return float(
        np.mean([100.0 * int(np.count_nonzero(err <= x)) / err.size for x in THRESHOLDS])
    )


def mte(pred, gt) -> float:
    """Median Euclidean error over all valid (point, frame) pairs, in pixels."""
    err = _paired_errors(pred, gt)
    if err.size == 0:
        raise ValueError("no valid (point, frame) pairs to evaluate")
    return float(np.median(err))


@dataclass
class EvalReport:
    """Aggregated tracking metrics plus the per-video breakdown.

    Construction asserts the structural invariants: accuracies lie in
    [0, 100] and are non-decreasing in the threshold.
    """

    delta: dict[int, float]  # threshold -> percentage
    delta_avg: float
    mte: float
    ait: float | None = None
    per_video: list[dict] = field(default_factory=list)

    def __post_init__(self):
        vals = [self.delta[x] for x in THRESHOLDS]
        for v in vals:
            if not (0.0 <= v <= 100.0):
                raise ValueError(f"accuracy {v} outside [0, 100]")
        for lo, hi in zip(vals, vals[1:]):
            if hi < lo:
                raise ValueError(f"threshold curve not monotone: {vals}")
        if self.mte < 0:
            raise ValueError(f"median trajectory error must be >= 0, got {self.mte}")

    def row(self) -> str:
        """One-line report: d1 d2 d4 d8 d16 d_avg MTE AIT."""
        cells = [f"{self.delta[x]:6.2f}" for x in THRESHOLDS]
        cells.append(f"{self.delta_avg:6.2f}")
        cells.append(f"{self.mte:6.2f}")
        cells.append(f"{self.ait:6.2f}" if self.ait is not None else "   n/a")
        return " ".join(cells)

    @staticmethod
    def header() -> str:
        names = [f"d{x}" for x in THRESHOLDS] + ["d_avg", "MTE", "AIT"]
        return " ".join(f"{n:>6}" for n in names)

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "delta": {str(k): v for k, v in self.delta.items()},
            "delta_avg": self.delta_avg,
            "mte": self.mte,
            "ait": self.ait,
            "per_video": self.per_video,
        }

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
        return path


def evaluate_tracks(pred, gt) -> dict:
    """Per-video metrics dict: every threshold accuracy, their mean, and MTE."""
    err = _paired_errors(pred, gt)
    if err.size == 0:
        raise ValueError("no valid (point, frame) pairs to evaluate")
    delta = {x: 100.0 * int(np.count_nonzero(err <= x)) / err.size for x in THRESHOLDS}
    return {
        "delta": delta,
        "delta_avg": float(np.mean(list(delta.values()))),
        "mte": float(np.median(err)),
    }


def evaluate_dataset(
    track_fn,
    scenes,
    eval_resolution: tuple[int, int] | None = (256, 256),
    warmup: int = 2,
    measure_time: bool = True,
) -> EvalReport:
    """Run a tracker over a dataset and aggregate metrics video by video.

    ``track_fn(seq, queries) -> TrajectorySet`` returns predictions at the
    sequence's source resolution; predictions and ground truth are rescaled
    to ``eval_resolution`` before computing metrics. Inference time is the
    wall-clock mean per video with ``warmup`` untimed runs up front.
    """
    scenes = list(scenes)
    if not scenes:
        raise ValueError("empty dataset")
    if measure_time:
        seq0, q0, _ = scenes[0]
        for _ in range(warmup):
            track_fn(seq0, q0)
    per_video = []
    times = []
    for seq, queries, gt in scenes:
        start = time.perf_counter()
        pred = track_fn(seq, queries)
        times.append(time.perf_counter() - start)
        if eval_resolution is not None:
            src = seq.source_resolution
            pred = rescale_trajectories(pred, src, eval_resolution)
            gt = rescale_trajectories(gt, src, eval_resolution)
        per_video.append(evaluate_tracks(pred, gt))
    delta = {
        x: float(np.mean([v["delta"][x] for v in per_video])) for x in THRESHOLDS
    }
    return EvalReport(
        delta=delta,
        delta_avg=float(np.mean([v["delta_avg"] for v in per_video])),
        mte=float(np.mean([v["mte"] for v in per_video])),
        ait=float(np.mean(times)) if measure_time else None,
        per_video=per_video,
    )


def measure_ait(track_fn, scenes, warmup: int = 2) -> float:
    """Average end-to-end inference time per video in seconds.

    ``warmup`` runs on the first video are excluded from the timing.
    """
    scenes = list(scenes)
    if not scenes:
        raise ValueError("empty dataset")
    seq0, q0 = scenes[0][0], scenes[0][1]
    for _ in range(warmup):
        track_fn(seq0, q0)
    times = []
    for scene in scenes:
        seq, queries = scene[0], scene[1]
        start = time.perf_counter()
        track_fn(seq, queries)
        times.append(time.perf_counter() - start)
    return float(np.mean(times))
