"""Supervised training: per-iteration weighted trajectory loss, AdamW with a
one-cycle schedule, a sequence-length curriculum, CSV logging, and resumable
checkpoints. One optimizer step consumes one sequence with all of its points.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import metrics
from .core import ImageSequence, QuerySet, TrajectorySet, rescale_trajectories, resize_sequence
from .tracker import TissueTracker, save_checkpoint

TRAIN_STATE_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Raised when the loss becomes non-finite; carries the offending batch."""

    def __init__(self, batch_id, step):
        super().__init__(f"non-finite loss at step {step} on batch {batch_id!r}")
        self.batch_id = batch_id
        self.step = step


@dataclass
class TrainConfig:
    """Hyperparameters for :func:`fit`.

    ``phases`` lists ``(epochs, sequence_length)`` pairs; each phase truncates
    training sequences to its length and runs its own one-cycle schedule,
    mirroring a short-to-long curriculum. ``gamma`` is the per-iteration loss
    decay (later refinement iterations weigh more).
    """

    learning_rate: float = 5e-4
    weight_decay: float = 1e-5
    gamma: float = 0.8
    batch_size: int = 1
    phases: tuple[tuple[int, int], ...] = ((20, 16),)
    grad_clip: float = 1.0
    seed: int = 0
    resolution: tuple[int, int] | None = None  # resize sequences; None = native
    augment: bool = True
    pct_start: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e3
    validate_every: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.batch_size != 1:
            raise ValueError("only single-sequence steps are supported (batch_size=1)")
        self.phases = tuple((int(e), int(s)) for e, s in self.phases)
        for epochs, seq_len in self.phases:
            if epochs < 0:
                raise ValueError(f"negative epoch count {epochs}")
            if seq_len < 2:
                raise ValueError(f"sequence length must be >= 2, got {seq_len}")


def trajectory_loss(history, gt, valid_mask=None, gamma: float = 0.8) -> torch.Tensor:
    """Iteration-weighted L1 trajectory loss.

    ``history`` is the list of per-iteration track predictions (index 0 is
    the initialization); ``gt`` the ground-truth tracks, both (N, S, 2). The
    loss is ``sum_i gamma**(I - i) * mean_(valid n, s) |pred - gt|_1`` where
    the L1 distance of a (point, frame) pair is ``|dx| + |dy|``.
    """
    if isinstance(gt, TrajectorySet):
        if valid_mask is None:
            valid_mask = gt.valid_mask
        gt = gt.tracks
    gt_t = gt if isinstance(gt, torch.Tensor) else torch.from_numpy(np.array(gt, dtype=np.float64))
    if isinstance(history, torch.Tensor):
        history = [history]
    if len(history) == 0:
        raise ValueError("history must contain at least the initialization")
    terms = []
    last = len(history) - 1
    for i, pred in enumerate(history):
        pred_t = (
            pred
            if isinstance(pred, torch.Tensor)
            else torch.from_numpy(np.array(pred, dtype=np.float64))
        )
        if pred_t.shape != gt_t.shape:
            raise ValueError(
                f"iteration {i} prediction shape {tuple(pred_t.shape)} does not match "
                f"ground truth {tuple(gt_t.shape)}"
            )
        gt_like = gt_t.to(dtype=pred_t.dtype, device=pred_t.device)
        dist = (pred_t - gt_like).abs().sum(dim=-1)  # (N, S) L1 per pair
        if valid_mask is not None:
            mask = torch.from_numpy(np.array(valid_mask, dtype=bool)).to(pred_t.device)
            if mask.shape[0] != dist.shape[0]:
                raise ValueError(f"valid_mask covers {mask.shape[0]} points, tracks have {dist.shape[0]}")
            if not mask.any():
                terms.append(dist.sum() * 0.0)
                continue
            dist = dist[mask]
        terms.append((gamma ** (last - i)) * dist.mean())
    return sum(terms)


def one_cycle_lr(
    step: int,
    total_steps: int,
    max_lr: float,
    pct_start: float = 0.3,
    div_factor: float = 25.0,
    final_div_factor: float = 1e3,
) -> float:
    """Cosine one-cycle schedule hitting ``max_lr`` exactly at the peak step."""
    if total_steps <= 1:
        return max_lr
    peak = int(round(pct_start * (total_steps - 1)))
    start_lr = max_lr / div_factor
    final_lr = max_lr / final_div_factor
    if step <= peak:
        if peak == 0:
            return max_lr
        t = step / peak
        return start_lr + (max_lr - start_lr) * 0.5 * (1.0 - math.cos(math.pi * t))
    t = (step - peak) / (total_steps - 1 - peak)
    return final_lr + (max_lr - final_lr) * 0.5 * (1.0 + math.cos(math.pi * t))


# ----- data handling --------------------------------------------------------


Scene = tuple[ImageSequence, QuerySet, TrajectorySet]


def _truncate(scene: Scene, seq_len: int) -> Scene:
    seq, queries, gt = scene
    if seq.frame_count <= seq_len:
        return scene
    frames = seq.frames[:seq_len]
    return (
        ImageSequence(frames, source_resolution=seq.source_resolution),
        queries,
        TrajectorySet(gt.tracks[:, :seq_len], valid_mask=gt.valid_mask),
    )


def _augment(scene: Scene, rng: np.random.Generator, min_side: int = 16) -> Scene:
    """Random crop / horizontal flip / intensity gamma, with coordinates
    transformed to match. Crops that would push a query outside or shrink the
    frame below ``min_side`` are skipped."""
    seq, queries, gt = scene
    frames = np.array(seq.frames)
    pts = np.array(queries.points)
    tracks = np.array(gt.tracks)
    h, w = frames.shape[1:]

    if rng.random() < 0.5:  # crop
        max_m = max(min(h, w) // 10, 0)
        if max_m > 0:
            mx0, mx1, my0, my1 = rng.integers(0, max_m + 1, size=4)
            nh, nw = h - my0 - my1, w - mx0 - mx1
            inside = (
                (pts[:, 0] >= mx0)
                & (pts[:, 0] < w - mx1)
                & (pts[:, 1] >= my0)
                & (pts[:, 1] < h - my1)
            )
            if nh >= min_side and nw >= min_side and inside.all():
                frames = frames[:, my0 : h - my1, mx0 : w - mx1]
                pts = pts - [mx0, my0]
                tracks = tracks - [mx0, my0]
                h, w = nh, nw

    if rng.random() < 0.5 and (pts[:, 0] <= w - 1).all():  # horizontal flip
        frames = frames[:, :, ::-1].copy()
        pts = pts.copy()
        pts[:, 0] = (w - 1) - pts[:, 0]
        tracks = tracks.copy()
        tracks[:, :, 0] = (w - 1) - tracks[:, :, 0]

    g = math.exp(rng.uniform(-0.3, 0.3))  # intensity gamma
    frames = np.clip(frames, 0.0, 1.0) ** g

    return (
        ImageSequence(frames, source_resolution=(h, w)),
        QuerySet(pts, height=h, width=w),
        TrajectorySet(tracks, valid_mask=gt.valid_mask),
    )


def _prepare(
    scene: Scene, seq_len: int, config: TrainConfig, rng: np.random.Generator, min_side: int
) -> Scene:
    scene = _truncate(scene, seq_len)
    if config.augment:
        scene = _augment(scene, rng, min_side=min_side)
    if config.resolution is not None:
        seq, queries, gt = scene
        from_res = (seq.height, seq.width)
        seq2, queries2 = resize_sequence(seq, queries, config.resolution)
        gt2 = rescale_trajectories(gt, from_res, config.resolution)
        scene = (seq2, queries2, gt2)
    return scene


def _validate(model: TissueTracker, scenes: list[Scene], eval_resolution=(256, 256)) -> float:
    """Mean per-video delta_avg of the model on held-out scenes."""
    vals = []
    for seq, queries, gt in scenes:
        pred = model.track(seq, queries)
        src = seq.source_resolution
        pred_e = rescale_trajectories(pred, src, eval_resolution)
        gt_e = rescale_trajectories(gt, src, eval_resolution)
        vals.append(metrics.delta_avg(pred_e, gt_e))
    return float(np.mean(vals)) if vals else float("nan")


# ----- fit ------------------------------------------------------------------


@dataclass
class FitResult:
    best_checkpoint: Path
    last_checkpoint: Path
    log_path: Path
    best_val_delta: float
    steps: int
    val_history: list[float] = field(default_factory=list)


def fit(
    model: TissueTracker,
    train_scenes: list[Scene],
    val_scenes: list[Scene],
    config: TrainConfig,
    out_dir: str | Path,
    resume_from: str | Path | None = None,
    epoch_callback=None,
) -> FitResult:
    """Train the tracker; deterministic for a fixed config seed.

    Writes ``train_log.csv`` (step, loss, lr, val_delta_avg), the best
    validation checkpoint, and a resumable ``last.pt`` training state after
    every epoch. With an empty phase list the model is returned unchanged
    (the best checkpoint then holds the initial weights).
    ``epoch_callback(epoch_in_phase, val_delta_avg)`` may return False to stop
    early; the saved state stays resumable.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train_log.csv"
    best_path = out_dir / "checkpoint_best.pt"
    last_path = out_dir / "last.pt"

    device = next(model.parameters()).device
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )

    start_phase, start_epoch = 0, 0
    global_step = 0
    best_val = -float("inf")
    val_history: list[float] = []
    if resume_from is not None:
        state = torch.load(resume_from, map_location=device, weights_only=True)
        if state.get("format_version") != TRAIN_STATE_VERSION:
            raise ValueError("unsupported training-state version")
        model.load_state_dict(state["model_state"])
        optimizer.load_state_dict(state["optimizer_state"])
        start_phase = state["phase"]
        start_epoch = state["epoch"]
        global_step = state["global_step"]
        best_val = state["best_val"]
        val_history = list(state.get("val_history", []))

    new_log = not (resume_from is not None and log_path.exists())
    log_file = open(log_path, "w" if new_log else "a", newline="")
    writer = csv.writer(log_file)
    if new_log:
        writer.writerow(["step", "loss", "lr", "val_delta_avg"])

    if not any(epochs > 0 for epochs, _ in config.phases) or not train_scenes:
        save_checkpoint(model, best_path, extra={"val_delta_avg": None})
        log_file.close()
        return FitResult(best_path, last_path, log_path, best_val, global_step, val_history)

    def save_train_state(phase, epoch):
        torch.save(
            {
                "format_version": TRAIN_STATE_VERSION,
                "model_config": model.config,
                "model_state": model.state_dict(),
                "optimizer_state": optimizer.state_dict(),
                "phase": phase,
                "epoch": epoch,
                "global_step": global_step,
                "best_val": best_val,
                "val_history": val_history,
            },
            last_path,
        )

    min_side = max(getattr(model, "min_image_side", 16), 16)
    stop = False
    try:
        for phase_idx, (epochs, seq_len) in enumerate(config.phases):
            if stop:
                break
            if phase_idx < start_phase:
                continue
            steps_per_epoch = len(train_scenes)
            total_steps = epochs * steps_per_epoch
            first_epoch = start_epoch if phase_idx == start_phase else 0
            for epoch in range(first_epoch, epochs):
                model.train()
                order_rng = np.random.default_rng((config.seed, 7, phase_idx, epoch))
                order = order_rng.permutation(steps_per_epoch)
                for j, idx in enumerate(order):
                    step_in_phase = epoch * steps_per_epoch + j
                    lr = one_cycle_lr(
                        step_in_phase,
                        total_steps,
                        config.learning_rate,
                        pct_start=config.pct_start,
                        div_factor=config.div_factor,
                        final_div_factor=config.final_div_factor,
                    )
                    for group in optimizer.param_groups:
                        group["lr"] = lr

                    aug_rng = np.random.default_rng((config.seed, 11, phase_idx, epoch, int(idx)))
                    seq, queries, gt = _prepare(
                        train_scenes[idx], seq_len, config, aug_rng, min_side
                    )
                    frames_t = torch.from_numpy(np.array(seq.frames)).to(device)
                    queries_t = torch.from_numpy(np.array(queries.points)).to(
                        device=device, dtype=frames_t.dtype
                    )
                    state = model(frames_t, queries_t)
                    loss = trajectory_loss(state.history, gt.tracks, gt.valid_mask, config.gamma)
                    if not torch.isfinite(loss):
                        raise TrainingDiverged(batch_id=int(idx), step=global_step)
                    optimizer.zero_grad()
                    loss.backward()
                    torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
                    optimizer.step()
                    writer.writerow([global_step, f"{loss.item():.10g}", f"{lr:.10g}", ""])
                    global_step += 1

                val = float("nan")
                if (epoch + 1) % config.validate_every == 0 or epoch == epochs - 1:
                    val = _validate(model, val_scenes) if val_scenes else float("nan")
                    val_history.append(val)
                    writer.writerow([global_step, "", "", f"{val:.6f}"])
                    log_file.flush()
                    if not math.isnan(val) and val > best_val:
                        best_val = val
                        save_checkpoint(model, best_path, extra={"val_delta_avg": val})
                save_train_state(phase_idx, epoch + 1)
                if epoch_callback is not None and epoch_callback(epoch, val) is False:
                    stop = True
                    break
            start_epoch = 0
    finally:
        log_file.close()

    if not best_path.exists():
        save_checkpoint(model, best_path, extra={"val_delta_avg": None})
    return FitResult(best_path, last_path, log_path, best_val, global_step, val_history)
