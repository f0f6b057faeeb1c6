"""Two-stage coarse-to-fine point tracker.

Stage 1 initializes every trajectory from global cost volumes between the
query's frame-0 appearance and the coarse (stride-8) features of all frames,
decoded by a temporal 1D residual ConvNet. Stage 2 iteratively refines the
trajectories on fine (stride-2) features: per frame it correlates appearance
templates from the current frame and from frames 0, s-2 and s-4 with a
neighborhood around the current estimate, mixes the concatenated cost volumes
through a linear score layer, and a deeper temporal ConvNet emits additive
position updates. Frame 0 stays anchored to the query throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import ImageSequence, QuerySet, TrajectorySet, rescale_trajectories, resize_sequence
from .correlation import (
    build_pyramid,
    grid_correlation,
    grid_correlation_multi,
    sample_point_features,
)
from .encoder import FeatureVolume, FrameEncoder

CHECKPOINT_VERSION = 1


class TrackingMemoryError(RuntimeError):
    """Raised when tracking runs out of memory; carries the failing (S, N)."""

    def __init__(self, frames: int, points: int):
        super().__init__(
            f"out of memory tracking {points} points over {frames} frames; "
            "chunk the query points and retry"
        )
        self.frames = frames
        self.points = points


def template_indices(s: int) -> tuple[int, int, int]:
    """Template frames used to refine frame s: the first frame plus two
    frames at a fixed temporal span back, clamped at the sequence start."""
    if s < 0:
        raise ValueError(f"frame index must be >= 0, got {s}")
    return (0, max(s - 2, 0), max(s - 4, 0))


def _template_index_array(frames: int, device) -> torch.Tensor:
    s = torch.arange(frames, device=device)
    return torch.stack([torch.zeros_like(s), (s - 2).clamp(min=0), (s - 4).clamp(min=0)], dim=1)


@dataclass
class RefinementState:
    """Trajectories at refinement iteration ``iteration`` plus the full
    per-iteration history (history[0] is the stage-1 initialization)."""

    iteration: int
    tracks: torch.Tensor  # (N, S, 2)
    history: list[torch.Tensor] = field(default_factory=list)

    def __post_init__(self):
        if not self.history:
            self.history = [self.tracks]
        if len(self.history) != self.iteration + 1:
            raise ValueError(
                f"history length {len(self.history)} inconsistent with iteration {self.iteration}"
            )


class ChannelNorm(nn.Module):
    """LayerNorm over the channel dim of (N, C, S) tensors, per point and frame."""

    def __init__(self, channels, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        x = (x - mu) / torch.sqrt(var + self.eps)
        return x * self.weight[None, :, None] + self.bias[None, :, None]


class TemporalBlock(nn.Module):
    def __init__(self, channels, dilation):
        super().__init__()
        self.conv1 = nn.Conv1d(channels, channels, 3, padding=dilation, dilation=dilation)
        self.norm1 = ChannelNorm(channels)
        self.conv2 = nn.Conv1d(channels, channels, 3, padding=1)
        self.norm2 = ChannelNorm(channels)

    def forward(self, x):
        y = F.relu(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        return F.relu(x + y)


class TemporalResNet(nn.Module):
    """1D residual ConvNet over time; dilations stack to a receptive field of
    31 frames per 4 blocks."""

    def __init__(self, in_channels, hidden, blocks):
        super().__init__()
        dilations = [1, 2, 4, 8]
        self.proj = nn.Conv1d(in_channels, hidden, 1)
        self.blocks = nn.Sequential(
            *[TemporalBlock(hidden, dilations[i % 4]) for i in range(blocks)]
        )
        self.out = nn.Conv1d(hidden, 2, 1)
        nn.init.normal_(self.out.weight, std=1e-2)
        nn.init.zeros_(self.out.bias)

    def forward(self, x):  # (N, C, S) -> (N, S, 2)
        y = self.blocks(self.proj(x))
        return self.out(y).permute(0, 2, 1)


class CoarseHead(nn.Module):
    """Maps per-frame cost features (+ normalized query location) to per-frame
    displacements from the query."""

    def __init__(self, cost_dim, hidden=96, blocks=4):
        super().__init__()
        self.net = TemporalResNet(cost_dim + 2, hidden, blocks)

    def forward(self, cost, loc):
        # cost: (N, S, F); loc: (N, 2) in [-1, 1]
        n, s, _ = cost.shape
        x = torch.cat([cost, loc.unsqueeze(1).expand(n, s, 2)], dim=-1)
        return self.net(x.permute(0, 2, 1))


class FineHead(nn.Module):
    """Linear score layer over concatenated multi-template cost volumes,
    followed by a deeper temporal ConvNet emitting additive updates."""

    def __init__(self, cost_dim, hidden=192, blocks=8):
        super().__init__()
        self.score = nn.Conv1d(cost_dim, hidden, 1)
        self.net = TemporalResNet(hidden, hidden, blocks)

    def forward(self, cost):  # (N, S, 4F) -> (N, S, 2)
        scores = self.score(cost.permute(0, 2, 1))  # (N, hidden, S)
        return self.net(scores)


class TissueTracker(nn.Module):
    """Coarse-to-fine tracker for query points on image sequences.

    Parameters mirror the architecture defaults: 64 feature channels, 4
    pyramid levels with neighborhood radius 3, 4 refinement iterations, and
    the fine head twice as deep and wide as the coarse head. ``resolution``
    is the working size sequences are resized to inside :meth:`track`
    (``None`` tracks at native resolution).
    """

    def __init__(
        self,
        channels: int = 64,
        levels: int = 4,
        radius: int = 3,
        iterations: int = 4,
        coarse_hidden: int = 96,
        coarse_blocks: int = 4,
        fine_ratio: int = 2,
        resolution: tuple[int, int] | None = (256, 256),
    ):
        super().__init__()
        self.config = {
            "channels": channels,
            "levels": levels,
            "radius": radius,
            "iterations": iterations,
            "coarse_hidden": coarse_hidden,
            "coarse_blocks": coarse_blocks,
            "fine_ratio": fine_ratio,
            "resolution": None if resolution is None else tuple(resolution),
        }
        self.levels = levels
        self.radius = radius
        self.iterations = iterations
        self.resolution = None if resolution is None else tuple(resolution)
        # smallest image side whose stride-8 feature map still supports the
        # full pyramid depth
        self.min_image_side = 8 * (2 ** (levels - 1) - 1) + 1
        cost_dim = levels * (2 * radius + 1) ** 2
        self.encoder = FrameEncoder(channels)
        self.coarse_head = CoarseHead(cost_dim, hidden=coarse_hidden, blocks=coarse_blocks)
        self.fine_head = FineHead(
            4 * cost_dim,
            hidden=coarse_hidden * fine_ratio,
            blocks=coarse_blocks * fine_ratio,
        )

    # ----- stage 1 -------------------------------------------------------

    def init_trajectories(self, coarse: FeatureVolume, queries: torch.Tensor) -> torch.Tensor:
        """Initialize all trajectories from the coarse feature volume.

        queries: (N, 2) pixel coordinates on frame 0. Returns (N, S, 2) with
        frame 0 equal to the queries exactly.
        """
        if coarse.stride != 8:
            raise ValueError(f"stage 1 expects stride-8 features, got {coarse.stride}")
        feats = coarse.features
        n = queries.shape[0]
        s = feats.shape[0]
        centers = queries.view(n, 1, 2).expand(n, s, 2)
        f0 = sample_point_features(feats[:1], queries.view(n, 1, 2), coarse.stride)  # (N, 1, d)
        pyr = build_pyramid(feats, self.levels, stride=coarse.stride)
        cost = grid_correlation(f0, pyr, centers, self.radius)  # (N, S, L, K)
        cost = cost.reshape(n, s, -1)
        h, w = coarse.image_size
        norm = queries.new_tensor([max(w - 1, 1), max(h - 1, 1)])
        loc = 2.0 * queries / norm - 1.0
        offsets = self.coarse_head(cost, loc)  # (N, S, 2)
        tracks = queries.unsqueeze(1) + offsets
        return torch.cat([queries.unsqueeze(1), tracks[:, 1:]], dim=1)

    # ----- stage 2 -------------------------------------------------------

    def refine_step(
        self, state: RefinementState, fine: FeatureVolume, queries: torch.Tensor
    ) -> RefinementState:
        """One reinforcement iteration: additive updates from multi-template
        cost volumes on the fine features."""
        if fine.stride != 2:
            raise ValueError(f"stage 2 expects stride-2 features, got {fine.stride}")
        if state.iteration >= self.iterations:
            raise ValueError(f"refinement already ran {state.iteration} iterations")
        feats = fine.features
        tracks = state.tracks  # (N, S, 2)
        n, s, _ = tracks.shape

        f_all = sample_point_features(feats, tracks, fine.stride)  # (N, S, d)
        tidx = _template_index_array(s, tracks.device)  # (S, 3)
        pyr = build_pyramid(feats, self.levels, stride=fine.stride)
        # templates: current frame, then frames 0, s-2, s-4 at their estimates
        f_stack = torch.stack(
            [f_all, f_all[:, tidx[:, 0]], f_all[:, tidx[:, 1]], f_all[:, tidx[:, 2]]], dim=2
        )  # (N, S, 4, d)
        volumes = grid_correlation_multi(f_stack, pyr, tracks, self.radius)  # (N, S, 4, L, K)
        cost = volumes.reshape(n, s, -1)  # (N, S, 4LK)

        delta = self.fine_head(cost)  # (N, S, 2)
        new_tracks = tracks + delta
        new_tracks = torch.cat([queries.unsqueeze(1), new_tracks[:, 1:]], dim=1)
        return RefinementState(
            iteration=state.iteration + 1,
            tracks=new_tracks,
            history=state.history + [new_tracks],
        )

    # ----- full pipeline --------------------------------------------------

    def forward(self, frames: torch.Tensor, queries: torch.Tensor) -> RefinementState:
        """Track queries through a (S, H, W) frame tensor at its native size.

        Returns the final refinement state; ``state.history`` holds the
        initialization plus every iteration's trajectories for the loss.
        """
        s, h, w = frames.shape
        if min(h, w) < self.min_image_side:
            raise ValueError(
                f"frames are {h}x{w} but the pyramid depth needs at least "
                f"{self.min_image_side} pixels per side; resize the input or "
                "set a working resolution"
            )
        flow = torch.zeros_like(frames)
        flow[1:] = frames[1:] - frames[:-1]
        x = torch.stack([frames, flow], dim=1)  # (S, 2, H, W)
        fine_feats, coarse_feats = self.encoder(x)
        fine = FeatureVolume(fine_feats, stride=2, image_size=(h, w))
        coarse = FeatureVolume(coarse_feats, stride=8, image_size=(h, w))
        init = self.init_trajectories(coarse, queries)
        state = RefinementState(iteration=0, tracks=init, history=[init])
        for _ in range(self.iterations):
            state = self.refine_step(state, fine, queries)
        return state

    @torch.no_grad()
    def track(
        self,
        seq: ImageSequence,
        queries: QuerySet,
        return_state: bool = False,
    ):
        """Track query points through a sequence, returning trajectories at
        the sequence's source resolution.

        The sequence is resized to the model's working resolution, tracked in
        a single pass over all frames, and the result rescaled back. Frame 0
        of the output equals the query points exactly.
        """
        was_training = self.training
        self.eval()
        try:
            if self.resolution is not None:
                work_seq, work_queries = resize_sequence(seq, queries, self.resolution)
            else:
                work_seq, work_queries = seq, queries
            device = next(self.parameters()).device
            dtype = next(self.parameters()).dtype
            frames_t = torch.from_numpy(np.array(work_seq.frames)).to(device=device, dtype=dtype)
            queries_t = torch.from_numpy(np.array(work_queries.points)).to(
                device=device, dtype=dtype
            )
            try:
                state = self.forward(frames_t, queries_t)
            except (RuntimeError, MemoryError) as e:
                msg = str(e).lower()
                if isinstance(e, MemoryError) or "memory" in msg or "alloc" in msg:
                    raise TrackingMemoryError(seq.frame_count, queries.count) from e
                raise
        finally:
            self.train(was_training)

        tracks = state.tracks.detach().cpu().double().numpy()
        work_res = (work_seq.height, work_seq.width)
        out = rescale_trajectories(
            TrajectorySet(tracks), work_res, seq.source_resolution
        ).tracks.copy()
        # the resize/rescale round trip is only float-exact; restore the
        # anchoring contract bit-exactly
        scale = np.array(
            [seq.source_resolution[1] / seq.width, seq.source_resolution[0] / seq.height]
        )
        out[:, 0, :] = queries.points * scale
        result = TrajectorySet(out)
        if return_state:
            return result, state
        return result


def static_tracks(queries: QuerySet, frames: int) -> TrajectorySet:
    """Baseline that copies each query position to every frame."""
    tracks = np.repeat(queries.points[:, None, :], frames, axis=1)
    return TrajectorySet(tracks)


# ----- checkpoints ---------------------------------------------------------


def save_checkpoint(model: TissueTracker, path: str | Path, extra: dict | None = None) -> Path:
    """Write a single-file checkpoint: version tag, model config, named tensors."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": model.config,
        "state_dict": model.state_dict(),
    }
    if extra:
        payload["extra"] = extra
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path, device: str = "cpu") -> tuple[TissueTracker, dict]:
    """Load a checkpoint written by :func:`save_checkpoint`."""
    payload = torch.load(path, map_location=device, weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    cfg = dict(payload["model_config"])
    if cfg.get("resolution") is not None:
        cfg["resolution"] = tuple(cfg["resolution"])
    model = TissueTracker(**cfg)
    model.load_state_dict(payload["state_dict"])
    model.to(device)
    return model, payload.get("extra", {})
