"""Core data types, coordinate conventions, and resolution plumbing.

Conventions used throughout the package:

* Images are grayscale, stored as ``(S, H, W)`` float32 arrays with
  intensities in ``[0, 1]``.
* Point coordinates are ``(x, y)`` with ``x`` horizontal (column) and
  ``y`` vertical (row), origin at the top-left pixel center. Coordinates
  are continuous and kept in float64.
* Trajectories are ``(N, S, 2)`` arrays: N points tracked over S frames.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

SCHEMA_VERSION = 1

MIN_SIDE = 16  # smallest supported image side


class CoordinateError(ValueError):
    """Raised for non-finite or out-of-bounds point coordinates."""


def _as_readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ImageSequence:
    """A grayscale image sequence plus the resolution it originated from.

    ``source_resolution`` is the ``(height, width)`` the sequence had before
    any resizing, so predictions can be mapped back to it.
    """

    frames: np.ndarray  # (S, H, W) float32 in [0, 1]
    source_resolution: tuple[int, int] | None = None

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 3:
            raise ValueError(f"frames must be (S, H, W), got shape {frames.shape}")
        s, h, w = frames.shape
        if s < 2:
            raise ValueError(f"need at least 2 frames, got {s}")
        if h < MIN_SIDE or w < MIN_SIDE:
            raise ValueError(f"frames must be at least {MIN_SIDE}x{MIN_SIDE}, got {h}x{w}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("frames contain non-finite values")
        if frames.min() < 0.0 or frames.max() > 1.0:
            raise ValueError("intensities must lie in [0, 1]")
        object.__setattr__(self, "frames", _as_readonly(frames))
        res = self.source_resolution
        if res is None:
            res = (h, w)
        res = (int(res[0]), int(res[1]))
        if res[0] <= 0 or res[1] <= 0:
            raise ValueError(f"source_resolution must be positive, got {res}")
        object.__setattr__(self, "source_resolution", res)

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


@dataclass(frozen=True)
class QuerySet:
    """Points on frame 0 whose trajectories are to be estimated.

    Bounds are checked at construction: every point must satisfy
    ``0 <= x < width`` and ``0 <= y < height``. Out-of-bounds input raises
    :class:`CoordinateError` instead of being clamped.
    """

    points: np.ndarray  # (N, 2) float64, (x, y)
    height: int
    width: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"points must be (N, 2), got shape {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("need at least one query point")
        if not np.all(np.isfinite(pts)):
            raise CoordinateError("query points contain non-finite coordinates")
        x, y = pts[:, 0], pts[:, 1]
        if np.any(x < 0) or np.any(x >= self.width) or np.any(y < 0) or np.any(y >= self.height):
            raise CoordinateError(
                f"query points out of bounds for {self.height}x{self.width} image"
            )
        object.__setattr__(self, "points", _as_readonly(pts))

    @property
    def count(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class TrajectorySet:
    """N point tracks over S frames, with a per-point validity mask.

    Points flagged invalid (e.g. rejected during quality control) are kept in
    the array but excluded from losses and metrics.
    """

    tracks: np.ndarray  # (N, S, 2) float64
    valid_mask: np.ndarray | None = None  # (N,) bool

    def __post_init__(self):
        tracks = np.asarray(self.tracks, dtype=np.float64)
        if tracks.ndim != 3 or tracks.shape[2] != 2:
            raise ValueError(f"tracks must be (N, S, 2), got shape {tracks.shape}")
        if not np.all(np.isfinite(tracks)):
            raise ValueError("tracks contain non-finite coordinates")
        mask = self.valid_mask
        if mask is None:
            mask = np.ones(tracks.shape[0], dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (tracks.shape[0],):
            raise ValueError(f"valid_mask must be (N,), got shape {mask.shape}")
        object.__setattr__(self, "tracks", _as_readonly(tracks))
        object.__setattr__(self, "valid_mask", _as_readonly(mask))

    @property
    def point_count(self) -> int:
        return self.tracks.shape[0]

    @property
    def frame_count(self) -> int:
        return self.tracks.shape[1]

    def queries(self, height: int, width: int) -> QuerySet:
        """The frame-0 positions as a QuerySet with the given bounds."""
        return QuerySet(self.tracks[:, 0, :], height=height, width=width)


def resize_sequence(
    seq: ImageSequence, points: QuerySet, target: tuple[int, int]
) -> tuple[ImageSequence, QuerySet]:
    """Bilinearly resize a sequence and scale query points to match.

    ``target`` is ``(height, width)``. Point coordinates scale by
    ``(target_w / W, target_h / H)``; ``source_resolution`` is carried over
    unchanged so the resize can be inverted with :func:`rescale_trajectories`.
    """
    th, tw = int(target[0]), int(target[1])
    if th < MIN_SIDE or tw < MIN_SIDE:
        raise ValueError(f"target resolution must be at least {MIN_SIDE}, got {target}")
    if not np.all(np.isfinite(points.points)):
        raise CoordinateError("query points contain non-finite coordinates")

    if (th, tw) == (seq.height, seq.width):
        return seq, points

    t = torch.from_numpy(np.array(seq.frames))  # (S, H, W)
    resized = F.interpolate(
        t.unsqueeze(1), size=(th, tw), mode="bilinear", align_corners=False
    ).squeeze(1)
    frames = resized.clamp_(0.0, 1.0).numpy()

    scale = np.array([tw / seq.width, th / seq.height], dtype=np.float64)
    scaled = points.points * scale
    return (
        ImageSequence(frames, source_resolution=seq.source_resolution),
        QuerySet(scaled, height=th, width=tw),
    )


def rescale_trajectories(
    tracks: TrajectorySet, from_res: tuple[int, int], to_res: tuple[int, int]
) -> TrajectorySet:
    """Linearly rescale trajectories between resolutions (both as (H, W))."""
    fh, fw = from_res
    th, tw = to_res
    if fh <= 0 or fw <= 0 or th <= 0 or tw <= 0:
        raise ValueError(f"resolutions must be positive, got {from_res} -> {to_res}")
    scale = np.array([tw / fw, th / fh], dtype=np.float64)
    return TrajectorySet(tracks.tracks * scale, valid_mask=tracks.valid_mask)


def frame_flow(seq: ImageSequence) -> np.ndarray:
    """Frame-to-frame intensity difference stack, aligned 1:1 with frames.

    Element ``s`` is ``frames[s] - frames[s-1]`` for ``s >= 1``; element 0 is
    all zeros so the stack can be concatenated channel-wise with the frames.
    """
    if seq.frame_count < 2:
        raise ValueError("frame_flow needs at least 2 frames")
    flow = np.zeros_like(seq.frames)
    flow[1:] = seq.frames[1:] - seq.frames[:-1]
    return flow


# ---------------------------------------------------------------------------
# Sequence container format
#
# A sequence directory holds:
#   frames/0000.png, 0001.png, ...   16-bit grayscale PNG, zero-padded index
#   meta.json                        frame_count, height, width,
#                                    source_resolution, optional ground-truth
#                                    tracks (N x S x 2) and valid_mask
# All coordinates in meta.json are stored at the source resolution.
# ---------------------------------------------------------------------------

_PNG_MAX = 65535


def save_sequence(
    directory: str | Path,
    seq: ImageSequence,
    tracks: TrajectorySet | None = None,
) -> Path:
    """Write a sequence (and optional ground-truth tracks) in container format."""
    directory = Path(directory)
    frames_dir = directory / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    for s in range(seq.frame_count):
        raw = np.round(seq.frames[s] * _PNG_MAX).astype(np.uint16)
        Image.fromarray(raw).save(frames_dir / f"{s:04d}.png")
    meta = {
        "schema_version": SCHEMA_VERSION,
        "frame_count": seq.frame_count,
        "height": seq.height,
        "width": seq.width,
        "source_resolution": list(seq.source_resolution),
    }
    if tracks is not None:
        meta["tracks"] = tracks.tracks.tolist()
        meta["valid_mask"] = tracks.valid_mask.tolist()
    with open(directory / "meta.json", "w") as f:
        json.dump(meta, f, sort_keys=True)
    return directory


def load_sequence(directory: str | Path) -> tuple[ImageSequence, TrajectorySet | None]:
    """Load a sequence directory written by :func:`save_sequence`."""
    directory = Path(directory)
    with open(directory / "meta.json") as f:
        meta = json.load(f)
    count = int(meta["frame_count"])
    frames = []
    for s in range(count):
        img = Image.open(directory / "frames" / f"{s:04d}.png")
        frames.append(np.asarray(img, dtype=np.float32) / _PNG_MAX)
    stack = np.stack(frames)
    if stack.shape[1:] != (meta["height"], meta["width"]):
        raise ValueError(
            f"frame shape {stack.shape[1:]} does not match meta "
            f"({meta['height']}, {meta['width']})"
        )
    seq = ImageSequence(stack, source_resolution=tuple(meta["source_resolution"]))
    tracks = None
    if "tracks" in meta:
        tracks = TrajectorySet(
            np.asarray(meta["tracks"], dtype=np.float64),
            valid_mask=np.asarray(meta.get("valid_mask"), dtype=bool)
            if meta.get("valid_mask") is not None
            else None,
        )
    return seq, tracks
