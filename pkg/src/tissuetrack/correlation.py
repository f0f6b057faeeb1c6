"""Bilinear feature sampling, feature pyramids, and cost-volume construction.

All functions here are pure and differentiable. Feature maps are stored
frame-batched as ``(S, d, h, w)`` tensors; point coordinates arrive in pixel
units of the original image and are mapped into the grid of each pyramid
level internally. A feature cell at stride ``t`` covers pixels
``[t*u, t*(u+1))``, so pixel coordinate ``x`` lands at grid coordinate
``(x - (t - 1) / 2) / t``. Sampling outside a map clamps to the border
(edge replication).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .core import CoordinateError


@dataclass(frozen=True)
class FeaturePyramid:
    """L feature maps, level l pooled by an extra factor 2**l."""

    levels: tuple[torch.Tensor, ...]  # each (S, d, h_l, w_l)
    stride: int  # stride of level 0 relative to image pixels

    @property
    def level_count(self) -> int:
        return len(self.levels)


@dataclass(frozen=True)
class CostVolume:
    """Correlation scores over a (2r+1)^2 neighborhood at every pyramid level."""

    scores: torch.Tensor  # (L, 2r+1, 2r+1)
    anchor: tuple[float, float]  # pixel location the grid is centered on


def pixel_to_grid(coords: torch.Tensor, stride: float) -> torch.Tensor:
    """Map pixel coordinates to the grid of a feature map at the given stride."""
    return (coords - (stride - 1.0) / 2.0) / stride


def bilinear_sample(fmap: torch.Tensor, point: torch.Tensor) -> torch.Tensor:
    """Bilinearly sample a single feature map at continuous grid coordinates.

    fmap: (d, h, w); point: (2,) or (M, 2) in the map's own grid units.
    Exact at integer coordinates; differentiable with respect to both the map
    and the point. Coordinates outside the map are clamped to the border.
    """
    fmap = torch.as_tensor(fmap)
    point = torch.as_tensor(point) if not isinstance(point, torch.Tensor) else point
    point = point.to(dtype=fmap.dtype)
    if torch.isnan(point).any():
        raise CoordinateError("sampling point contains NaN")
    squeeze = point.ndim == 1
    pts = point.reshape(-1, 2)
    d, h, w = fmap.shape

    x = pts[:, 0].clamp(0.0, w - 1.0)
    y = pts[:, 1].clamp(0.0, h - 1.0)
    x0 = x.floor().clamp(0, max(w - 2, 0))
    y0 = y.floor().clamp(0, max(h - 2, 0))
    wx = (x - x0).unsqueeze(-1)
    wy = (y - y0).unsqueeze(-1)
    x0 = x0.long()
    y0 = y0.long()
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)

    flat = fmap.permute(1, 2, 0).reshape(h * w, d)
    top = flat[y0 * w + x0] * (1.0 - wx) + flat[y0 * w + x1] * wx
    bot = flat[y1 * w + x0] * (1.0 - wx) + flat[y1 * w + x1] * wx
    out = top * (1.0 - wy) + bot * wy
    return out[0] if squeeze else out


def _sample_frames(maps: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
    """Sample frame-batched maps at per-frame grid coordinates.

    maps: (S, d, h, w); coords: (S, M, 2) in grid units. Returns (S, M, d).
    """
    s, d, h, w = maps.shape
    x = coords[..., 0].clamp(0.0, w - 1.0)
    y = coords[..., 1].clamp(0.0, h - 1.0)
    nx = 2.0 * x / max(w - 1, 1) - 1.0
    ny = 2.0 * y / max(h - 1, 1) - 1.0
    grid = torch.stack([nx, ny], dim=-1).unsqueeze(2)  # (S, M, 1, 2)
    out = F.grid_sample(
        maps, grid.to(maps.dtype), mode="bilinear", padding_mode="border", align_corners=True
    )  # (S, d, M, 1)
    return out[..., 0].permute(0, 2, 1)


def build_pyramid(features: torch.Tensor, levels: int, stride: int = 1) -> FeaturePyramid:
    """Average-pool pyramid: level l is a 2x2/stride-2 mean of level l-1.

    ``features`` may be a single (d, h, w) map or a frame-batched
    (S, d, h, w) stack. Spatial dims must be at least 2**(levels - 1).
    """
    if levels < 1:
        raise ValueError(f"need at least one level, got {levels}")
    t = torch.as_tensor(features)
    if t.ndim == 3:
        t = t.unsqueeze(0)
    if t.ndim != 4:
        raise ValueError(f"features must be (d, h, w) or (S, d, h, w), got {tuple(t.shape)}")
    h, w = t.shape[-2:]
    need = 2 ** (levels - 1)
    if h < need or w < need:
        raise ValueError(f"spatial dims {h}x{w} too small for {levels} pyramid levels")
    out = [t]
    for _ in range(levels - 1):
        t = F.avg_pool2d(t, kernel_size=2, stride=2)
        out.append(t)
    return FeaturePyramid(levels=tuple(out), stride=stride)


def _neighborhood_offsets(radius: int, dtype, device) -> torch.Tensor:
    """(2r+1)^2 grid offsets in (x, y) order, rows varying over y."""
    rng = torch.arange(-radius, radius + 1, dtype=dtype, device=device)
    dy, dx = torch.meshgrid(rng, rng, indexing="ij")
    return torch.stack([dx.reshape(-1), dy.reshape(-1)], dim=-1)  # (K, 2)


def grid_correlation_multi(
    f: torch.Tensor,
    pyramid: FeaturePyramid,
    centers: torch.Tensor,
    radius: int,
) -> torch.Tensor:
    """Correlate several templates against shared pyramid neighborhoods.

    f: (N, S, T, d) template vectors; centers: (N, S, 2) pixel coordinates.
    Every level's (2r+1)^2 neighborhood around the centers is sampled once at
    unit spacing in that level's grid and dotted with each of the T templates,
    scaled by 1/sqrt(d). Returns (N, S, T, (2r+1)^2 * L) laid out per template
    as (N, S, T, L, K).
    """
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    n, s_pts, _ = centers.shape
    s = pyramid.levels[0].shape[0]
    if s_pts != s:
        raise ValueError(f"centers cover {s_pts} frames but pyramid has {s}")
    d = pyramid.levels[0].shape[1]
    offsets = _neighborhood_offsets(radius, centers.dtype, centers.device)  # (K, 2)
    k = offsets.shape[0]
    scale = 1.0 / math.sqrt(d)
    scores = []
    for lvl, fmap in enumerate(pyramid.levels):
        eff = pyramid.stride * (2**lvl)
        g = pixel_to_grid(centers, eff)  # (N, S, 2)
        pts = g.unsqueeze(2) + offsets.view(1, 1, k, 2)  # (N, S, K, 2)
        vals = _sample_frames(fmap, pts.permute(1, 0, 2, 3).reshape(s, n * k, 2))
        vals = vals.reshape(s, n, k, d).permute(1, 0, 2, 3)  # (N, S, K, d)
        # (N, S, T, K): dot each template with every neighborhood sample
        scores.append((vals.unsqueeze(2) * f.unsqueeze(3)).sum(-1) * scale)
    return torch.stack(scores, dim=3)  # (N, S, T, L, K)


def grid_correlation(
    f: torch.Tensor,
    pyramid: FeaturePyramid,
    centers: torch.Tensor,
    radius: int,
) -> torch.Tensor:
    """Single-template correlation: f (N, S, d) (or (N, 1, d) broadcast),
    centers (N, S, 2) -> (N, S, L, (2r+1)^2)."""
    n = centers.shape[0]
    s = pyramid.levels[0].shape[0]
    d = pyramid.levels[0].shape[1]
    f = f.expand(n, s, d)
    return grid_correlation_multi(f.unsqueeze(2), pyramid, centers, radius)[:, :, 0]


def _single_cost_volume(
    f: torch.Tensor, pyramid: FeaturePyramid, point, radius: int
) -> CostVolume:
    f = torch.as_tensor(f)
    if pyramid.levels[0].shape[0] != 1:
        raise ValueError("per-point cost volumes expect a single-frame pyramid")
    pt = torch.as_tensor(point, dtype=f.dtype, device=f.device).reshape(2)
    if torch.isnan(pt).any():
        raise CoordinateError("cost volume anchor contains NaN")
    centers = pt.view(1, 1, 2)
    scores = grid_correlation(f.view(1, 1, -1), pyramid, centers, radius)
    side = 2 * radius + 1
    grid = scores[0, 0].reshape(pyramid.level_count, side, side)
    return CostVolume(scores=grid, anchor=(float(pt[0]), float(pt[1])))


def global_cost_volume(
    f: torch.Tensor, pyramid: FeaturePyramid, point, radius: int
) -> CostVolume:
    """Cost volume of a frame-0 template against one frame's coarse pyramid.

    The neighborhood is centered on the query-point location; at the top
    pyramid level the grid spans a wide receptive field, which is what makes
    the first-stage correlation effectively global.
    """
    return _single_cost_volume(f, pyramid, point, radius)


def multicrop_cost_volume(
    f: torch.Tensor, pyramid: FeaturePyramid, point, radius: int
) -> CostVolume:
    """Cost volume on fine features around the current trajectory estimate.

    Same construction as :func:`global_cost_volume` but intended for
    stride-2 feature pyramids with the template sampled at the current
    estimate rather than at the query location.
    """
    return _single_cost_volume(f, pyramid, point, radius)


def sample_point_features(
    features: torch.Tensor, positions: torch.Tensor, stride: int
) -> torch.Tensor:
    """Sample per-frame feature vectors along trajectories.

    features: (S, d, h, w); positions: (N, S, 2) pixel coordinates.
    Returns (N, S, d).
    """
    n, s, _ = positions.shape
    g = pixel_to_grid(positions, stride)
    vals = _sample_frames(features, g.permute(1, 0, 2))  # (S, N, d)
    return vals.permute(1, 0, 2)
