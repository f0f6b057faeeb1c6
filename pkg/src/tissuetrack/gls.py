"""Global longitudinal strain from tracked point trajectories.

The ventricular length at a frame is the polyline length through the tracked
points in their base-to-apex-to-base order. Peak GLS is the relative change
from the end-diastolic length to the minimum length over the sequence, in
percent (negative values mean shortening). Test-retest agreement between
repeated measurements is summarized by the bias, the sample standard
deviation, and the mean absolute deviation of the differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import TrajectorySet


class DegenerateGeometryError(ValueError):
    """Raised when a frame's polyline collapses to zero length."""

    def __init__(self, frame: int):
        super().__init__(f"degenerate (zero-length) polyline at frame {frame}")
        self.frame = frame


@dataclass(frozen=True)
class GLSReport:
    length_curve: np.ndarray  # (S,) polyline length per frame, pixels
    peak_gls: float  # percent, negative = shortening
    ed_frame: int  # end-diastolic reference frame

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "length_curve": [float(v) for v in self.length_curve],
            "peak_gls": float(self.peak_gls),
            "ed_frame": int(self.ed_frame),
        }


@dataclass(frozen=True)
class RetestStats:
    """Agreement statistics over paired measurements: bias (mean difference),
    sample standard deviation of differences, and mean absolute deviation."""

    mu: float
    sigma: float
    mad: float

    def to_dict(self) -> dict:
        return {"schema_version": 1, "mu": self.mu, "sigma": self.sigma, "mad": self.mad}


def ventricular_length(points: np.ndarray) -> float:
    """Sum of Euclidean segment lengths of an ordered (M, 2) polyline."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise ValueError(f"polyline must be (M, 2) with M >= 2, got shape {pts.shape}")
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def length_curve(tracks, ordering=None) -> np.ndarray:
    """Per-frame polyline length of tracked points in the given order."""
    if isinstance(tracks, TrajectorySet):
        tracks = tracks.tracks
    tracks = np.asarray(tracks, dtype=np.float64)
    if tracks.ndim != 3 or tracks.shape[2] != 2:
        raise ValueError(f"tracks must be (N, S, 2), got shape {tracks.shape}")
    n = tracks.shape[0]
    if ordering is None:
        ordering = np.arange(n)
    ordering = np.asarray(ordering, dtype=int)
    if ordering.size < 2:
        raise ValueError("ordering must select at least 2 points")
    if ordering.min() < 0 or ordering.max() >= n or len(set(ordering.tolist())) != ordering.size:
        raise ValueError(f"invalid ordering for {n} points: {ordering.tolist()}")
    path = tracks[ordering]  # (M, S, 2)
    seg = np.linalg.norm(np.diff(path, axis=0), axis=-1)  # (M-1, S)
    return seg.sum(axis=0)


def peak_gls(tracks, ordering=None, ed_frame: int = 0) -> GLSReport:
    """Peak global longitudinal strain of a tracked point polyline.

    ``ordering`` lists point indices base-to-apex-to-base (defaults to the
    stored order). Raises :class:`DegenerateGeometryError` naming the first
    frame whose polyline length is zero.
    """
    lengths = length_curve(tracks, ordering)
    s = lengths.shape[0]
    if not (0 <= ed_frame < s):
        raise ValueError(f"ed_frame {ed_frame} outside [0, {s})")
    for frame, value in enumerate(lengths):
        if value <= 0.0:
            raise DegenerateGeometryError(frame)
    peak = 100.0 * (lengths.min() - lengths[ed_frame]) / lengths[ed_frame]
    return GLSReport(length_curve=lengths, peak_gls=float(peak), ed_frame=ed_frame)


def test_retest(pairs) -> RetestStats:
    """Agreement statistics for (test, retest) measurement pairs.

    Differences are ``test - retest``; sigma uses the sample (n-1) convention.
    """
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
        raise ValueError(f"need at least 2 (test, retest) pairs, got shape {arr.shape}")
    d = arr[:, 0] - arr[:, 1]
    return RetestStats(
        mu=float(np.mean(d)),
        sigma=float(np.std(d, ddof=1)),
        mad=float(np.mean(np.abs(d))),
    )
