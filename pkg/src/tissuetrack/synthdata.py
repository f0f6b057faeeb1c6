"""Synthetic ultrasound-like sequences with exact ground-truth trajectories.

A scene is a static speckle texture, brightened along a U-shaped band (a
myocardium analogue), deformed by an analytic time-varying warp: anisotropic
contraction about the image center (full amplitude along the vertical
apex-base axis, a configurable fraction of it transversally) plus a small
rotation, driven by a cyclic phase that is zero at the first and last frame
and peaks exactly at mid-sequence. Because the warp is affine per frame,
ground-truth tracks are closed form and the peak shortening of any straight
polyline along the axis equals the configured amplitude exactly, which makes
strain computations testable end to end. Speckle realism is deliberately
traded for verifiable ground truth.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from .core import ImageSequence, QuerySet, TrajectorySet, load_sequence, save_sequence

MANIFEST_NAME = "manifest.json"


@dataclass
class SceneConfig:
    resolution: tuple[int, int] = (128, 128)  # (H, W)
    frames: int = 32
    points: int = 16
    speckle_density: float = 0.15
    grain_size: float = 2.5  # autocorrelation length of the speckle, pixels
    amplitude: float = 0.15  # peak contraction along the apex-base axis
    rotation: float = 0.03  # peak rotation, radians
    transverse_ratio: float = 0.4  # transverse contraction as a fraction of axial
    drift: tuple[float, float] = (0.0, 0.0)  # (vx, vy) pixels per frame
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        h, w = self.resolution
        if h < 16 or w < 16:
            raise ValueError(f"resolution must be at least 16x16, got {self.resolution}")
        if self.frames < 2:
            raise ValueError(f"need at least 2 frames, got {self.frames}")
        if self.points < 1:
            raise ValueError(f"need at least 1 point, got {self.points}")
        if not (0.0 <= self.amplitude < 0.5):
            raise ValueError(f"amplitude must be in [0, 0.5), got {self.amplitude}")
        if self.noise < 0:
            raise ValueError(f"noise must be >= 0, got {self.noise}")
        if self.grain_size <= 0:
            raise ValueError(f"grain_size must be > 0, got {self.grain_size}")
        if not (0.0 < self.speckle_density <= 1.0):
            raise ValueError(f"speckle_density must be in (0, 1], got {self.speckle_density}")

    def to_dict(self) -> dict:
        return {
            "resolution": list(self.resolution),
            "frames": self.frames,
            "points": self.points,
            "speckle_density": self.speckle_density,
            "grain_size": self.grain_size,
            "amplitude": self.amplitude,
            "rotation": self.rotation,
            "transverse_ratio": self.transverse_ratio,
            "drift": list(self.drift),
            "noise": self.noise,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        d["resolution"] = tuple(d["resolution"])
        d["drift"] = tuple(d.get("drift", (0.0, 0.0)))
        return cls(**d)


def phase_profile(frames: int) -> np.ndarray:
    """Cyclic deformation phase: 0 at both ends, exactly 1 at mid-sequence."""
    s = np.arange(frames, dtype=np.float64)
    peak = max(1, round((frames - 1) / 2))
    phi = np.empty(frames)
    up = s <= peak
    phi[up] = np.sin(np.pi * s[up] / (2.0 * peak)) ** 2
    if peak < frames - 1:
        down = ~up
        phi[down] = np.sin(np.pi * (frames - 1 - s[down]) / (2.0 * (frames - 1 - peak))) ** 2
    return phi


class CyclicWarp:
    """Closed-form per-frame warp: scale about the image center (by the phase
    profile of the contraction amplitude) plus rotation and linear drift."""

    def __init__(self, cfg: SceneConfig):
        h, w = cfg.resolution
        self.center = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
        self.drift = np.asarray(cfg.drift, dtype=np.float64)
        phi = phase_profile(cfg.frames)
        ax = 1.0 - cfg.amplitude * phi
        tr = 1.0 - cfg.transverse_ratio * cfg.amplitude * phi
        theta = cfg.rotation * phi
        cos, sin = np.cos(theta), np.sin(theta)
        # per-frame linear map R(theta) @ diag(tr, ax); x transverse, y axial
        self.mats = np.empty((cfg.frames, 2, 2))
        self.mats[:, 0, 0] = cos * tr
        self.mats[:, 0, 1] = -sin * ax
        self.mats[:, 1, 0] = sin * tr
        self.mats[:, 1, 1] = cos * ax
        self.inv_mats = np.linalg.inv(self.mats)
        self.frames = cfg.frames

    def apply(self, points: np.ndarray, s: int) -> np.ndarray:
        """Warp (M, 2) frame-0 positions into frame s."""
        p = np.asarray(points, dtype=np.float64) - self.center
        return p @ self.mats[s].T + self.center + s * self.drift

    def apply_all(self, points: np.ndarray) -> np.ndarray:
        """Warp (M, 2) frame-0 positions into all frames -> (M, S, 2).

        Frame 0 is the identity by construction and is returned bit-exactly.
        """
        p = np.asarray(points, dtype=np.float64)
        rel = p - self.center
        out = np.einsum("sij,mj->msi", self.mats, rel) + self.center
        out += np.arange(self.frames)[None, :, None] * self.drift
        out[:, 0, :] = p
        return out

    def invert(self, points: np.ndarray, s: int) -> np.ndarray:
        """Map frame-s positions back to frame 0."""
        q = np.asarray(points, dtype=np.float64) - self.center - s * self.drift
        return q @ self.inv_mats[s].T + self.center


def speckle_texture(
    height: int, width: int, density: float, grain_size: float, rng: np.random.Generator
) -> np.ndarray:
    """Speckle-like texture: the envelope of sparse random-phase scatterers
    blurred to the requested autocorrelation length. Values in [0, 1]."""
    sigma = grain_size / math.sqrt(2.0)
    mask = rng.random((height, width)) < density
    amp = rng.rayleigh(1.0, (height, width)) * mask
    phase = rng.uniform(0.0, 2.0 * np.pi, (height, width))
    re = gaussian_filter(amp * np.cos(phase), sigma)
    im = gaussian_filter(amp * np.sin(phase), sigma)
    mag = np.hypot(re, im)
    top = np.percentile(mag, 99.5)
    if top <= 0:
        return np.zeros((height, width), dtype=np.float32)
    return np.clip(mag / top, 0.0, 1.0).astype(np.float32)


def _band_geometry(resolution):
    h, w = resolution
    cx = (w - 1) / 2.0
    cy = 0.62 * (h - 1)  # baseline the band ends on
    rx = 0.30 * w
    ry = 0.42 * h
    return cx, cy, rx, ry


def band_weight(resolution) -> np.ndarray:
    """Smooth brightness weight of the U-shaped band (arch over the center)."""
    h, w = resolution
    cx, cy, rx, ry = _band_geometry(resolution)
    ys, xs = np.mgrid[0:h, 0:w]
    e = np.sqrt(((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2)
    ring = np.exp(-(((e - 1.0) / 0.16) ** 2))
    below = 1.0 / (1.0 + np.exp((ys - (cy + 0.04 * h)) / 2.0))
    return ring * below


def band_points(cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    """N jittered points along the band centerline, ordered base-apex-base."""
    h, w = cfg.resolution
    cx, cy, rx, ry = _band_geometry(cfg.resolution)
    t = (np.arange(cfg.points) + 0.5) / cfg.points
    theta = np.pi * (1.0 - t)  # left base -> apex -> right base
    radial = 1.0 + rng.uniform(-0.05, 0.05, cfg.points)
    x = cx + rx * radial * np.cos(theta)
    y = cy - ry * radial * np.sin(theta)
    pts = np.stack([x, y], axis=-1)
    return np.clip(pts, 1.0, [w - 2.0, h - 2.0])


def generate_scene(cfg: SceneConfig) -> tuple[ImageSequence, QuerySet, TrajectorySet]:
    """Render a scene and its exact ground-truth trajectories.

    The frames are the warped texture with multiplicative low-frequency noise
    and additive Gaussian noise; ground truth is the analytic warp applied to
    the query points, never estimated from images.
    """
    h, w = cfg.resolution
    rng = np.random.default_rng(cfg.seed)
    texture = speckle_texture(h, w, cfg.speckle_density, cfg.grain_size, rng)
    texture = texture * (0.30 + 0.70 * band_weight(cfg.resolution))

    warp = CyclicWarp(cfg)
    queries = band_points(cfg, rng)
    gt = warp.apply_all(queries)  # (N, S, 2)

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    grid = np.stack([xs.ravel(), ys.ravel()], axis=-1)  # (H*W, 2) pixel coords
    frames = np.empty((cfg.frames, h, w), dtype=np.float32)
    for s in range(cfg.frames):
        src = warp.invert(grid, s)
        frame = map_coordinates(
            texture, [src[:, 1].reshape(h, w), src[:, 0].reshape(h, w)], order=1, mode="nearest"
        )
        if cfg.noise > 0:
            mult = gaussian_filter(rng.standard_normal((h, w)), 1.5)
            std = mult.std()
            if std > 0:
                mult /= std
            frame = frame * (1.0 + cfg.noise * mult)
            frame = frame + cfg.noise * 0.25 * rng.standard_normal((h, w))
        frames[s] = np.clip(frame, 0.0, 1.0)

    seq = ImageSequence(frames, source_resolution=(h, w))
    return seq, QuerySet(queries, height=h, width=w), TrajectorySet(gt)


# ---------------------------------------------------------------------------
# Benchmark datasets
# ---------------------------------------------------------------------------


@dataclass
class BenchmarkConfig:
    """Parameter ranges for a generated benchmark; scalars are sampled
    uniformly per scene (integer ranges are inclusive)."""

    resolution: tuple[int, int] = (64, 64)
    frames_range: tuple[int, int] = (16, 16)
    points_range: tuple[int, int] = (8, 8)
    amplitude_range: tuple[float, float] = (0.0, 0.30)  # include near-static scenes
    noise_range: tuple[float, float] = (0.02, 0.08)
    grain_range: tuple[float, float] = (2.0, 3.0)
    rotation_range: tuple[float, float] = (0.0, 0.06)
    speckle_density: float = 0.15
    transverse_ratio: float = 0.4
    splits: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0


def _split_labels(n: int, splits) -> list[str]:
    n_train = int(n * splits[0])
    n_val = int(n * splits[1])
    labels = ["train"] * n_train + ["val"] * n_val
    labels += ["test"] * (n - len(labels))
    return labels


def make_benchmark(
    out_dir: str | Path,
    n_scenes: int,
    cfg: BenchmarkConfig | None = None,
    force: bool = False,
) -> Path:
    """Generate a benchmark dataset directory, deterministic per seed.

    Refuses to write into an existing non-empty directory unless ``force``.
    The manifest lists every scene's id, split, and full configuration.
    """
    if n_scenes < 1:
        raise ValueError(f"need at least 1 scene, got {n_scenes}")
    cfg = cfg or BenchmarkConfig()
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()) and not force:
        raise FileExistsError(f"{out_dir} exists and is not empty (use force to overwrite)")
    out_dir.mkdir(parents=True, exist_ok=True)

    children = np.random.SeedSequence(cfg.seed).spawn(n_scenes)
    labels = _split_labels(n_scenes, cfg.splits)
    entries = []
    for i, child in enumerate(children):
        params_seed, scene_seed = child.spawn(2)
        prng = np.random.default_rng(params_seed)
        scene_cfg = SceneConfig(
            resolution=cfg.resolution,
            frames=int(prng.integers(cfg.frames_range[0], cfg.frames_range[1] + 1)),
            points=int(prng.integers(cfg.points_range[0], cfg.points_range[1] + 1)),
            speckle_density=cfg.speckle_density,
            grain_size=float(prng.uniform(*cfg.grain_range)),
            amplitude=float(prng.uniform(*cfg.amplitude_range)),
            rotation=float(prng.uniform(*cfg.rotation_range)),
            transverse_ratio=cfg.transverse_ratio,
            noise=float(prng.uniform(*cfg.noise_range)),
            seed=int(scene_seed.generate_state(1)[0]),
        )
        scene_id = f"scene_{i:04d}"
        seq, _, gt = generate_scene(scene_cfg)
        save_sequence(out_dir / scene_id, seq, tracks=gt)
        entries.append({"id": scene_id, "split": labels[i], "config": scene_cfg.to_dict()})

    manifest = {
        "schema_version": 1,
        "seed": cfg.seed,
        "scene_count": n_scenes,
        "splits": {
            name: [e["id"] for e in entries if e["split"] == name]
            for name in ("train", "val", "test")
        },
        "scenes": entries,
    }
    with open(out_dir / MANIFEST_NAME, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return out_dir


class Benchmark:
    """Read access to a generated benchmark directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        with open(self.root / MANIFEST_NAME) as f:
            self.manifest = json.load(f)

    def ids(self, split: str | None = None) -> list[str]:
        if split is None:
            return [e["id"] for e in self.manifest["scenes"]]
        return list(self.manifest["splits"][split])

    def load_scene(self, scene_id: str):
        seq, gt = load_sequence(self.root / scene_id)
        if gt is None:
            raise ValueError(f"scene {scene_id} has no ground-truth tracks")
        queries = gt.queries(seq.source_resolution[0], seq.source_resolution[1])
        return seq, queries, gt

    def load_split(self, split: str) -> list:
        return [self.load_scene(scene_id) for scene_id in self.ids(split)]
