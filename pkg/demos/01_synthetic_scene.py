"""Generate one synthetic scene and look at what the generator guarantees.

The scene is a speckle texture with a bright U-shaped band, deformed by a
cyclic contraction. Ground-truth trajectories come from the analytic warp,
so they are exact: we verify the anchoring, the cycle, and the built-in
strain property before rendering a figure.
"""

import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from tissuetrack import SceneConfig, generate_scene, peak_gls, save_sequence
from tissuetrack.synthdata import CyclicWarp

OUT = pathlib.Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

cfg = SceneConfig(
    resolution=(128, 128),
    frames=24,
    points=12,
    amplitude=0.18,
    rotation=0.04,
    noise=0.05,
    seed=7,
)
seq, queries, gt = generate_scene(cfg)

print(f"frames:       {seq.frames.shape}, intensities in [{seq.frames.min():.2f}, {seq.frames.max():.2f}]")
print(f"queries:      {queries.count} points on the band")
print(f"ground truth: {gt.tracks.shape}, frame 0 anchored: {np.array_equal(gt.tracks[:, 0], queries.points)}")

# the warp returns to identity at the last frame (one simulated cycle)
cycle_gap = np.abs(gt.tracks[:, -1] - gt.tracks[:, 0]).max()
print(f"cycle closure: max |p_last - p_0| = {cycle_gap:.2e} px")

# a straight polyline along the contraction axis shortens by exactly the
# configured amplitude at peak contraction
ys = np.linspace(30, 98, 9)
axis_poly = np.stack([np.full_like(ys, 63.5), ys], axis=-1)
report = peak_gls(CyclicWarp(cfg).apply_all(axis_poly))
print(f"built-in strain: peak GLS {report.peak_gls:+.2f}% for amplitude {cfg.amplitude}")

save_sequence(OUT / "demo_scene", seq, tracks=gt)
print(f"scene written to {OUT / 'demo_scene'} (frames/ + meta.json)")

fig, axes = plt.subplots(1, 3, figsize=(12, 4))
for ax, s in zip(axes, [0, cfg.frames // 2, cfg.frames - 1]):
    ax.imshow(seq.frames[s], cmap="gray", vmin=0, vmax=1)
    ax.plot(gt.tracks[:, s, 0], gt.tracks[:, s, 1], "r.-", markersize=4, linewidth=0.7)
    ax.set_title(f"frame {s}")
    ax.axis("off")
fig.tight_layout()
fig.savefig(OUT / "scene_frames.png", dpi=110)
print(f"figure saved to {OUT / 'scene_frames.png'}")
