"""Global longitudinal strain from tracked points, end to end.

GLS is the relative change of the ventricular length (the polyline through
the tracked points, base to apex to base) from end-diastole to its minimum
over the cycle. On synthetic scenes the expected value is known from the
generator, so we can sanity-check the whole pipeline: ground-truth tracks,
then tracked points from the trained model (demo 03), then a small
test-retest agreement table.
"""

import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


from tissuetrack import SceneConfig, generate_scene, load_checkpoint, peak_gls, test_retest

OUT = pathlib.Path(__file__).parent / "out"
CKPT = OUT / "training_run" / "checkpoint_best.pt"

cfg = SceneConfig(resolution=(64, 64), frames=16, points=8, amplitude=0.15, noise=0.04, seed=42)
seq, queries, gt = generate_scene(cfg)

gt_report = peak_gls(gt)
print(f"ground-truth peak GLS: {gt_report.peak_gls:+.2f}%  (amplitude {cfg.amplitude})")

model, _ = load_checkpoint(CKPT)
model.eval()
pred = model.track(seq, queries)
pred_report = peak_gls(pred)
print(f"tracked peak GLS:      {pred_report.peak_gls:+.2f}%")

# test-retest: same underlying motion, two independent "acquisitions"
# (different speckle and noise), tracked twice
pairs = []
for exam_seed in (1, 2, 3, 4, 5):
    glss = []
    for acquisition in (0, 1):
        c = SceneConfig(
            resolution=(64, 64), frames=16, points=8, amplitude=0.12 + 0.01 * exam_seed,
            noise=0.05, seed=1000 * exam_seed + acquisition,
        )
        s, q, _ = generate_scene(c)
        glss.append(peak_gls(model.track(s, q)).peak_gls)
    pairs.append(tuple(glss))
stats = test_retest(pairs)
print(f"\ntest-retest over {len(pairs)} exams:")
print(f"  bias mu {stats.mu:+.2f}%   sigma {stats.sigma:.2f}%   MAD {stats.mad:.2f}%")

fig, ax = plt.subplots(figsize=(6, 3.5))
ax.plot(gt_report.length_curve, label="ground truth")
ax.plot(pred_report.length_curve, "--", label="tracked")
ax.set_xlabel("frame")
ax.set_ylabel("ventricular length [px]")
ax.legend()
fig.tight_layout()
fig.savefig(OUT / "length_curves.png", dpi=110)
print(f"\nlength curves saved to {OUT / 'length_curves.png'}")
