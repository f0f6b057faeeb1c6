"""Evaluate the trained checkpoint from demo 03 on the held-out test split.

Reports the position-accuracy thresholds (1/2/4/8/16 px at the 256x256
evaluation scale), their average, the median trajectory error, and the
average inference time per video (two warm-up runs excluded).
"""

import pathlib

from tissuetrack import Benchmark, EvalReport, evaluate_dataset, load_checkpoint, static_tracks

OUT = pathlib.Path(__file__).parent / "out"
CKPT = OUT / "training_run" / "checkpoint_best.pt"

model, extra = load_checkpoint(CKPT)
model.eval()
print(f"loaded {CKPT.name} (val delta_avg at save time: {extra.get('val_delta_avg')})")

bench = Benchmark(OUT / "benchmark")
test_scenes = bench.load_split("test")

report = evaluate_dataset(model.track, test_scenes)
baseline = evaluate_dataset(
    lambda seq, q: static_tracks(q, seq.frame_count), test_scenes, measure_time=False
)

print(f"\n{'':>8} " + EvalReport.header())
print(f"{'trained':>8} " + report.row())
print(f"{'static':>8} " + baseline.row())

report.save(OUT / "test_report.json")
print(f"\nreport saved to {OUT / 'test_report.json'}")
