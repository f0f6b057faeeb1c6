"""Build a small benchmark and score two reference trackers on it.

The static baseline copies each query to every frame; the untrained model is
the architecture with random weights. Both give context for what a trained
model has to beat. Metrics follow the usual convention: predictions and
ground truth are rescaled to 256x256 before thresholding.
"""

import pathlib

import torch

from tissuetrack import (
    Benchmark,
    BenchmarkConfig,
    EvalReport,
    TissueTracker,
    evaluate_dataset,
    make_benchmark,
    static_tracks,
)

OUT = pathlib.Path(__file__).parent / "out"
DATA = OUT / "benchmark"

if not (DATA / "manifest.json").exists():
    print("generating 30 scenes (64x64, 16 frames, 8 points)...")
    make_benchmark(DATA, 30, BenchmarkConfig(seed=11), force=True)

bench = Benchmark(DATA)
print(f"splits: { {k: len(v) for k, v in bench.manifest['splits'].items()} }")
test_scenes = bench.load_split("test")

torch.manual_seed(0)
untrained = TissueTracker(resolution=None)
untrained.eval()

rows = {
    "static": evaluate_dataset(
        lambda seq, q: static_tracks(q, seq.frame_count), test_scenes
    ),
    "untrained": evaluate_dataset(untrained.track, test_scenes),
}

print(f"\n{'':>10} " + EvalReport.header())
for name, report in rows.items():
    print(f"{name:>10} " + report.row())
print("\n(a trained model should clear the static row by a wide margin; see demo 03)")
