"""Train the tracker on the demo benchmark (run demo 02 first).

One optimizer step consumes one sequence with all of its points; the
learning rate follows a one-cycle schedule peaking at 5e-4 under AdamW, and
the loss supervises the initialization plus every refinement iteration with
exponentially decaying weights. A few epochs on CPU are enough to see the
validation accuracy climb; pass a larger epoch count for a better model.
"""

import pathlib
import sys
import time

import torch

from tissuetrack import Benchmark, TissueTracker, TrainConfig, fit

OUT = pathlib.Path(__file__).parent / "out"
DATA = OUT / "benchmark"
RUN = OUT / "training_run"

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 4

bench = Benchmark(DATA)
train_scenes = bench.load_split("train")
val_scenes = bench.load_split("val")
print(f"training on {len(train_scenes)} scenes, validating on {len(val_scenes)}")

torch.manual_seed(0)
model = TissueTracker(resolution=None)  # track at the benchmark's native 64x64
config = TrainConfig(phases=((epochs, 16),), seed=0)

t0 = time.time()


def progress(epoch, val_delta):
    print(f"  epoch {epoch + 1:2d}/{epochs}: val delta_avg {val_delta:6.2f}   ({time.time() - t0:5.0f}s)")
    return True


result = fit(model, train_scenes, val_scenes, config, RUN, epoch_callback=progress)
print(f"\nbest validation delta_avg: {result.best_val_delta:.2f}")
print(f"checkpoint: {result.best_checkpoint}")
print(f"log:        {result.log_path}")
