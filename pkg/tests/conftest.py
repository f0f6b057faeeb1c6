"""Session fixtures for the desk-scale benchmark and the trained tracker.

The trained model is used by several behavioral tests and by the acceptance
suite; it is trained once per session. Set TISSUETRACK_TEST_CACHE to a
directory to reuse the generated dataset and checkpoint across sessions
(everything is deterministic, so the cache never goes stale).
"""

import os
import time
from pathlib import Path

import pytest
import torch

import tissuetrack as tt

DESK_SEED = 1234
MODEL_SEED = 17
TRAIN_SEED = 4
MAX_EPOCHS = 12
VAL_TARGET = 92.0  # early-stop only if validation clears the margins by far


@pytest.fixture(scope="session")
def cache_dir(tmp_path_factory):
    env = os.environ.get("TISSUETRACK_TEST_CACHE")
    if env:
        path = Path(env)
        path.mkdir(parents=True, exist_ok=True)
        return path
    return tmp_path_factory.mktemp("desk")


@pytest.fixture(scope="session")
def desk_benchmark(cache_dir):
    """100 scenes, 64x64, S=16, N=8, split 80/10/10."""
    root = cache_dir / "bench100"
    if not (root / "manifest.json").exists():
        tt.make_benchmark(root, 100, tt.BenchmarkConfig(seed=DESK_SEED), force=True)
    return tt.Benchmark(root)


@pytest.fixture(scope="session")
def desk_scenes(desk_benchmark):
    return {split: desk_benchmark.load_split(split) for split in ("train", "val", "test")}


@pytest.fixture(scope="session")
def untrained_model():
    """The trained model's own initialization, frozen."""
    torch.manual_seed(MODEL_SEED)
    model = tt.TissueTracker(resolution=None)
    model.eval()
    return model


@pytest.fixture(scope="session")
def training_info(desk_scenes, cache_dir):
    """Train the desk-scale model (or reuse the cached checkpoint)."""
    out_dir = cache_dir / "desk_run"
    ckpt = out_dir / "checkpoint_best.pt"
    meta = out_dir / "wall_time.txt"
    if not ckpt.exists():
        torch.manual_seed(MODEL_SEED)
        model = tt.TissueTracker(resolution=None)
        config = tt.TrainConfig(phases=((MAX_EPOCHS, 16),), seed=TRAIN_SEED, resolution=None)

        def stop_when_good(epoch, val):
            return not (val == val and val >= VAL_TARGET)

        start = time.perf_counter()
        tt.fit(
            model,
            desk_scenes["train"],
            desk_scenes["val"],
            config,
            out_dir,
            epoch_callback=stop_when_good,
        )
        meta.write_text(f"{time.perf_counter() - start:.1f}")
    return {"checkpoint": ckpt, "wall_time": float(meta.read_text())}


@pytest.fixture(scope="session")
def trained_model(training_info):
    model, _ = tt.load_checkpoint(training_info["checkpoint"])
    model.eval()
    return model
