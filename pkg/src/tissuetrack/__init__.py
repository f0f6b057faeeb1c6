"""Point tracking for ultrasound-like image sequences.

A two-stage coarse-to-fine tracker, a synthetic benchmark generator with
exact ground truth, TAP-style trajectory metrics, and global longitudinal
strain tooling.
"""

from .core import (
    CoordinateError,
    ImageSequence,
    QuerySet,
    TrajectorySet,
    frame_flow,
    load_sequence,
    rescale_trajectories,
    resize_sequence,
    save_sequence,
)
from .correlation import (
    CostVolume,
    FeaturePyramid,
    bilinear_sample,
    build_pyramid,
    global_cost_volume,
    multicrop_cost_volume,
)
from .encoder import FeatureVolume, FrameEncoder
from .gls import GLSReport, RetestStats, peak_gls, test_retest, ventricular_length
from .metrics import EvalReport, delta_avg, evaluate_dataset, measure_ait, mte, position_accuracy
from .synthdata import Benchmark, BenchmarkConfig, SceneConfig, generate_scene, make_benchmark
from .tracker import (
    RefinementState,
    TissueTracker,
    TrackingMemoryError,
    load_checkpoint,
    save_checkpoint,
    static_tracks,
    template_indices,
)
from .training import FitResult, TrainConfig, TrainingDiverged, fit, one_cycle_lr, trajectory_loss

__version__ = "0.1.0"

__all__ = [
    "Benchmark",
    "BenchmarkConfig",
    "CoordinateError",
    "CostVolume",
    "EvalReport",
    "FeaturePyramid",
    "FeatureVolume",
    "FitResult",
    "FrameEncoder",
    "GLSReport",
    "ImageSequence",
    "QuerySet",
    "RefinementState",
    "RetestStats",
    "SceneConfig",
    "TissueTracker",
    "TrackingMemoryError",
    "TrainConfig",
    "TrainingDiverged",
    "TrajectorySet",
    "bilinear_sample",
    "build_pyramid",
    "delta_avg",
    "evaluate_dataset",
    "fit",
    "frame_flow",
    "generate_scene",
    "global_cost_volume",
    "load_checkpoint",
    "load_sequence",
    "make_benchmark",
    "measure_ait",
    "mte",
    "multicrop_cost_volume",
    "one_cycle_lr",
    "peak_gls",
    "position_accuracy",
    "rescale_trajectories",
    "resize_sequence",
    "save_checkpoint",
    "save_sequence",
    "static_tracks",
    "template_indices",
    "test_retest",
    "trajectory_loss",
    "ventricular_length",
]
