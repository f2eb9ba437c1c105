"""Click-based interactive segmentation with multi-mask proposals and automatic selection."""

from .clicks import Click, DiskMap, click_embeddings, disk_map, sine_position_encoding
from .data import TrainingSample, load_dataset, save_folder_dataset, synth_ambiguity_dataset
from .errors import (
    ClickOutOfBounds,
    ConfigError,
    EmptyFeasibleSet,
    NoErroneousPixels,
    SampleSkipped,
)
from .evaluation import EvalConfig, EvalResult, evaluate_dataset, evaluate_instance, iou
from .matching import (
    Assignment,
    FeasibleTargets,
    LossBreakdown,
    LossWeights,
    dice_loss,
    feasible_targets,
    focal_loss,
    hungarian_match,
    match_cost,
    pseudo_iou_labels,
    total_loss,
)
from .model import (
    ModelConfig,
    Proposals,
    SegmentationModel,
    load_checkpoint,
    save_checkpoint,
    select_mask,
)
from .simulation import SimulationConfig, next_click, random_clicks, simulate_iteration
from .training import AugmentConfig, TrainConfig, augment, train, train_step

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "Assignment",
    "Click",
    "ClickOutOfBounds",
    "ConfigError",
    "DiskMap",
    "EmptyFeasibleSet",
    "EvalConfig",
    "EvalResult",
    "FeasibleTargets",
    "LossBreakdown",
    "LossWeights",
    "ModelConfig",
    "NoErroneousPixels",
    "Proposals",
    "SampleSkipped",
    "SegmentationModel",
    "SimulationConfig",
    "TrainConfig",
    "TrainingSample",
    "augment",
    "click_embeddings",
    "dice_loss",
    "disk_map",
    "evaluate_dataset",
    "evaluate_instance",
    "feasible_targets",
    "focal_loss",
    "hungarian_match",
    "iou",
    "load_checkpoint",
    "load_dataset",
    "match_cost",
    "next_click",
    "pseudo_iou_labels",
    "random_clicks",
    "save_checkpoint",
    "save_folder_dataset",
    "select_mask",
    "simulate_iteration",
    "sine_position_encoding",
    "synth_ambiguity_dataset",
    "total_loss",
    "train",
    "train_step",
]
