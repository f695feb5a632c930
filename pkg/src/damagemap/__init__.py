"""Building damage assessment from pre/post disaster imagery at desk scale."""

from .types import (
    IGNORE,
    NUM_CLASSES,
    DamageClass,
    DatasetIndex,
    ImagePair,
    PolygonAnnotation,
    SceneEntry,
    class_of_subtype,
    derive_localization,
)
from .model import DamageNet, ModelConfig, init_model, load_checkpoint, predict, save_checkpoint
from .metrics import MetricsReport, overall_f1
from .loss import ClassWeights, inverse_frequency_weights
from .pipeline import TrainConfig, evaluate, run_ablation, train
from .synth import SyntheticSpec, generate_synthetic

__all__ = [
    "IGNORE",
    "NUM_CLASSES",
    "DamageClass",
    "DatasetIndex",
    "ImagePair",
    "PolygonAnnotation",
    "SceneEntry",
    "class_of_subtype",
    "derive_localization",
    "DamageNet",
    "ModelConfig",
    "init_model",
    "load_checkpoint",
    "predict",
    "save_checkpoint",
    "MetricsReport",
    "overall_f1",
    "ClassWeights",
    "inverse_frequency_weights",
    "TrainConfig",
    "evaluate",
    "run_ablation",
    "train",
    "SyntheticSpec",
    "generate_synthetic",
]
