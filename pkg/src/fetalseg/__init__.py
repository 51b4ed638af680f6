"""Two-stage fetal brain tissue segmentation on synthetic phantoms, with
intensity-inhomogeneity augmentation as the central training-time tool.

Modules: volume (storage and .mvol I/O), phantom (synthetic data),
augment (flips, rotations, shading), nnet (numpy U-net stack),
postprocess (component filter and ROI), metrics (Dice / surface
distance + CSV), pipeline (two-stage inference), experiments (ablation
and proportion sweep), config and cli (flat config + subcommands).
"""

from .augment import (
    ARM_NAMES,
    AugmentConfig,
    IIAParams,
    apply_iia,
    compose_batch,
    make_multiplier_field,
)
from .config import ExperimentConfig, load_config
from .errors import (
    ConfigError,
    FetalsegError,
    NoIcvError,
    TrainingDivergedError,
    VolumeFormatError,
)
from .metrics import dice_coefficient, mean_surface_distance
from .phantom import PhantomCase, PhantomConfig, generate_case, generate_dataset
from .pipeline import SegmentationResult, segment_volume
from .postprocess import connected_components, compute_roi, filter_small_components
from .rng import StreamKey, substream
from .volume import (
    CLASS_NAMES,
    FOREGROUND_CLASSES,
    N_CLASSES,
    IntensityVolume,
    LabelVolume,
    Slice2D,
    load_volume,
    normalize_slice,
    save_volume,
)

__version__ = "1.0.0"

__all__ = [
    "ARM_NAMES",
    "AugmentConfig",
    "IIAParams",
    "apply_iia",
    "compose_batch",
    "make_multiplier_field",
    "ExperimentConfig",
    "load_config",
    "FetalsegError",
    "ConfigError",
    "VolumeFormatError",
    "TrainingDivergedError",
    "NoIcvError",
    "dice_coefficient",
    "mean_surface_distance",
    "PhantomCase",
    "PhantomConfig",
    "generate_case",
    "generate_dataset",
    "SegmentationResult",
    "segment_volume",
    "connected_components",
    "compute_roi",
    "filter_small_components",
    "StreamKey",
    "substream",
    "CLASS_NAMES",
    "FOREGROUND_CLASSES",
    "N_CLASSES",
    "IntensityVolume",
    "LabelVolume",
    "Slice2D",
    "load_volume",
    "normalize_slice",
    "save_volume",
    "__version__",
]
