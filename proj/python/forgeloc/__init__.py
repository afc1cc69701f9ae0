"""Python bindings for the forgeloc C++ library."""

from ._forgeloc import (
    ConfigError,
    DimensionError,
    GenerationError,
    InputError,
    IoError,
    Model,
    TrainingError,
    build_manifest,
    default_config,
    dice_loss,
    f1_score,
    focal_loss,
    gradcheck_ops,
    make_sample,
    pixel_auc,
    train,
    version,
    write_dataset,
)

__version__ = version()
