"""CropCat: crop-and-concatenate augmentation for multichannel time series."""

__version__ = "0.1.0"

from .augment import (
    AugConfig,
    NoMaterial,
    augment_batch,
    clamp_window,
    cropcat_spatial,
    cropcat_temporal,
    cutout,
    gaussian_noise,
    mix_labels,
    sample_center,
    sample_ratio,
    select_material,
    time_mask,
)
from .preprocess import FilterSpec, exp_moving_standardize, lowpass_filter, preprocess_dataset
from .signal_core import (
    AugmentedPair,
    Dataset,
    FormatError,
    Provenance,
    SoftLabel,
    Trial,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from .trainer import (
    Metrics,
    ModelState,
    TrainConfig,
    evaluate,
    kfold_split,
    train_fold,
    vote,
)
