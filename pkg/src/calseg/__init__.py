"""calseg: desk-scale segmentation of active neurons in synthetic 4D
fluorescence recordings, with Bayesian uncertainty maps.

Pipeline: simulate blocks -> variance/correlation features -> Otsu labels
-> train a flipout U-Net -> Monte Carlo ensemble inference -> metrics.
"""

from .data import Block, FeatureStack, ImageMap, MaskMap, Recording
from .errors import (CalsegError, ConfigError, DataError, DegenerateInputError,
                     FormatError, IoError, PlacementError, ShapeError)
from .features import build_feature_stack, pearson, variance_map
from .inference import InferenceResult, binarize, mc_ensemble
from .network import BayesianUNet, NetConfig, init_params, load_checkpoint, save_checkpoint
from .otsu import OtsuResult, make_groundtruth, otsu_threshold
from .simulate import SimBlock, SimConfig, generate_block, generate_dataset
from .training import Hyperparams, split_dataset, train

__version__ = "0.1.0"

__all__ = [
    "Block", "FeatureStack", "ImageMap", "MaskMap", "Recording",
    "CalsegError", "ConfigError", "DataError", "DegenerateInputError",
    "FormatError", "IoError", "PlacementError", "ShapeError",
    "build_feature_stack", "pearson", "variance_map",
    "InferenceResult", "binarize", "mc_ensemble",
    "BayesianUNet", "NetConfig", "init_params", "load_checkpoint", "save_checkpoint",
    "OtsuResult", "make_groundtruth", "otsu_threshold",
    "SimBlock", "SimConfig", "generate_block", "generate_dataset",
    "Hyperparams", "split_dataset", "train",
    "__version__",
]
