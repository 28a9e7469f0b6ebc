# SPDX-FileCopyrightText: 2024-2026 Nicolai Buchwitz <nb@tipi-net.de>
#
# SPDX-License-Identifier: LGPL-2.1-or-later

"""Reference-guided camouflaged object detection.

This package segments the camouflaged object of a given category in an image,
guided by a few salient referring images of that category. It provides the
dataset layer, the detector (R2CNet), training, the standard COD measures and
a synthetic toy dataset for end-to-end runs without external data.

Components:
    - Reference encoder: masked average pooling over referring images
    - Referring mask generator: modulation, multi-scale fusion and target matching
    - Referring feature enrichment: heatmap-guided multi-scale refinement
    - Metrics: S-measure, adaptive E-measure, weighted F-measure and MAE

Example usage:
    >>> from refcod import RunConfig, generate_toy_dataset, build_model, Trainer
    >>> from refcod import EpisodeDataset, load_index
    >>> generate_toy_dataset("data/toy", 2, 4, 25, 64, 7)
    >>> config = RunConfig.load(overrides=["data.root=data/toy", "data.image_size=64"])
    >>> dataset = EpisodeDataset(load_index("data/toy", "train"), 5, 64, with_ref_masks=True)
    >>> Trainer(build_model(config), config).fit(dataset)
"""

from .backbone import Encoder, ResNet50Encoder, ToyEncoder, build_encoder
from .config import RunConfig
from .dataset import (
    CamoRecord,
    DatasetIndex,
    Episode,
    EpisodeDataset,
    RefRecord,
    Split,
    load_index,
    sample_episode,
)
from .errors import (
    ConfigError,
    DataError,
    EmptyMaskError,
    InsufficientReferencesError,
    NonFiniteLossError,
    NumericError,
    RefCODError,
    ShapeMismatchError,
)
from .evaluation import EvaluationResult, evaluate_dataset
from .loss import LossReport, structure_loss
from .metrics import (
    MetricsReport,
    compute_curves,
    e_measure_adaptive,
    mae,
    s_measure,
    weighted_f_measure,
)
from .model import R2CNet, build_model
from .reference import (
    ConstantProvider,
    ForegroundProvider,
    GTProvider,
    ModelProvider,
    ReferenceEncoder,
)
from .rfe import RFE
from .rmg import RMG
from .stats import ObjectStats, collect_stats, compute_object_stats
from .toydata import generate_toy_dataset
from .training import Trainer, load_checkpoint, save_checkpoint

__version__ = "1.0.0"

__all__ = [
    # Version
    "__version__",
    # Config
    "RunConfig",
    # Errors
    "RefCODError",
    "ConfigError",
    "DataError",
    "NumericError",
    "EmptyMaskError",
    "InsufficientReferencesError",
    "NonFiniteLossError",
    "ShapeMismatchError",
    # Data
    "Split",
    "CamoRecord",
    "RefRecord",
    "DatasetIndex",
    "Episode",
    "EpisodeDataset",
    "load_index",
    "sample_episode",
    "generate_toy_dataset",
    # Model
    "Encoder",
    "ToyEncoder",
    "ResNet50Encoder",
    "build_encoder",
    "ForegroundProvider",
    "GTProvider",
    "ConstantProvider",
    "ModelProvider",
    "ReferenceEncoder",
    "RMG",
    "RFE",
    "R2CNet",
    "build_model",
    # Training
    "LossReport",
    "structure_loss",
    "Trainer",
    "save_checkpoint",
    "load_checkpoint",
    # Evaluation
    "MetricsReport",
    "EvaluationResult",
    "s_measure",
    "e_measure_adaptive",
    "weighted_f_measure",
    "mae",
    "compute_curves",
    "evaluate_dataset",
    # Statistics
    "ObjectStats",
    "compute_object_stats",
    "collect_stats",
]
