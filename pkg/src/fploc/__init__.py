"""Fingerprint positioning with subregion pruning and per-cell feature selection.

Offline, the reference fingerprint map is partitioned into grid cells,
densified onto equal per-cell lattices, and each cell gets a compact set of
relevant features chosen by greedy search on positioning error. Online, a
query is matched to a few candidate cells by key-set similarity and located
by weighted kNN or grid MAP restricted to those cells and features, so the
per-query cost no longer grows with the size of the region.
"""

from .bundle import PrecomputedBundle, load_bundle, save_bundle
from .densify import GriddedRfm, densify
from .errors import FplocError
from .evalbench import EvalReport, circular_error, large_error_ratio, run_benchmark
from .featsel import (
    FeatureSubset,
    MseLossEvaluator,
    SelectionProfile,
    SelectorConfig,
    backward_greedy,
    build_profile,
    foba,
    forward_greedy,
    fs_loss,
)
from .locate import (
    CandidateFeatureSet,
    Estimate,
    candidate_features,
    knn_estimate,
    map_estimate,
    online_position,
)
from .model import (
    Fingerprint,
    LabeledSample,
    Rfm,
    RoiGeometry,
    Subregion,
    SubregionIndex,
    partition,
)
from .pipeline import precompute
from .subregion import (
    LossCurve,
    MjiScore,
    choose_m,
    mji,
    rank_subregions,
    selection_indicator,
    selection_loss,
    selection_loss_curve,
)
from .synthworld import WorldConfig, generate, standard_world

__version__ = "0.1.0"

__all__ = [
    "CandidateFeatureSet",
    "Estimate",
    "EvalReport",
    "FeatureSubset",
    "Fingerprint",
    "FplocError",
    "GriddedRfm",
    "LabeledSample",
    "LossCurve",
    "MjiScore",
    "MseLossEvaluator",
    "PrecomputedBundle",
    "Rfm",
    "RoiGeometry",
    "SelectionProfile",
    "SelectorConfig",
    "Subregion",
    "SubregionIndex",
    "WorldConfig",
    "backward_greedy",
    "build_profile",
    "candidate_features",
    "choose_m",
    "circular_error",
    "densify",
    "foba",
    "forward_greedy",
    "fs_loss",
    "generate",
    "knn_estimate",
    "large_error_ratio",
    "load_bundle",
    "map_estimate",
    "mji",
    "online_position",
    "partition",
    "precompute",
    "rank_subregions",
    "run_benchmark",
    "save_bundle",
    "selection_indicator",
    "selection_loss",
    "selection_loss_curve",
    "standard_world",
]
