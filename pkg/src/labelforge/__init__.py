"""Interactive 3D image labeling: graph-cut scribbles, click-guided
models, uncertainty-driven sample selection, and the annotation server."""

from .volume import (
    ClickSet,
    LabelMask,
    ScribbleMask,
    Volume,
    connected_components,
    dice,
    edt,
    edt_squared,
    resample,
)
from .nifti import nifti_read, nifti_write
from .guidance import compose_input, encode_clicks, simulate_clicks
from .likelihood import IntensityHistogramModel, fit_from_scribbles, unary_costs
from .graphcut import (
    EnergyParams,
    FlowNetwork,
    build_energy,
    max_flow,
    refine_prediction,
    segment_scribbles,
)
from .model import (
    ReferenceModel,
    TrainConfig,
    TrainReport,
    gradient_check,
    load_checkpoint,
    predict,
    save_checkpoint,
    threshold_prediction,
    train,
)
from .active_learning import (
    Aleatoric,
    Epistemic,
    Random,
    ScoredImage,
    Sequential,
    aleatoric_score,
    epistemic_score,
    next_image,
    rank,
    strategy_from_name,
)
from .planner import DatasetStats, Plan, apply_normalization, dataset_stats, plan
from .datastore import Datastore
from .app import AppManifest, LabelApp, ModelSpec, TrainJob, default_manifest
from .server import create_server, serve

__version__ = "0.1.0"

__all__ = [
    "AppManifest",
    "Aleatoric",
    "ClickSet",
    "DatasetStats",
    "Datastore",
    "EnergyParams",
    "Epistemic",
    "FlowNetwork",
    "IntensityHistogramModel",
    "LabelApp",
    "LabelMask",
    "ModelSpec",
    "Plan",
    "Random",
    "ReferenceModel",
    "ScoredImage",
    "ScribbleMask",
    "Sequential",
    "TrainConfig",
    "TrainJob",
    "TrainReport",
    "Volume",
    "aleatoric_score",
    "apply_normalization",
    "build_energy",
    "compose_input",
    "connected_components",
    "create_server",
    "dataset_stats",
    "default_manifest",
    "dice",
    "edt",
    "edt_squared",
    "encode_clicks",
    "epistemic_score",
    "fit_from_scribbles",
    "gradient_check",
    "load_checkpoint",
    "max_flow",
    "next_image",
    "nifti_read",
    "nifti_write",
    "plan",
    "predict",
    "rank",
    "refine_prediction",
    "resample",
    "save_checkpoint",
    "segment_scribbles",
    "serve",
    "simulate_clicks",
    "strategy_from_name",
    "threshold_prediction",
    "train",
    "unary_costs",
]
