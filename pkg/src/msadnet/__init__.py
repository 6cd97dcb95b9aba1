"""From-scratch numpy micro-framework for the MSAD-Net CT classifier."""

from .audit import ParamReport, audit, count_dwsc_paper, count_sandwich
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcam import gradcam, overlay
from .metrics import MetricsReport, classification_report
from .model import ModelConfig, ModelGraph, build_msadnet
from .splits import SplitPlan, kfold_plans, stratified_split
from .tensor import Tensor, no_grad
from .train import TrainConfig, crossval, evaluate, fit

__version__ = "0.1.0"

__all__ = [
    "ModelConfig",
    "ModelGraph",
    "MetricsReport",
    "ParamReport",
    "SplitPlan",
    "Tensor",
    "TrainConfig",
    "audit",
    "build_msadnet",
    "classification_report",
    "count_dwsc_paper",
    "count_sandwich",
    "crossval",
    "evaluate",
    "fit",
    "gradcam",
    "kfold_plans",
    "load_checkpoint",
    "no_grad",
    "overlay",
    "save_checkpoint",
    "stratified_split",
]
