"""LUNet arteriole/venule segmentation for high-resolution fundus images."""
from .checkpoint import Checkpoint, load_model, save_model
from .inference import IDENTITY_PLAN, TTAPlan, binarize, predict, tta_predict
from .losses import (
    LossWeights,
    bce_loss,
    cldice_loss,
    component_loss,
    dice_loss,
    lunet_loss,
    lunet_loss_terms,
    smoothness_penalty,
    soft_skeleton,
)
from .metrics import EvalReport, bootstrap_ci, dice_score, evaluate_dataset, learning_curve, pearson
from .model import DDCB, AttentionGate, ConfigError, DivisibilityError, LUNet, LUNetConfig, build_lunet
from .trainer import TrainConfig, TrainState, train, validate

__version__ = "0.1.0"
