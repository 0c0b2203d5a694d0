"""Numpy autodiff and the neural voltage predictors."""

from .autodiff import Tensor, grad_check
from .checkpoint import load_checkpoint, save_checkpoint
from .models import MLP, ModelConfig, OPFormer, Surrogate, build_model, predict_nn
from .train import TrainConfig, TrainResult, train

__all__ = [
    "Tensor", "grad_check", "load_checkpoint", "save_checkpoint", "MLP", "ModelConfig", "OPFormer",
    "Surrogate", "build_model", "predict_nn", "TrainConfig", "TrainResult", "train",
]
