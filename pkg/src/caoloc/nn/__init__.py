"""Small numpy network library: layers, the ResNet-style model, training."""

from .layers import conv_backward, conv_forward, softmax, softmax_cross_entropy
from .model import (
    Model,
    ModelConfig,
    ParamStore,
    ResidualBlock,
    Variant,
    load_model,
    model_forward,
    residual_block_backward,
    residual_block_forward,
    save_model,
)
from .train import TrainConfig, inverse_frequency_weights, predict_proba, train

__all__ = [
    "Model", "ModelConfig", "ParamStore", "ResidualBlock", "TrainConfig", "Variant",
    "conv_backward", "conv_forward", "inverse_frequency_weights", "load_model",
    "model_forward", "predict_proba", "residual_block_backward", "residual_block_forward", "save_model",
    "softmax", "softmax_cross_entropy", "train",
]
