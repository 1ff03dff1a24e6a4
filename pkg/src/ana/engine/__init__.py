from .layers import (
    BatchNorm,
    Conv2d,
    Dense,
    ForwardCache,
    MaxPool2d,
    QuantLayer,
    ZeroBackwardNoiseError,
    conv_layer,
    dense_layer,
    layer_backward,
    layer_forward,
    ste_mask,
)
from .losses import cross_entropy_loss, hinge_loss
from .network import (
    Network,
    evaluate,
    evaluate_quantized,
    fold_thresholds,
    mlp,
    quantized_inference,
    train_epoch,
)
from .optim import AdamState, DivergenceError, adam_step

__all__ = [
    "AdamState",
    "BatchNorm",
    "Conv2d",
    "Dense",
    "DivergenceError",
    "ForwardCache",
    "MaxPool2d",
    "Network",
    "QuantLayer",
    "ZeroBackwardNoiseError",
    "adam_step",
    "conv_layer",
    "cross_entropy_loss",
    "dense_layer",
    "evaluate",
    "evaluate_quantized",
    "fold_thresholds",
    "hinge_loss",
    "layer_backward",
    "layer_forward",
    "mlp",
    "quantized_inference",
    "ste_mask",
    "train_epoch",
]
