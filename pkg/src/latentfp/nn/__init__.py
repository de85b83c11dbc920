"""From-scratch float64 tensor engine with reverse-mode differentiation."""
from latentfp.nn.tensor import DTYPE, Tensor, backward, kink_monitor, no_grad
from latentfp.nn.ops import (
    BatchNormParams,
    ConvParams,
    abs_,
    add,
    batch_norm,
    bce_loss,
    concat_channels,
    conv2d,
    global_avg_pool,
    l1_loss,
    leaky_relu,
    max_pool2,
    mean,
    mul,
    relu,
    scale,
    sigmoid,
    sub,
    sum_,
    upsample2,
)
from latentfp.nn.checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "DTYPE", "Tensor", "backward", "kink_monitor", "no_grad",
    "BatchNormParams", "ConvParams", "abs_", "add", "batch_norm", "bce_loss",
    "concat_channels", "conv2d", "global_avg_pool", "l1_loss", "leaky_relu",
    "max_pool2", "mean", "mul", "relu", "scale", "sigmoid", "sub", "sum_",
    "upsample2", "load_checkpoint", "save_checkpoint",
]
