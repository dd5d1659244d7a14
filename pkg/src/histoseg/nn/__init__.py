from .tensor import (
    Tensor,
    clamp_min,
    concat_channels,
    conv2d,
    log,
    maxpool2x2,
    numeric_gradient,
    relu,
    softmax_channels,
    upsample_nearest2x,
)
from .unet import (
    MomentumSGD,
    Network,
    NetworkConfig,
    build_unet,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
)

__all__ = [
    "Tensor",
    "clamp_min",
    "concat_channels",
    "conv2d",
    "log",
    "maxpool2x2",
    "numeric_gradient",
    "relu",
    "softmax_channels",
    "upsample_nearest2x",
    "MomentumSGD",
    "Network",
    "NetworkConfig",
    "build_unet",
    "load_checkpoint",
    "save_checkpoint",
    "sgd_step",
]
