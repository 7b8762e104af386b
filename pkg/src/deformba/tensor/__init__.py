from .core import (
    GradTape,
    NonFiniteError,
    OpCounter,
    ShapeError,
    Tensor,
    as_tensor,
    count_macs,
    count_samples,
    record,
    unbroadcast,
)
from .gradcheck import probe_weights, vjp_check
from .layers import (
    Conv1DChannel,
    Conv2D,
    DepthwiseConv2D,
    LinearLayer,
    conv2d_layer,
    count_params,
    linear,
    param_leaves,
    uniform,
    with_leaves,
)
from .ops import (
    apply_unary,
    conv1d_channel,
    conv2d,
    depthwise_conv1d,
    depthwise_conv2d,
    layer_norm,
    matmul,
    softmax,
)

__all__ = [
    "Conv1DChannel",
    "Conv2D",
    "DepthwiseConv2D",
    "GradTape",
    "LinearLayer",
    "NonFiniteError",
    "OpCounter",
    "ShapeError",
    "Tensor",
    "apply_unary",
    "as_tensor",
    "conv1d_channel",
    "conv2d",
    "conv2d_layer",
    "count_macs",
    "count_params",
    "count_samples",
    "depthwise_conv1d",
    "depthwise_conv2d",
    "layer_norm",
    "linear",
    "matmul",
    "param_leaves",
    "probe_weights",
    "record",
    "softmax",
    "unbroadcast",
    "uniform",
    "vjp_check",
    "with_leaves",
]
