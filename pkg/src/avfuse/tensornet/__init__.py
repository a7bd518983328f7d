from .tensor import (
    Tensor,
    add,
    backward,
    bce_loss,
    concat,
    div,
    matmul,
    mean,
    make_op,
    mul,
    relu,
    sigmoid,
    sub,
    tsum,
    zero_grads,
)
from .layers import (
    BatchNorm,
    Concat,
    Conv2d,
    Dense,
    Dropout,
    GlobalAvgPool,
    Identity,
    MaxPool2d,
    NetworkSpec,
    ParamStore,
    Relu,
    Sigmoid,
    layer_forward,
    network_forward,
)
from .optim import AdamState, adam_step

__all__ = [
    "Tensor", "add", "backward", "bce_loss", "concat", "div", "matmul", "mean",
    "make_op", "mul", "relu", "sigmoid", "sub", "tsum", "zero_grads",
    "BatchNorm", "Concat", "Conv2d", "Dense", "Dropout", "GlobalAvgPool",
    "Identity", "MaxPool2d", "NetworkSpec", "ParamStore", "Relu", "Sigmoid",
    "layer_forward", "network_forward", "AdamState", "adam_step",
]
