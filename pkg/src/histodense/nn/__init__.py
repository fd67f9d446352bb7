"""Minimal dense/conv kernel: forward and backward passes for every layer
the classifier needs, plus Adam and categorical cross-entropy.

Activations and gradients are plain numpy arrays in NCHW layout,
float32 by default; every op preserves the dtype of its inputs, so the
same code runs in float64 for tight numerical checks.
"""

from histodense.nn import ops
from histodense.nn.adam import Adam, adam_update
from histodense.nn.layers import (
    AvgPool2d,
    BatchNorm2d,
    Conv2d,
    GlobalAvgPool,
    Linear,
    MaxPool2d,
    Param,
    ReLU,
)

__all__ = [
    "ops",
    "Adam",
    "adam_update",
    "Param",
    "Conv2d",
    "BatchNorm2d",
    "ReLU",
    "MaxPool2d",
    "AvgPool2d",
    "GlobalAvgPool",
    "Linear",
]
