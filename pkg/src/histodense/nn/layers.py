"""Layer objects: parameters plus forward/backward state for one call.

Layers cache whatever the backward pass needs on forward; the training
step owns all state, so a layer must not be shared across concurrent
forward passes.
"""

from __future__ import annotations

import numpy as np

from histodense.nn import ops


class Param:
    """A named trainable array and its gradient."""

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


class Layer:
    def params(self) -> list[Param]:
        return []

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Persistent arrays beyond trainable params (e.g. running stats)."""
        return {}


class Conv2d(Layer):
    def __init__(self, name: str, in_channels: int, out_channels: int,
                 kernel: int, stride: int = 1, padding: int = 0,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel * kernel
        rng = rng or np.random.default_rng()
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                       size=(out_channels, in_channels, kernel, kernel))
        self.weight = Param(f"{name}.weight", w.astype(dtype))
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        y, self._cache = ops.conv2d_forward(x, self.weight.value, self.stride, self.padding)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dx, dw = ops.conv2d_backward(dy, self._cache)
        self.weight.grad += dw
        return dx

    def params(self) -> list[Param]:
        return [self.weight]


class BatchNorm2d(Layer):
    def __init__(self, name: str, channels: int, momentum: float = 0.1,
                 eps: float = 1e-5, dtype=np.float32):
        self.name = name
        self.momentum = momentum
        self.eps = eps
        self.gamma = Param(f"{name}.gamma", np.ones(channels, dtype=dtype))
        self.beta = Param(f"{name}.beta", np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.num_batches_tracked = 0
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        y, self._cache, self.num_batches_tracked = ops.batchnorm2d_forward(
            x, self.gamma.value, self.beta.value,
            self.running_mean, self.running_var,
            train, self.momentum, self.eps, self.num_batches_tracked,
        )
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dx, dgamma, dbeta = ops.batchnorm2d_backward(dy, self._cache)
        self.gamma.grad += dgamma
        self.beta.grad += dbeta
        return dx

    def params(self) -> list[Param]:
        return [self.gamma, self.beta]

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {
            f"{self.name}.running_mean": self.running_mean,
            f"{self.name}.running_var": self.running_var,
        }


class ReLU(Layer):
    def __init__(self):
        self._mask = None

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        y, self._mask = ops.relu_forward(x)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return ops.relu_backward(dy, self._mask)


class MaxPool2d(Layer):
    def __init__(self, kernel: int = 3, stride: int = 2, padding: int = 1):
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        y, self._cache = ops.maxpool2d_forward(x, self.kernel, self.stride, self.padding)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return ops.maxpool2d_backward(dy, self._cache)


class AvgPool2d(Layer):
    """2x2 window, stride 2."""

    def __init__(self):
        self._shape = None

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        y, self._shape = ops.avgpool2x2_forward(x)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return ops.avgpool2x2_backward(dy, self._shape)


class GlobalAvgPool(Layer):
    def __init__(self):
        self._shape = None

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        y, self._shape = ops.global_avgpool_forward(x)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return ops.global_avgpool_backward(dy, self._shape)


class Linear(Layer):
    def __init__(self, name: str, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng or np.random.default_rng()
        w = rng.normal(0.0, np.sqrt(2.0 / in_features), size=(out_features, in_features))
        self.weight = Param(f"{name}.weight", w.astype(dtype))
        self.bias = Param(f"{name}.bias", np.zeros(out_features, dtype=dtype))
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        y, self._cache = ops.linear_forward(x, self.weight.value, self.bias.value)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dx, dw, db = ops.linear_backward(dy, self._cache)
        self.weight.grad += dw
        self.bias.grad += db
        return dx

    def params(self) -> list[Param]:
        return [self.weight, self.bias]
