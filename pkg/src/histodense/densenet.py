"""Densely connected CNN assembled from the numpy layers in nn/.

The 21-weighted-layer preset counts one stem convolution, four dense
blocks of two composite layers (two convolutions each), a transition
convolution between consecutive blocks, and the final fully connected
classifier: 1 + 16 + 3 + 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .nn.layers import (
    AvgPool2d,
    BatchNorm2d,
    Conv2d,
    GlobalAvgPool,
    Layer,
    Linear,
    MaxPool2d,
    Param,
    ReLU,
)

BOTTLENECK_FACTOR = 4


@dataclass(frozen=True)
class ArchitectureConfig:
    growth_rate: int = 32
    block_layers: tuple[int, ...] = (2, 2, 2, 2)
    compression: float = 0.5
    num_classes: int = 3
    in_channels: int = 3
    input_size: int = 224
    stem: str = "full"  # "full": 7x7/2 conv + 3x3/2 max-pool; "small": 3x3/1 conv

    def __post_init__(self):
        if self.growth_rate < 1:
            raise ValidationError(f"growth_rate must be positive, got {self.growth_rate}")
        if not self.block_layers or any(n < 1 for n in self.block_layers):
            raise ValidationError(f"invalid block_layers {self.block_layers}")
        if not 0.0 < self.compression <= 1.0:
            raise ValidationError(f"compression must be in (0, 1], got {self.compression}")
        if self.stem not in ("full", "small"):
            raise ValidationError(f"unknown stem kind {self.stem!r}")


class _BnReluConv:
    """BN -> ReLU -> conv, the repeating unit of dense and transition layers."""

    def __init__(self, name: str, in_channels: int, out_channels: int,
                 kernel: int, padding: int, rng: np.random.Generator):
        self.bn = BatchNorm2d(f"{name}.bn", in_channels)
        self.relu = ReLU()
        self.conv = Conv2d(f"{name}.conv", in_channels, out_channels,
                           kernel, stride=1, padding=padding, rng=rng)

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        return self.conv.forward(self.relu.forward(self.bn.forward(x, train)))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return self.bn.backward(self.relu.backward(self.conv.backward(dy)))

    def layers(self) -> list[Layer]:
        return [self.bn, self.relu, self.conv]


class DenseLayer:
    """Bottleneck composite: 1x1 conv to 4k channels, then 3x3 conv to k.

    Output is the input with the k new feature maps concatenated on the
    channel axis.
    """

    def __init__(self, name: str, in_channels: int, growth_rate: int,
                 rng: np.random.Generator):
        bottleneck = BOTTLENECK_FACTOR * growth_rate
        self.in_channels = in_channels
        self.unit1 = _BnReluConv(f"{name}.1", in_channels, bottleneck, 1, 0, rng)
        self.unit2 = _BnReluConv(f"{name}.2", bottleneck, growth_rate, 3, 1, rng)

    @property
    def out_channels(self) -> int:
        return self.in_channels + self.unit2.conv.weight.value.shape[0]

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        new = self.unit2.forward(self.unit1.forward(x, train), train)
        return np.concatenate([x, new], axis=1)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        # Gradient splits at the concat: passthrough part plus the part
        # flowing back through the two convolutions.
        dy_x = dy[:, : self.in_channels]
        dy_new = dy[:, self.in_channels :]
        return dy_x + self.unit1.backward(self.unit2.backward(dy_new))

    def layers(self) -> list[Layer]:
        return self.unit1.layers() + self.unit2.layers()


class DenseBlock:
    def __init__(self, name: str, in_channels: int, num_layers: int,
                 growth_rate: int, rng: np.random.Generator):
        self.dense_layers: list[DenseLayer] = []
        channels = in_channels
        for j in range(num_layers):
            layer = DenseLayer(f"{name}.layer{j + 1}", channels, growth_rate, rng)
            self.dense_layers.append(layer)
            channels = layer.out_channels
        self.out_channels = channels

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        for layer in self.dense_layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dy: np.ndarray) -> np.ndarray:
        for layer in reversed(self.dense_layers):
            dy = layer.backward(dy)
        return dy

    def layers(self) -> list[Layer]:
        out: list[Layer] = []
        for layer in self.dense_layers:
            out.extend(layer.layers())
        return out


class Transition:
    """1x1 conv to floor(compression * C) channels, then 2x2 average pool."""

    def __init__(self, name: str, in_channels: int, compression: float,
                 rng: np.random.Generator):
        self.out_channels = int(in_channels * compression)
        self.unit = _BnReluConv(name, in_channels, self.out_channels, 1, 0, rng)
        self.pool = AvgPool2d()

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        return self.pool.forward(self.unit.forward(x, train))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return self.unit.backward(self.pool.backward(dy))

    def layers(self) -> list[Layer]:
        return self.unit.layers() + [self.pool]


class DenseNet:
    """Forward/backward network over float32 NCHW batches."""

    def __init__(self, config: ArchitectureConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        k = config.growth_rate
        stem_out = 2 * k

        if config.stem == "full":
            self.stem_conv = Conv2d("stem.conv", config.in_channels, stem_out,
                                    7, stride=2, padding=3, rng=rng)
            self.stem_pool: Layer | None = MaxPool2d(kernel=3, stride=2, padding=1)
        else:
            self.stem_conv = Conv2d("stem.conv", config.in_channels, stem_out,
                                    3, stride=1, padding=1, rng=rng)
            self.stem_pool = None
        self.stem_bn = BatchNorm2d("stem.bn", stem_out)
        self.stem_relu = ReLU()

        self.blocks: list[DenseBlock] = []
        self.transitions: list[Transition] = []
        channels = stem_out
        for i, num_layers in enumerate(config.block_layers):
            block = DenseBlock(f"block{i + 1}", channels, num_layers, k, rng)
            self.blocks.append(block)
            channels = block.out_channels
            if i < len(config.block_layers) - 1:
                trans = Transition(f"trans{i + 1}", channels, config.compression, rng)
                self.transitions.append(trans)
                channels = trans.out_channels

        self.head_bn = BatchNorm2d("head.bn", channels)
        self.head_relu = ReLU()
        self.head_pool = GlobalAvgPool()
        self.head_fc = Linear("head.fc", channels, config.num_classes, rng=rng)
        self.classifier_in_channels = channels
        self.stage_shapes: list[tuple[str, tuple[int, ...]]] = []

    # -- plumbing -------------------------------------------------------

    def _modules(self) -> list[Layer]:
        mods: list[Layer] = [self.stem_conv]
        if self.stem_pool is not None:
            mods.append(self.stem_pool)
        mods.extend([self.stem_bn, self.stem_relu])
        for i, block in enumerate(self.blocks):
            mods.extend(block.layers())
            if i < len(self.transitions):
                mods.extend(self.transitions[i].layers())
        mods.extend([self.head_bn, self.head_relu, self.head_pool, self.head_fc])
        return mods

    def parameters(self) -> list[Param]:
        out: list[Param] = []
        for mod in self._modules():
            out.extend(mod.params())
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for mod in self._modules():
            out.update(mod.state_arrays())
        return out

    def batchnorm_modules(self) -> list[BatchNorm2d]:
        return [m for m in self._modules() if isinstance(m, BatchNorm2d)]

    @property
    def param_count(self) -> int:
        return sum(p.value.size for p in self.parameters())

    @property
    def weighted_layer_count(self) -> int:
        return sum(1 for m in self._modules() if isinstance(m, (Conv2d, Linear)))

    def describe(self) -> dict:
        """Arithmetic channel/spatial trace, without running the network."""
        cfg = self.config
        k = cfg.growth_rate
        channels = [2 * k]
        size = cfg.input_size
        spatial_chain = [size]
        if cfg.stem == "full":
            size = (size + 2 * 3 - 7) // 2 + 1
            spatial_chain.append(size)
            size = (size + 2 * 1 - 3) // 2 + 1
            spatial_chain.append(size)
        spatial = [size]
        c = 2 * k
        for i, num_layers in enumerate(cfg.block_layers):
            c += num_layers * k
            channels.append(c)
            spatial.append(size)
            if i < len(cfg.block_layers) - 1:
                c = int(c * cfg.compression)
                size //= 2
                channels.append(c)
                spatial.append(size)
                spatial_chain.append(size)
        spatial_chain.append(1)
        return {
            "weighted_layers": self.weighted_layer_count,
            "channels": channels,
            "spatial": spatial + [1],
            # input -> stem stages -> each transition -> global pool
            "spatial_chain": spatial_chain,
            "classifier_in": self.classifier_in_channels,
            "num_classes": cfg.num_classes,
            "param_count": self.param_count,
        }

    # -- forward / backward ---------------------------------------------

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"expected (N, {self.config.in_channels}, H, W) input, got {x.shape}"
            )
        if x.shape[2] != self.config.input_size or x.shape[3] != self.config.input_size:
            raise ShapeError(
                f"expected {self.config.input_size}x{self.config.input_size} input, "
                f"got {x.shape[2]}x{x.shape[3]}"
            )
        trace = [("input", x.shape[1:])]
        x = self.stem_conv.forward(x, train)
        x = self.stem_bn.forward(x, train)
        x = self.stem_relu.forward(x, train)
        if self.stem_pool is not None:
            x = self.stem_pool.forward(x, train)
        trace.append(("stem", x.shape[1:]))
        for i, block in enumerate(self.blocks):
            x = block.forward(x, train)
            trace.append((f"block{i + 1}", x.shape[1:]))
            if i < len(self.transitions):
                x = self.transitions[i].forward(x, train)
                trace.append((f"trans{i + 1}", x.shape[1:]))
        x = self.head_bn.forward(x, train)
        x = self.head_relu.forward(x, train)
        x = self.head_pool.forward(x, train)
        logits = self.head_fc.forward(x, train)
        trace.append(("logits", logits.shape[1:]))
        self.stage_shapes = trace
        return logits

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        dy = self.head_fc.backward(dlogits)
        dy = self.head_pool.backward(dy)
        dy = self.head_relu.backward(dy)
        dy = self.head_bn.backward(dy)
        for i in range(len(self.blocks) - 1, -1, -1):
            if i < len(self.transitions):
                dy = self.transitions[i].backward(dy)
            dy = self.blocks[i].backward(dy)
        if self.stem_pool is not None:
            dy = self.stem_pool.backward(dy)
        dy = self.stem_relu.backward(dy)
        dy = self.stem_bn.backward(dy)
        return self.stem_conv.backward(dy)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def build_densenet21(num_classes: int = 3, input_size: int = 224,
                     seed: int = 0) -> DenseNet:
    """Preset: growth 32, blocks (2, 2, 2, 2), compression 0.5, full stem."""
    config = ArchitectureConfig(growth_rate=32, block_layers=(2, 2, 2, 2),
                                compression=0.5, num_classes=num_classes,
                                input_size=input_size, stem="full")
    return DenseNet(config, seed=seed)


def build_tiny(growth_rate: int = 4, input_size: int = 32, num_classes: int = 3,
               seed: int = 0) -> DenseNet:
    """Same topology at growth 4 with a stride-1 stem, for small inputs."""
    config = ArchitectureConfig(growth_rate=growth_rate,
                                block_layers=(2, 2, 2, 2), compression=0.5,
                                num_classes=num_classes, input_size=input_size,
                                stem="small")
    return DenseNet(config, seed=seed)
