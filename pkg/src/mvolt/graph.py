"""Model topology: layer specs, the sequential graph, and builders.

Graphs are immutable after construction (weight arrays are frozen); every
update produces a new graph via with_params().
"""

from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ShapeError

ACTIVATIONS = ("identity", "relu", "sigmoid", "square")


def _freeze(arr, dtype=np.float32):
    a = np.array(arr, dtype=dtype, order="C", copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dense:
    w: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "w", _freeze(self.w))
        object.__setattr__(self, "b", _freeze(self.b))
        _check_layer(self)


@dataclass(frozen=True)
class Conv2D:
    w: np.ndarray  # (out_c, in_c, kh, kw)
    b: np.ndarray  # (out_c,)
    stride: int = 1
    padding: int = 0
    activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "w", _freeze(self.w))
        object.__setattr__(self, "b", _freeze(self.b))
        _check_layer(self)


@dataclass(frozen=True)
class MaxPool2D:
    size: int
    stride: Optional[int] = None

    def __post_init__(self):
        if self.stride is None:
            object.__setattr__(self, "stride", self.size)


@dataclass(frozen=True)
class AvgPool2D:
    size: int
    stride: Optional[int] = None

    def __post_init__(self):
        if self.stride is None:
            object.__setattr__(self, "stride", self.size)


@dataclass(frozen=True)
class Flatten:
    pass


Layer = Union[Dense, Conv2D, MaxPool2D, AvgPool2D, Flatten]


def _check_layer(layer):
    if layer.activation not in ACTIVATIONS:
        raise ShapeError(f"unknown activation {layer.activation!r}")
    if not np.isfinite(layer.w).all() or not np.isfinite(layer.b).all():
        raise ShapeError("layer parameters must be finite")


def layer_output_shape(layer, in_shape):
    """Shape produced by `layer` for a single (unbatched) input shape."""
    if isinstance(layer, Dense):
        if len(in_shape) != 1 or in_shape[0] != layer.w.shape[1]:
            raise ShapeError(f"dense expects ({layer.w.shape[1]},), got {in_shape}")
        return (layer.w.shape[0],)
    if isinstance(layer, Conv2D):
        if len(in_shape) != 3 or in_shape[0] != layer.w.shape[1]:
            raise ShapeError(f"conv expects (C={layer.w.shape[1]},H,W), got {in_shape}")
        _, h, w = in_shape
        kh, kw = layer.w.shape[2], layer.w.shape[3]
        ho = (h + 2 * layer.padding - kh) // layer.stride + 1
        wo = (w + 2 * layer.padding - kw) // layer.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError("conv kernel larger than padded input")
        return (layer.w.shape[0], ho, wo)
    if isinstance(layer, (MaxPool2D, AvgPool2D)):
        if len(in_shape) != 3:
            raise ShapeError(f"pool expects (C,H,W), got {in_shape}")
        c, h, w = in_shape
        ho = (h - layer.size) // layer.stride + 1
        wo = (w - layer.size) // layer.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError("pool window larger than input")
        return (c, ho, wo)
    if isinstance(layer, Flatten):
        return (int(np.prod(in_shape)),)
    raise ShapeError(f"unknown layer type {type(layer).__name__}")


@dataclass(frozen=True)
class ModelGraph:
    layers: tuple
    input_shape: tuple
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        shape = self.input_shape
        for layer in self.layers:
            shape = layer_output_shape(layer, shape)
        if shape != (self.num_classes,):
            raise ShapeError(
                f"graph produces {shape}, expected ({self.num_classes},) logits"
            )

    @property
    def param_indices(self):
        """Graph positions of layers that carry weights, in order."""
        return tuple(
            i for i, l in enumerate(self.layers) if isinstance(l, (Dense, Conv2D))
        )

    @property
    def num_param_layers(self):
        return len(self.param_indices)

    def weights(self):
        return [self.layers[i].w for i in self.param_indices]

    def biases(self):
        return [self.layers[i].b for i in self.param_indices]

    def with_params(self, weights, biases=None):
        """New graph with the parametric layers' arrays replaced."""
        if biases is None:
            biases = self.biases()
        new_layers = list(self.layers)
        for ordinal, idx in enumerate(self.param_indices):
            new_layers[idx] = replace(
                self.layers[idx], w=weights[ordinal], b=biases[ordinal]
            )
        return ModelGraph(tuple(new_layers), self.input_shape, self.num_classes)

    def same_topology(self, other: "ModelGraph") -> bool:
        if (
            self.input_shape != other.input_shape
            or self.num_classes != other.num_classes
            or len(self.layers) != len(other.layers)
        ):
            return False
        for a, b in zip(self.layers, other.layers):
            if type(a) is not type(b):
                return False
            if isinstance(a, (Dense, Conv2D)) and a.w.shape != b.w.shape:
                return False
        return True


def he_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def build_mlp(
    layer_sizes: Sequence[int],
    activation: str = "relu",
    seed: int = 0,
) -> ModelGraph:
    """Fully-connected net; hidden layers use `activation`, output is linear."""
    rng = np.random.default_rng(seed)
    layers = []
    for i in range(len(layer_sizes) - 1):
        fan_in, fan_out = layer_sizes[i], layer_sizes[i + 1]
        act = activation if i < len(layer_sizes) - 2 else "identity"
        w = he_uniform(rng, (fan_out, fan_in), fan_in)
        layers.append(Dense(w, np.zeros(fan_out, np.float32), act))
    return ModelGraph(tuple(layers), (layer_sizes[0],), layer_sizes[-1])


def build_lenet(seed: int = 0, num_classes: int = 10) -> ModelGraph:
    """LeNet-style CNN for 1x28x28 inputs: two conv/pool stages, three dense."""
    rng = np.random.default_rng(seed)
    c1 = Conv2D(
        he_uniform(rng, (6, 1, 5, 5), 25),
        np.zeros(6, np.float32),
        padding=2,
        activation="relu",
    )
    c2 = Conv2D(
        he_uniform(rng, (16, 6, 5, 5), 150),
        np.zeros(16, np.float32),
        activation="relu",
    )
    d1 = Dense(he_uniform(rng, (120, 400), 400), np.zeros(120, np.float32), "relu")
    d2 = Dense(he_uniform(rng, (84, 120), 120), np.zeros(84, np.float32), "relu")
    d3 = Dense(he_uniform(rng, (num_classes, 84), 84), np.zeros(num_classes, np.float32))
    return ModelGraph(
        (c1, MaxPool2D(2), c2, MaxPool2D(2), Flatten(), d1, d2, d3),
        (1, 28, 28),
        num_classes,
    )
