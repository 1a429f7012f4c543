"""Small periodic 1D convolutional corrector.

All weights live in one flat vector ``theta``; layers view slices of it.
The layer map is a true periodic convolution

    out[o, i] = b[o] + sum_{c, j} W[o, c, j] * x[c, i + h - j],   h = width // 2

so the kernel ``(1, 0, -1) / (2 dx)`` is the central first derivative.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad

ACTIVATIONS = ("relu", "identity")
FEATURES = ("u", "x")


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    cin: int
    cout: int
    width: int
    activation: str = "relu"

    def __post_init__(self):
        if self.width % 2 == 0 or self.width < 1:
            raise ShapeMismatch(f"kernel width must be odd, got {self.width}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.cin < 1 or self.cout < 1:
            raise ShapeMismatch("channel counts must be positive")

    @property
    def size(self) -> int:
        return self.cout * self.cin * self.width + self.cout


@dataclass(frozen=True)
class NeuralParams:
    """Layer descriptors plus the flat parameter vector.

    ``features`` lists the input channels: ``"u"`` is the state and ``"x"``
    the normalized position ``j / n``.
    """

    layers: tuple
    theta: np.ndarray
    features: tuple = ("u",)

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "features", tuple(self.features))
        if not layers:
            raise ShapeMismatch("network needs at least one layer")
        if layers[-1].cout != 1:
            raise ShapeMismatch("last layer must output one channel")
        if layers[0].cin != len(self.features):
            raise ShapeMismatch("first layer input channels must match the feature count")
        for a, b in zip(layers, layers[1:]):
            if a.cout != b.cin:
                raise ShapeMismatch("consecutive layers disagree on channel counts")
        for f in self.features:
            if f not in FEATURES:
                raise ValueError(f"unknown feature {f!r}")
        theta = np.asarray(self.theta, dtype=float)
        if theta.shape != (self.size,):
            raise ShapeMismatch(f"theta has shape {theta.shape}, expected ({self.size},)")
        object.__setattr__(self, "theta", theta)

    @property
    def size(self) -> int:
        return int(sum(l.size for l in self.layers))

    def with_theta(self, theta) -> "NeuralParams":
        return replace(self, theta=np.asarray(theta, dtype=float))


def layer_specs(channels: Sequence[int], width: int = 5) -> tuple:
    """Layers ``channels[0] -> ... -> channels[-1]``, ReLU between, identity last."""
    out = []
    for i, (a, b) in enumerate(zip(channels[:-1], channels[1:])):
        act = "identity" if i == len(channels) - 2 else "relu"
        out.append(LayerSpec(a, b, width, act))
    return tuple(out)


def init_params(layers, rng: np.random.Generator, features=("u",),
                last_scale: float = 1e-2) -> NeuralParams:
    """Weights ``N(0, 1/(cin*width))``, zero biases, last layer scaled by ``last_scale``."""
    chunks = []
    for i, spec in enumerate(layers):
        w = rng.standard_normal((spec.cout, spec.cin, spec.width)) / np.sqrt(spec.cin * spec.width)
        if i == len(layers) - 1:
            w = w * last_scale
        chunks.extend([w.ravel(), np.zeros(spec.cout)])
    return NeuralParams(tuple(layers), np.concatenate(chunks), features)


def unpack(params: NeuralParams, theta=None):
    """Per-layer ``(W, b)`` views of ``theta`` (a tape variable or an array)."""
    theta = params.theta if theta is None else theta
    out, pos = [], 0
    for spec in params.layers:
        nw = spec.cout * spec.cin * spec.width
        w = theta[pos:pos + nw].reshape(spec.cout, spec.cin, spec.width)
        b = theta[pos + nw:pos + nw + spec.cout]
        out.append((w, b))
        pos += nw + spec.cout
    return out


def _inputs(params: NeuralParams, u):
    shape = np.shape(ad.value(u))
    batch = 1 if len(shape) == 1 else shape[0]
    n = shape[-1]
    xu = u.reshape(batch, 1, n)
    if params.features == ("u",):
        return xu
    chans = []
    for f in params.features:
        if f == "u":
            chans.append(xu)
        else:
            pos = np.arange(n) / n
            chans.append(np.broadcast_to(pos, (batch, 1, n)))
    return _concat_channels(chans)


def _concat_channels(chans):
    # same arithmetic on and off the tape: place each input with a 0/1 selector
    total = len(chans)
    out = None
    for i, c in enumerate(chans):
        sel = np.zeros((1, total, 1))
        sel[0, i, 0] = 1.0
        term = c * sel
        out = term if out is None else out + term
    return out


def net_forward(params: NeuralParams, u, theta=None):
    """Apply the network to ``u`` of shape ``(n,)`` or ``(batch, n)``."""
    shape = np.shape(ad.value(u))
    if len(shape) not in (1, 2):
        raise ShapeMismatch("network input must be (n,) or (batch, n)")
    h = _inputs(params, u)
    for spec, (w, b) in zip(params.layers, unpack(params, theta)):
        h = ad.conv1d_periodic(h, w, b)
        if spec.activation == "relu":
            h = ad.relu(h)
    return h.reshape(shape)
