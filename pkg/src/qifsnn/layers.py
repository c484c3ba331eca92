"""Layers for multi-timestep spiking networks.

Every layer consumes and produces arrays shaped ``(T, B, *features)``. A
layer's ``forward`` returns its output together with a cache, and
``backward(cache, grad)`` returns the input gradient plus a dict of parameter
gradients, so a network forward pass can be replayed backwards from its
record alone.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    MissingRunningStats,
    NonFiniteValue,
    NumericalWarning,
    ShapeMismatch,
)
from .neuron import LifParams, QifParams, heaviside
from .surrogate import RectangleSgConfig, SurrogateWindow


@dataclass
class ForwardContext:
    """Per-call switches: train/eval statistics, surrogate relaxation, RNG for dropout."""

    train: bool = False
    relaxed: bool = False
    update_stats: bool = True
    rng: np.random.Generator | None = None


class Layer:
    kind = "layer"

    def __init__(self):
        self.name = ""
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        # names of params exempt from weight decay
        self.no_decay: frozenset[str] = frozenset()

    def output_shape(self, in_shape: tuple) -> tuple:
        return in_shape

    def forward(self, x, ctx: ForwardContext):
        raise NotImplementedError

    def backward(self, cache, grad):
        raise NotImplementedError

    def children(self) -> list["Layer"]:
        return []

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"


def _uniform_init(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, out_features: int, bias: bool = True, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_features, self.out_features = in_features, out_features
        self.params["weight"] = _uniform_init(rng, (out_features, in_features), in_features)
        if bias:
            self.params["bias"] = _uniform_init(rng, (out_features,), in_features)

    def output_shape(self, in_shape):
        if in_shape != (self.in_features,):
            raise ShapeMismatch(f"dense expects ({self.in_features},), got {in_shape}")
        return (self.out_features,)

    def forward(self, x, ctx):
        if x.shape[2:] != (self.in_features,):
            raise ShapeMismatch(f"dense expects {self.in_features} features, got {x.shape[2:]}")
        y = x @ self.params["weight"].T
        if "bias" in self.params:
            y = y + self.params["bias"]
        return y, x

    def backward(self, x, grad):
        flat_x = x.reshape(-1, self.in_features)
        flat_g = grad.reshape(-1, self.out_features)
        grads = {"weight": flat_g.T @ flat_x}
        if "bias" in self.params:
            grads["bias"] = flat_g.sum(axis=0)
        return grad @ self.params["weight"], grads


def im2col(x, k: int, stride: int, padding: int):
    """(N, C, H, W) -> (N, Ho, Wo, C, k, k) patch view (copied)."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))


def col2im(cols, x_shape, k: int, stride: int, padding: int):
    n, c, h, w = x_shape
    _, ho, wo = cols.shape[:3]
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return out


class Conv2d(Layer):
    """2-D cross-correlation with square kernels."""

    kind = "conv"

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding=0, bias=True, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size, self.stride, self.padding = kernel_size, stride, padding
        fan_in = in_channels * kernel_size**2
        self.params["weight"] = _uniform_init(
            rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in
        )
        if bias:
            self.params["bias"] = _uniform_init(rng, (out_channels,), fan_in)

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise ShapeMismatch(f"conv expects ({self.in_channels}, H, W), got {in_shape}")
        _, h, w = in_shape
        k, s, p = self.kernel_size, self.stride, self.padding
        ho, wo = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
        if ho < 1 or wo < 1:
            raise ShapeMismatch(f"kernel {k} too large for input {h}x{w}")
        return (self.out_channels, ho, wo)

    def forward(self, x, ctx):
        t, b = x.shape[:2]
        out_shape = self.output_shape(x.shape[2:])
        flat = x.reshape(t * b, *x.shape[2:])
        cols = im2col(flat, self.kernel_size, self.stride, self.padding)
        n, ho, wo = cols.shape[:3]
        wmat = self.params["weight"].reshape(self.out_channels, -1)
        y = cols.reshape(n * ho * wo, -1) @ wmat.T
        if "bias" in self.params:
            y = y + self.params["bias"]
        y = y.reshape(n, ho, wo, self.out_channels).transpose(0, 3, 1, 2)
        return y.reshape(t, b, *out_shape), (x.shape, cols)

    def backward(self, cache, grad):
        x_shape, cols = cache
        t, b = x_shape[:2]
        n, ho, wo = cols.shape[:3]
        g = grad.reshape(n, self.out_channels, ho, wo).transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
        flat_cols = cols.reshape(n * ho * wo, -1)
        grads = {"weight": (g.T @ flat_cols).reshape(self.params["weight"].shape)}
        if "bias" in self.params:
            grads["bias"] = g.sum(axis=0)
        dcols = (g @ self.params["weight"].reshape(self.out_channels, -1)).reshape(cols.shape)
        dx = col2im(dcols, (n, *x_shape[2:]), self.kernel_size, self.stride, self.padding)
        return dx.reshape(x_shape), grads


class AvgPool2d(Layer):
    """Non-overlapping average pooling (stride equals kernel size)."""

    kind = "avgpool"

    def __init__(self, kernel_size=2):
        super().__init__()
        self.kernel_size = kernel_size

    def output_shape(self, in_shape):
        k = self.kernel_size
        if len(in_shape) != 3 or in_shape[1] % k or in_shape[2] % k:
            raise ShapeMismatch(f"avgpool({k}) needs (C, H, W) with H, W divisible by {k}, got {in_shape}")
        c, h, w = in_shape
        return (c, h // k, w // k)

    def forward(self, x, ctx):
        k = self.kernel_size
        c, ho, wo = self.output_shape(x.shape[2:])
        y = x.reshape(*x.shape[:2], c, ho, k, wo, k).mean(axis=(4, 6))
        return y, None

    def backward(self, cache, grad):
        k = self.kernel_size
        dx = np.repeat(np.repeat(grad, k, axis=-2), k, axis=-1) / (k * k)
        return dx, {}


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, ctx):
        return x.reshape(*x.shape[:2], -1), x.shape

    def backward(self, shape, grad):
        return grad.reshape(shape), {}


class Dropout(Layer):
    """Inverted dropout with one mask shared across all timesteps."""

    kind = "dropout"

    def __init__(self, p=0.5):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
        self.p = p

    def forward(self, x, ctx):
        if not ctx.train or self.p == 0.0:
            return x, None
        rng = ctx.rng if ctx.rng is not None else np.random.default_rng(0)
        mask = (rng.random(x.shape[1:]) >= self.p) / (1.0 - self.p)
        return x * mask, mask

    def backward(self, mask, grad):
        return (grad if mask is None else grad * mask), {}


class TDBN(Layer):
    """Threshold-dependent batch norm.

    Statistics are taken per channel (axis 2) jointly over timesteps, batch
    and spatial positions; the normalised value is scaled by ``eta * u_th``
    before the learnable affine ``gamma * x + xi``.
    """

    kind = "tdbn"

    def __init__(self, channels, u_th=0.5, eta=1.0, eps=1e-5, momentum=0.1):
        super().__init__()
        if not eps > 0:
            raise ValueError("eps must be > 0")
        self.channels, self.u_th, self.eta, self.eps, self.momentum = channels, u_th, eta, eps, momentum
        self.params["gamma"] = np.ones(channels)
        self.params["xi"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)
        self.no_decay = frozenset({"gamma", "xi"})

    @property
    def scale(self) -> float:
        return self.eta * self.u_th

    def output_shape(self, in_shape):
        if not in_shape or in_shape[0] != self.channels:
            raise ShapeMismatch(f"tdbn expects {self.channels} channels, got {in_shape}")
        return in_shape

    def _bshape(self, x):
        return (1, 1, self.channels) + (1,) * (x.ndim - 3)

    def _axes(self, x):
        return (0, 1) + tuple(range(3, x.ndim))

    def forward(self, x, ctx):
        if x.ndim < 3 or x.shape[2] != self.channels:
            raise ShapeMismatch(f"tdbn expects channel axis of size {self.channels}, got {x.shape}")
        bs = self._bshape(x)
        gamma, xi = self.params["gamma"].reshape(bs), self.params["xi"].reshape(bs)
        if ctx.train:
            axes = self._axes(x)
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            count = x.size // self.channels
            if ctx.update_stats:
                m = self.momentum
                unbiased = var * count / max(count - 1, 1)
                self.buffers["running_mean"] = (1 - m) * self.buffers["running_mean"] + m * mean
                self.buffers["running_var"] = (1 - m) * self.buffers["running_var"] + m * unbiased
        else:
            mean, var = self.buffers["running_mean"], self.buffers["running_var"]
            if np.any(var < 0):
                warnings.warn("negative running variance clamped to 0", NumericalWarning, stacklevel=2)
                var = np.maximum(var, 0.0)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(bs)) * inv_std.reshape(bs)
        y = gamma * self.scale * xhat + xi
        return y, (xhat, inv_std, ctx.train)

    def backward(self, cache, grad):
        xhat, inv_std, batch_stats = cache
        bs = self._bshape(grad)
        axes = self._axes(grad)
        grads = {"gamma": (grad * xhat).sum(axis=axes) * self.scale, "xi": grad.sum(axis=axes)}
        dxhat = grad * (self.params["gamma"] * self.scale).reshape(bs)
        if not batch_stats:
            return dxhat * inv_std.reshape(bs), grads
        n = grad.size // self.channels
        sum_d = dxhat.sum(axis=axes).reshape(bs)
        sum_dx = (dxhat * xhat).sum(axis=axes).reshape(bs)
        dx = inv_std.reshape(bs) / n * (n * dxhat - sum_d - xhat * sum_dx)
        return dx, grads


def tdbn_forward(i_seq, p: TDBN, mode: str = "train"):
    """Functional wrapper: normalise ``i_seq`` of shape (T, B, C, ...) in the given mode."""
    y, _ = p.forward(np.asarray(i_seq, dtype=np.float64), ForwardContext(train=(mode == "train")))
    return y


def tdbn_fold(p: TDBN, weights, bias=None):
    """Fold an eval-mode tdBN into the preceding dense/conv weights.

    ``weights`` has output channels on axis 0. Returns ``(weights', bias')``
    such that the affine layer with the folded values equals tdBN(eval)
    applied after the original layer.
    """
    rm, rv = p.buffers.get("running_mean"), p.buffers.get("running_var")
    if rm is None or rv is None:
        raise MissingRunningStats("tdBN has no running statistics to fold")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape[0] != p.channels:
        raise ShapeMismatch(f"weights have {weights.shape[0]} output channels, tdBN has {p.channels}")
    bias = np.zeros(p.channels) if bias is None else np.asarray(bias, dtype=np.float64)
    s = p.params["gamma"] * p.scale / np.sqrt(np.maximum(rv, 0.0) + p.eps)
    folded_w = weights * s.reshape((-1,) + (1,) * (weights.ndim - 1))
    folded_b = s * (bias - rm) + p.params["xi"]
    return folded_w, folded_b


@dataclass
class SpikeRecord:
    """Per-timestep pre-activations, membrane potentials and spikes of one layer."""

    current: np.ndarray
    potential: np.ndarray
    spikes: np.ndarray
    relaxed: np.ndarray | None = field(default=None, repr=False)


class Spiking(Layer):
    """A population of QIF or LIF neurons unrolled over the time axis.

    Membranes start at 0 with no pending spike. The reset gate ``1 - o(t)``
    always uses the hard spike and is treated as a constant in the backward
    pass; the surrogate only enters at ``d o(t) / d u(t)``.
    """

    kind = "spike"

    def __init__(self, neuron: str, qif: QifParams | None = None, lif: LifParams | None = None, surrogate=None):
        super().__init__()
        if neuron not in ("qif", "lif"):
            raise ValueError(f"unknown neuron kind {neuron!r}")
        self.neuron = neuron
        self.qif = qif or QifParams()
        self.lif = lif or LifParams()
        if surrogate is None:
            surrogate = RectangleSgConfig(1.0, self.u_th)
        self.surrogate: SurrogateWindow | RectangleSgConfig = surrogate

    @property
    def u_th(self) -> float:
        return self.qif.u_th if self.neuron == "qif" else self.lif.u_th

    @property
    def u_reset(self) -> float:
        return self.qif.u_reset if self.neuron == "qif" else self.lif.u_reset

    def _leak(self, u):
        if self.neuron == "qif":
            p = self.qif
            return p.a * (u - p.u_1) * (u - p.u_2)
        return self.lif.beta * u

    def _leak_slope(self, u):
        if self.neuron == "qif":
            p = self.qif
            return 2.0 * p.a * u - p.a * (p.u_1 + p.u_2)
        return np.full_like(u, self.lif.beta)

    def forward(self, x, ctx):
        steps = x.shape[0]
        u_seq = np.empty_like(x)
        o_seq = np.empty_like(x)
        u = np.zeros(x.shape[1:])
        o = np.zeros(x.shape[1:])
        for t in range(steps):
            u = self._leak(u) * (1.0 - o) + self.u_reset * o + x[t]
            o = heaviside(u - self.u_th)
            u_seq[t], o_seq[t] = u, o
        if not np.all(np.isfinite(u_seq)):
            raise NonFiniteValue(f"{self.neuron.upper()} membrane potential became non-finite in {self.name}")
        rec = SpikeRecord(x, u_seq, o_seq)
        if ctx.relaxed:
            rec.relaxed = self.surrogate.relaxed(u_seq)
            return rec.relaxed, rec
        return o_seq, rec

    def backward(self, rec: SpikeRecord, grad):
        # grad is dL/do(t) from downstream; walk time backwards.
        sg = self.surrogate.derivative(rec.potential)
        du_total = np.empty_like(grad)
        carry = np.zeros(grad.shape[1:])
        for t in range(grad.shape[0] - 1, -1, -1):
            du = grad[t] * sg[t] + carry
            du_total[t] = du
            if t > 0:
                carry = du * self._leak_slope(rec.potential[t - 1]) * (1.0 - rec.spikes[t - 1])
        return du_total, {}


class Residual(Layer):
    """Identity shortcut around a branch of layers: ``y = branch(x) + x``."""

    kind = "residual"

    def __init__(self, branch: list[Layer]):
        super().__init__()
        self.branch = list(branch)

    def children(self):
        return self.branch

    def output_shape(self, in_shape):
        shape = in_shape
        for layer in self.branch:
            shape = layer.output_shape(shape)
        if shape != in_shape:
            raise ShapeMismatch(f"residual branch maps {in_shape} to {shape}")
        return shape

    def forward(self, x, ctx):
        h, caches = x, []
        for layer in self.branch:
            h, c = layer.forward(h, ctx)
            caches.append(c)
        return h + x, caches

    def backward(self, caches, grad):
        g = grad
        grads = {}
        for layer, c in zip(reversed(self.branch), reversed(caches)):
            g, lg = layer.backward(c, g)
            grads.update({f"{layer.name}.{k}": v for k, v in lg.items()})
        return g + grad, grads


class Readout(Layer):
    """Non-spiking decoder: the time average of ``W o(t)``."""

    kind = "readout"

    def __init__(self, in_features, n_classes, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_features, self.n_classes = in_features, n_classes
        self.params["weight"] = _uniform_init(rng, (n_classes, in_features), in_features)

    def output_shape(self, in_shape):
        if in_shape != (self.in_features,):
            raise ShapeMismatch(f"readout expects ({self.in_features},), got {in_shape}")
        return (self.n_classes,)

    def forward(self, x, ctx):
        return decode_output(x, self.params["weight"]), x

    def backward(self, x, grad):
        steps = x.shape[0]
        grads = {"weight": grad.T @ x.sum(axis=0) / steps}
        dx = np.broadcast_to(grad @ self.params["weight"] / steps, x.shape).copy()
        return dx, grads


def decode_output(spikes, weight):
    """``(1/T) sum_t W o(t)`` for spikes shaped (T, B, H) and ``W`` shaped (m, H)."""
    spikes = np.asarray(spikes, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    if spikes.shape[-1] != weight.shape[1]:
        raise ShapeMismatch(f"readout weight {weight.shape} cannot decode spikes {spikes.shape}")
    return spikes.mean(axis=0) @ weight.T
