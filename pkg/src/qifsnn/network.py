"""Network descriptions, construction and the multi-timestep forward pass."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError, IndexOutOfRange, ShapeMismatch, UnsupportedLayer
from .layers import (
    TDBN,
    AvgPool2d,
    Conv2d,
    Dense,
    Dropout,
    Flatten,
    ForwardContext,
    Layer,
    Readout,
    Residual,
    SpikeRecord,
    Spiking,
)
from .neuron import LifParams, QifParams
from .surrogate import RectangleSgConfig, qif_window

SURROGATES = ("window", "rectangle")


@dataclass
class LayerSpec:
    """One layer descriptor. ``args`` holds kind-specific integers/floats.

    Kinds and their arguments:

    * ``dense``: ``out`` (input width inferred), optional ``bias``
    * ``conv``: ``out``, ``k``, ``s``, ``p``, optional ``bias``
    * ``tdbn``: optional ``eta`` (channels inferred)
    * ``spike``: optional ``neuron`` override (``qif``/``lif``)
    * ``avgpool``: ``k``; ``flatten``; ``dropout``: ``p``
    * ``residual``: ``body`` list of nested LayerSpecs
    """

    kind: str
    args: dict = field(default_factory=dict)
    body: list["LayerSpec"] = field(default_factory=list)


@dataclass
class NetworkSpec:
    input_shape: tuple
    n_classes: int
    timesteps: int = 2
    layers: list[LayerSpec] = field(default_factory=list)
    neuron: str = "qif"
    surrogate: str = "window"
    alpha: float = 1.0
    qif: QifParams = field(default_factory=QifParams)
    lif: LifParams = field(default_factory=LifParams)
    tdbn_eps: float = 1e-5
    tdbn_momentum: float = 0.1

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in np.atleast_1d(self.input_shape))
        if self.timesteps < 1:
            raise ConfigError("timesteps must be >= 1")
        if self.neuron not in ("qif", "lif"):
            raise ConfigError(f"neuron must be 'qif' or 'lif', got {self.neuron!r}")
        if self.surrogate not in SURROGATES:
            raise ConfigError(f"surrogate must be one of {SURROGATES}, got {self.surrogate!r}")

    def surrogate_for(self, neuron: str):
        if self.surrogate == "window":
            if neuron != "qif":
                raise ConfigError("the analytical window is derived for QIF neurons; use 'rectangle' for LIF")
            return qif_window(self.qif)
        u_th = self.qif.u_th if neuron == "qif" else self.lif.u_th
        return RectangleSgConfig(self.alpha, u_th)

    def replace(self, **changes) -> "NetworkSpec":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return NetworkSpec(**values)

    def to_text(self) -> str:
        return format_network_spec(self)

    @classmethod
    def from_text(cls, text: str) -> "NetworkSpec":
        return parse_network_spec(text)


def tiny_dense_spec(n_features, n_classes, hidden=32, timesteps=2, neuron="qif", **kw) -> NetworkSpec:
    """Two dense spiking blocks and a readout; the dense variant of TinyConvSNN."""
    layers = []
    for _ in range(2):
        layers += [LayerSpec("dense", {"out": hidden}), LayerSpec("tdbn"), LayerSpec("spike")]
    return NetworkSpec((n_features,), n_classes, timesteps, layers, neuron=neuron, **kw)


def tiny_conv_spec(input_shape, n_classes, channels=(8, 16), hidden=32, timesteps=2, neuron="qif", **kw):
    """TinyConvSNN: two conv spiking blocks with pooling, one dense spiking block."""
    layers = []
    for c in channels:
        layers += [
            LayerSpec("conv", {"out": c, "k": 3, "s": 1, "p": 1}),
            LayerSpec("tdbn"),
            LayerSpec("spike"),
            LayerSpec("avgpool", {"k": 2}),
        ]
    layers += [LayerSpec("flatten"), LayerSpec("dense", {"out": hidden}), LayerSpec("tdbn"), LayerSpec("spike")]
    return NetworkSpec(tuple(input_shape), n_classes, timesteps, layers, neuron=neuron, **kw)


def tiny_res_spec(input_shape, n_classes, channels=8, hidden=32, timesteps=2, neuron="qif", **kw):
    """TinyResSNN: a conv stem followed by two residual spiking blocks."""
    eta = 1.0 / math.sqrt(2.0)
    layers = [
        LayerSpec("conv", {"out": channels, "k": 3, "s": 1, "p": 1}),
        LayerSpec("tdbn"),
        LayerSpec("spike"),
    ]
    for _ in range(2):
        body = [
            LayerSpec("conv", {"out": channels, "k": 3, "s": 1, "p": 1}),
            LayerSpec("tdbn"),
            LayerSpec("spike"),
            LayerSpec("conv", {"out": channels, "k": 3, "s": 1, "p": 1}),
            LayerSpec("tdbn", {"eta": eta}),
        ]
        layers += [LayerSpec("residual", body=body), LayerSpec("spike")]
    layers += [
        LayerSpec("avgpool", {"k": 2}),
        LayerSpec("flatten"),
        LayerSpec("dense", {"out": hidden}),
        LayerSpec("tdbn"),
        LayerSpec("spike"),
    ]
    return NetworkSpec(tuple(input_shape), n_classes, timesteps, layers, neuron=neuron, **kw)


ARCHITECTURES = {"tiny_dense": tiny_dense_spec, "tiny_conv": tiny_conv_spec, "tiny_res": tiny_res_spec}


class SpikingNetwork:
    """Parameters and layer objects instantiated from a :class:`NetworkSpec`."""

    def __init__(self, spec: NetworkSpec, rng: np.random.Generator | None = None):
        self.spec = spec
        rng = rng if rng is not None else np.random.default_rng(0)
        self.layers, shape = self._build(spec.layers, spec.input_shape, rng, prefix="")
        if len(shape) != 1:
            raise ShapeMismatch(f"readout needs a flat input, got shape {shape}; add a flatten layer")
        self.readout = Readout(shape[0], spec.n_classes, rng=rng)
        self.readout.name = "readout"
        self.shapes = self._collect_shapes()

    def _build(self, specs, shape, rng, prefix):
        layers = []
        for idx, ls in enumerate(specs):
            name = f"{prefix}{idx}"
            layer = self._make(ls, shape, rng, name)
            layer.name = name
            layer.in_shape = shape
            shape = layer.output_shape(shape)
            layer.out_shape = shape
            layers.append(layer)
        return layers, shape

    def _make(self, ls: LayerSpec, shape, rng, name) -> Layer:
        spec, a = self.spec, ls.args
        if ls.kind == "dense":
            return Dense(int(np.prod(shape)) if len(shape) == 1 else _flat_error(shape), int(a["out"]),
                         bias=bool(a.get("bias", True)), rng=rng)
        if ls.kind == "conv":
            if len(shape) != 3:
                raise ShapeMismatch(f"conv layer {name} needs (C, H, W) input, got {shape}")
            return Conv2d(shape[0], int(a["out"]), int(a.get("k", 3)), int(a.get("s", 1)),
                          int(a.get("p", 0)), bias=bool(a.get("bias", True)), rng=rng)
        if ls.kind == "tdbn":
            neuron = a.get("neuron", spec.neuron)
            u_th = spec.qif.u_th if neuron == "qif" else spec.lif.u_th
            return TDBN(shape[0], u_th=u_th, eta=float(a.get("eta", 1.0)),
                        eps=spec.tdbn_eps, momentum=spec.tdbn_momentum)
        if ls.kind == "spike":
            neuron = a.get("neuron", spec.neuron)
            return Spiking(neuron, spec.qif, spec.lif, spec.surrogate_for(neuron))
        if ls.kind == "avgpool":
            return AvgPool2d(int(a.get("k", 2)))
        if ls.kind == "flatten":
            return Flatten()
        if ls.kind == "dropout":
            return Dropout(float(a.get("p", 0.5)))
        if ls.kind == "residual":
            body, out = self._build(ls.body, shape, rng, prefix=f"{name}.")
            if out != shape:
                raise ShapeMismatch(f"residual block {name} maps {shape} to {out}")
            return Residual(body)
        raise UnsupportedLayer(f"unknown layer kind {ls.kind!r}")

    def _collect_shapes(self):
        return {layer.name: (layer.in_shape, layer.out_shape) for layer in self.iter_layers()}

    def iter_layers(self):
        """All layers depth-first, residual bodies included, readout excluded."""
        stack = list(reversed(self.layers))
        while stack:
            layer = stack.pop()
            yield layer
            stack.extend(reversed(layer.children()))

    def spiking_layers(self) -> list[Spiking]:
        return [layer for layer in self.iter_layers() if isinstance(layer, Spiking)]

    def all_layers(self):
        yield from self.iter_layers()
        yield self.readout

    def named_parameters(self):
        for layer in self.all_layers():
            for key, value in layer.params.items():
                yield f"{layer.name}.{key}", value, key not in layer.no_decay

    def parameters(self) -> dict[str, np.ndarray]:
        return {name: value for name, value, _ in self.named_parameters()}

    def decay_mask(self) -> dict[str, bool]:
        return {name: decay for name, _, decay in self.named_parameters()}

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {}
        for layer in self.all_layers():
            for key, value in layer.params.items():
                state[f"{layer.name}.{key}"] = value.copy()
            for key, value in layer.buffers.items():
                state[f"{layer.name}.{key}"] = value.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = self.state_dict()
        missing = set(expected) - set(state)
        extra = set(state) - set(expected)
        if missing or extra:
            raise ShapeMismatch(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for layer in self.all_layers():
            for store in (layer.params, layer.buffers):
                for key in store:
                    value = np.asarray(state[f"{layer.name}.{key}"], dtype=np.float64)
                    if value.shape != store[key].shape:
                        raise ShapeMismatch(f"{layer.name}.{key}: expected {store[key].shape}, got {value.shape}")
                    store[key] = value.copy()

    def set_parameter(self, name: str, value: np.ndarray) -> None:
        layer_name, key = name.rsplit(".", 1)
        for layer in self.all_layers():
            if layer.name == layer_name:
                layer.params[key] = value
                return
        raise KeyError(name)


def _flat_error(shape):
    raise ShapeMismatch(f"dense layer needs a flat input, got {shape}; add a flatten layer")


@dataclass
class ForwardRecord:
    """Everything produced by one forward pass, sufficient to run backward."""

    timesteps: int
    caches: list
    readout_cache: np.ndarray
    output: np.ndarray
    spikes: dict[str, SpikeRecord] = field(default_factory=dict)
    train: bool = False
    relaxed: bool = False

    @property
    def spiking_layer_names(self) -> list[str]:
        return list(self.spikes)

    def layer_record(self, index: int) -> SpikeRecord:
        names = self.spiking_layer_names
        if not -len(names) <= index < len(names):
            raise IndexOutOfRange(f"spiking layer index {index} out of range (have {len(names)})")
        return self.spikes[names[index]]


def encode_input(x, spec: NetworkSpec) -> np.ndarray:
    """Direct encoding: replicate a static batch across timesteps.

    Inputs already shaped (T, B, *input_shape) pass through unchanged.
    """
    x = np.asarray(x, dtype=np.float64)
    n_in = len(spec.input_shape)
    if x.shape[1:] == spec.input_shape:
        return np.broadcast_to(x, (spec.timesteps,) + x.shape).copy()
    if x.ndim == n_in + 2 and x.shape[2:] == spec.input_shape:
        if x.shape[0] != spec.timesteps:
            raise ShapeMismatch(f"input has {x.shape[0]} timesteps, network expects {spec.timesteps}")
        return x
    raise ShapeMismatch(f"input shape {x.shape} does not match network input {spec.input_shape}")


def network_forward(net: SpikingNetwork, x, mode: str = "eval", relaxed: bool = False,
                    rng=None, update_stats: bool = True) -> ForwardRecord:
    """Run all layers over the whole time window and decode the output."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    ctx = ForwardContext(train=(mode == "train"), relaxed=relaxed, rng=rng, update_stats=update_stats)
    h = encode_input(x, net.spec)
    caches = []
    spikes: dict[str, SpikeRecord] = {}
    for layer in net.layers:
        h, cache = layer.forward(h, ctx)
        caches.append(cache)
    for layer, cache in _walk_caches(net.layers, caches):
        if isinstance(layer, Spiking):
            spikes[layer.name] = cache
    y_hat, rcache = net.readout.forward(h, ctx)
    return ForwardRecord(net.spec.timesteps, caches, rcache, y_hat, spikes, ctx.train, relaxed)


def _walk_caches(layers, caches):
    for layer, cache in zip(layers, caches):
        yield layer, cache
        if isinstance(layer, Residual):
            yield from _walk_caches(layer.branch, cache)


def network_backward(net: SpikingNetwork, record: ForwardRecord, loss_grad) -> tuple[dict, np.ndarray]:
    """Parameter gradients and input gradient for ``dL/dy_hat = loss_grad``."""
    grads: dict[str, np.ndarray] = {}
    g, rg = net.readout.backward(record.readout_cache, np.asarray(loss_grad, dtype=np.float64))
    grads.update({f"readout.{k}": v for k, v in rg.items()})
    for layer, cache in zip(reversed(net.layers), reversed(record.caches)):
        g, lg = layer.backward(cache, g)
        if isinstance(layer, Residual):
            grads.update(lg)
        else:
            grads.update({f"{layer.name}.{k}": v for k, v in lg.items()})
    ordered = {name: grads.get(name, np.zeros_like(value)) for name, value in net.parameters().items()}
    return ordered, g


def export_spike_raster(fh, record: ForwardRecord, layer_index: int = -1) -> None:
    """CSV rows ``(t, sample, neuron, spike)`` for the non-zero spikes of one layer."""
    rec = record.layer_record(layer_index)
    spikes = rec.spikes.reshape(rec.spikes.shape[0], rec.spikes.shape[1], -1)
    writer = csv.writer(fh)
    writer.writerow(("t", "sample", "neuron", "spike"))
    for t, b, n in zip(*np.nonzero(spikes)):
        writer.writerow((int(t), int(b), int(n), 1))


# --- declarative text format -------------------------------------------------

_HEADER_KEYS = ("input_shape", "classes", "timesteps", "neuron", "surrogate", "alpha",
                "tdbn_eps", "tdbn_momentum")
_QIF_KEYS = ("a", "u_1", "u_2", "u_th", "u_reset")
_LIF_KEYS = ("beta", "u_th", "u_reset")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def format_network_spec(spec: NetworkSpec) -> str:
    lines = [
        f"input_shape = {'x'.join(str(d) for d in spec.input_shape)}",
        f"classes = {spec.n_classes}",
        f"timesteps = {spec.timesteps}",
        f"neuron = {spec.neuron}",
        f"surrogate = {spec.surrogate}",
        f"alpha = {spec.alpha!r}",
        f"tdbn_eps = {spec.tdbn_eps!r}",
        f"tdbn_momentum = {spec.tdbn_momentum!r}",
    ]
    lines += [f"qif.{k} = {getattr(spec.qif, k)!r}" for k in _QIF_KEYS]
    lines += [f"lif.{k} = {getattr(spec.lif, k)!r}" for k in _LIF_KEYS]

    def emit(layers, depth):
        for ls in layers:
            pad = "  " * depth
            args = " ".join(f"{k}={_fmt(v)}" for k, v in ls.args.items())
            if ls.kind == "residual":
                lines.append(f"{pad}residual {args}".rstrip())
                emit(ls.body, depth + 1)
                lines.append(f"{pad}end")
            else:
                lines.append(f"{pad}layer {ls.kind} {args}".rstrip())

    emit(spec.layers, 0)
    lines.append("readout")
    return "\n".join(lines) + "\n"


def parse_network_spec(text: str) -> NetworkSpec:
    header: dict = {}
    qif: dict = {}
    lif: dict = {}
    stack: list[list[LayerSpec]] = [[]]
    saw_readout = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if saw_readout:
            raise ConfigError(f"line {lineno}: nothing may follow the readout")
        if "=" in line and not line.startswith(("layer", "residual")):
            key, value = (s.strip() for s in line.split("=", 1))
            if key.startswith("qif.") and key[4:] in _QIF_KEYS:
                qif[key[4:]] = float(value)
            elif key.startswith("lif.") and key[4:] in _LIF_KEYS:
                lif[key[4:]] = float(value)
            elif key in _HEADER_KEYS:
                header[key] = value
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            continue
        words = line.split()
        if words[0] == "layer":
            if len(words) < 2:
                raise ConfigError(f"line {lineno}: layer kind missing")
            stack[-1].append(LayerSpec(words[1], _parse_args(words[2:], lineno)))
        elif words[0] == "residual":
            block = LayerSpec("residual", _parse_args(words[1:], lineno))
            stack[-1].append(block)
            stack.append(block.body)
        elif words[0] == "end":
            if len(stack) == 1:
                raise ConfigError(f"line {lineno}: 'end' without residual")
            stack.pop()
        elif words[0] == "readout":
            saw_readout = True
        else:
            raise ConfigError(f"line {lineno}: cannot parse {raw!r}")
    if len(stack) != 1:
        raise ConfigError("unterminated residual block")
    if not saw_readout:
        raise ConfigError("network spec must end with a readout")
    for key in ("input_shape", "classes"):
        if key not in header:
            raise ConfigError(f"missing {key}")
    return NetworkSpec(
        input_shape=tuple(int(d) for d in header["input_shape"].split("x")),
        n_classes=int(header["classes"]),
        timesteps=int(header.get("timesteps", 2)),
        layers=stack[0],
        neuron=header.get("neuron", "qif"),
        surrogate=header.get("surrogate", "window"),
        alpha=float(header.get("alpha", 1.0)),
        qif=QifParams.from_roots(**qif) if qif else QifParams(),
        lif=LifParams(**lif) if lif else LifParams(),
        tdbn_eps=float(header.get("tdbn_eps", 1e-5)),
        tdbn_momentum=float(header.get("tdbn_momentum", 0.1)),
    )


def _parse_args(words, lineno) -> dict:
    args = {}
    for w in words:
        if "=" not in w:
            raise ConfigError(f"line {lineno}: expected key=value, got {w!r}")
        k, v = w.split("=", 1)
        args[k] = _parse_value(v)
    return args


def layer_forward(layer: Layer, x, mode: str = "eval"):
    """Apply a single stateless layer to a (T, B, ...) tensor."""
    y, _ = layer.forward(np.asarray(x, dtype=np.float64), ForwardContext(train=(mode == "train")))
    return y
