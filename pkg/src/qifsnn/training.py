"""STBP training: loss, backward pass, gradient oracle, optimizers and the epoch loop."""
from __future__ import annotations

import math
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import IncompleteRecord, ShapeMismatch
from .layers import Spiking
from .network import ForwardRecord, SpikingNetwork, network_backward, network_forward

OPTIMIZERS = ("sgd", "adam")
SCHEDULERS = ("cosine", "constant")


def substream(seed: int, label: str) -> np.random.Generator:
    """Independent RNG stream for one component, keyed by a fixed label."""
    return np.random.default_rng([int(seed), zlib.crc32(label.encode())])


# --- loss ---------------------------------------------------------------------

def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(y_hat, y) -> float:
    """Softmax cross-entropy of logits ``y_hat`` against one-hot ``y``, batch-averaged."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise ShapeMismatch(f"logits {y_hat.shape} and targets {y.shape} differ")
    z = y_hat - y_hat.max(axis=-1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    losses = -(y * log_p).sum(axis=-1)
    return float(losses.mean()) if losses.ndim else float(losses)


def cross_entropy_grad(y_hat, y):
    y_hat = np.asarray(y_hat, dtype=np.float64)
    n = y_hat.shape[0] if y_hat.ndim == 2 else 1
    return (softmax(y_hat) - y) / n


def one_hot(labels, n_classes: int):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


# --- backward -----------------------------------------------------------------

def stbp_backward(record: ForwardRecord, net: SpikingNetwork, loss_grad) -> dict[str, np.ndarray]:
    """Spatio-temporal backpropagation through a recorded forward pass.

    Spatial gradients pass through each spike via the layer's surrogate;
    temporal gradients follow ``du(t+1)/du(t)`` along the non-reset path.
    Returns one gradient per learnable parameter, keyed like
    :meth:`SpikingNetwork.parameters`.
    """
    if record.timesteps != net.spec.timesteps or len(record.caches) != len(net.layers):
        raise IncompleteRecord("record does not cover this network's layers and timesteps")
    for name, rec in record.spikes.items():
        if rec.potential.shape[0] != record.timesteps:
            raise IncompleteRecord(f"spiking layer {name} recorded {rec.potential.shape[0]} steps")
    grads, _ = network_backward(net, record, loss_grad)
    return grads


def loss_and_grads(net: SpikingNetwork, x, y_onehot, mode="train", relaxed=False, rng=None,
                   update_stats=True):
    record = network_forward(net, x, mode=mode, relaxed=relaxed, rng=rng, update_stats=update_stats)
    loss = cross_entropy(record.output, y_onehot)
    grads = stbp_backward(record, net, cross_entropy_grad(record.output, y_onehot))
    return loss, grads, record


# --- finite-difference oracle -------------------------------------------------

@dataclass
class GradCheckResult:
    max_relative_error: float
    checked: int
    excluded: int
    worst: str = ""
    errors: dict = field(default_factory=dict)


def _region_signature(net: SpikingNetwork, record: ForwardRecord) -> list[np.ndarray]:
    """Which side of every spike threshold and surrogate kink each membrane sits on."""
    sig = []
    for layer in net.spiking_layers():
        rec = record.spikes[layer.name]
        sig.append(rec.spikes.astype(np.int8))
        for edge in layer.surrogate.boundaries():
            sig.append(np.sign(rec.potential - edge).astype(np.int8))
    return sig


def finite_difference_check(net: SpikingNetwork, x, y_onehot, epsilon: float = 1e-5,
                            n_params: int | None = None, seed: int = 0, mode: str = "train",
                            floor: float = 1e-6) -> GradCheckResult:
    """Compare :func:`stbp_backward` with central differences on the relaxed forward.

    In the relaxed forward each spike output is replaced by a ramp whose slope
    is exactly the configured surrogate, while reset gates keep the hard
    spike; the analytic backward is then the true gradient almost everywhere.
    Entries whose +/- perturbations move any membrane across a threshold or a
    ramp kink are excluded. Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    Running statistics are left untouched.
    """
    base = dict(mode=mode, relaxed=True, update_stats=False)
    _, analytic, record = loss_and_grads(net, x, y_onehot, **base)
    sig0 = _region_signature(net, record)

    entries = [(name, idx) for name, value in net.parameters().items() for idx in np.ndindex(value.shape)]
    if n_params is not None and n_params < len(entries):
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(len(entries), size=n_params, replace=False))
        entries = [entries[i] for i in pick]

    params = net.parameters()
    result = GradCheckResult(0.0, 0, 0)
    for name, idx in entries:
        value = params[name]
        orig = value[idx]
        losses, stable = [], True
        for sign in (1.0, -1.0):
            value[idx] = orig + sign * epsilon
            rec = network_forward(net, x, **base)
            losses.append(cross_entropy(rec.output, y_onehot))
            stable &= all(np.array_equal(a, b) for a, b in zip(sig0, _region_signature(net, rec)))
        value[idx] = orig
        if not stable:
            result.excluded += 1
            continue
        numeric = (losses[0] - losses[1]) / (2 * epsilon)
        a = analytic[name][idx]
        err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        key = f"{name}{list(idx)}"
        result.errors[key] = err
        result.checked += 1
        if err > result.max_relative_error:
            result.max_relative_error, result.worst = err, key
    return result


# --- optimizers ----------------------------------------------------------------

@dataclass
class TrainConfig:
    optimizer: str = "sgd"
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 50
    batch_size: int = 32
    timesteps: int = 2
    seed: int = 0
    scheduler: str = "cosine"
    surrogate: str = "window"
    alpha: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float | None = None

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.scheduler not in SCHEDULERS:
            raise ValueError(f"scheduler must be one of {SCHEDULERS}")
        if self.learning_rate < 0 or self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise ValueError("learning rate and weight decay must be >= 0, momentum in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.timesteps < 1:
            raise ValueError("epochs, batch_size and timesteps must be >= 1")


def cosine_lr(base_lr: float, epoch: int, epochs: int) -> float:
    """Cosine decay from ``base_lr`` at epoch 0 towards 0 at ``epochs``."""
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * epoch / epochs))


class Optimizer:
    """SGD with momentum or Adam over a dict of named parameter arrays.

    Parameters are updated in place. Weight decay is added to the gradient
    (L2 style) only for names whose ``decay`` flag is set.
    """

    def __init__(self, params: dict[str, np.ndarray], decay: dict[str, bool], cfg: TrainConfig):
        self.params = params
        self.decay = decay
        self.cfg = cfg
        self.lr = cfg.learning_rate
        self.step_count = 0
        self.state: dict[str, dict[str, np.ndarray]] = {}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        cfg = self.cfg
        self.step_count += 1
        if cfg.grad_clip is not None:
            grads = clip_global_norm(grads, cfg.grad_clip)
        for name, p in self.params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
            if cfg.weight_decay and self.decay.get(name, True):
                g = g + cfg.weight_decay * p
            st = self.state.setdefault(name, {})
            if cfg.optimizer == "sgd":
                if cfg.momentum:
                    buf = st.get("momentum")
                    buf = g.copy() if buf is None else cfg.momentum * buf + g
                    st["momentum"] = buf
                    g = buf
                p -= self.lr * g
            else:
                m = st.get("m", np.zeros_like(p))
                v = st.get("v", np.zeros_like(p))
                m = cfg.beta1 * m + (1 - cfg.beta1) * g
                v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
                st["m"], st["v"] = m, v
                m_hat = m / (1 - cfg.beta1**self.step_count)
                v_hat = v / (1 - cfg.beta2**self.step_count)
                p -= self.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def optimizer_step(params, grads, state: Optimizer | None, cfg: TrainConfig, decay=None) -> Optimizer:
    """Functional form: apply one update, creating the optimizer state on first use."""
    if state is None:
        state = Optimizer(params, decay or {k: True for k in params}, cfg)
    state.step(grads)
    return state


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


# --- loop ---------------------------------------------------------------------

LOG_COLUMNS = ("epoch", "loss", "train_acc", "test_acc", "seconds")


def predict_logits(net: SpikingNetwork, x, batch_size: int = 256) -> np.ndarray:
    out = [network_forward(net, x[i : i + batch_size], mode="eval").output
           for i in range(0, len(x), batch_size)]
    return np.concatenate(out, axis=0)


def accuracy(net: SpikingNetwork, x, y, batch_size: int = 256) -> float:
    if len(x) == 0:
        return float("nan")
    return float(np.mean(predict_logits(net, x, batch_size).argmax(axis=1) == np.asarray(y)))


def train(net: SpikingNetwork, x_train, y_train, cfg: TrainConfig, x_test=None, y_test=None,
          callback=None) -> list[dict]:
    """Train ``net`` in place and return one log row per epoch.

    Mini-batches are reshuffled each epoch from the ``shuffle`` substream of
    ``cfg.seed``; dropout masks come from the ``dropout`` substream. The
    learning rate follows the configured scheduler, stepped per epoch.
    """
    x_train = np.asarray(x_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    targets = one_hot(y_train, net.spec.n_classes)
    shuffle_rng = substream(cfg.seed, "shuffle")
    dropout_rng = substream(cfg.seed, "dropout")
    opt = Optimizer(net.parameters(), net.decay_mask(), cfg)
    log = []
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        opt.lr = cosine_lr(cfg.learning_rate, epoch, cfg.epochs) if cfg.scheduler == "cosine" else cfg.learning_rate
        order = shuffle_rng.permutation(len(x_train))
        total, correct = 0.0, 0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            loss, grads, record = loss_and_grads(net, x_train[idx], targets[idx], rng=dropout_rng)
            total += loss * len(idx)
            correct += int(np.sum(record.output.argmax(axis=1) == y_train[idx]))
            opt.step(grads)
        row = {
            "epoch": epoch + 1,
            "loss": total / len(order),
            "train_acc": correct / len(order),
            "test_acc": accuracy(net, x_test, y_test) if x_test is not None else float("nan"),
            "seconds": time.perf_counter() - start,
        }
        log.append(row)
        if callback is not None:
            callback(row)
    return log


def spiking_layer_count(net: SpikingNetwork) -> int:
    return sum(isinstance(layer, Spiking) for layer in net.iter_layers())
