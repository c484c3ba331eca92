"""Run configuration: an INI-style key/value file.

The ``[training]`` section mirrors the usual hyperparameter table rows
(optimizer, learning rate, weight decay, momentum, epochs, batch size,
timesteps, dropout). Every other section configures one subsystem.
Unknown sections and keys are rejected so typos fail loudly.

Example::

    [run]
    seed = 0

    [training]
    optimizer = sgd
    learning_rate = 0.1
    timesteps = 2

    [neuron]
    kind = qif
    a = 0.25
    u_1 = 0.0
    u_2 = 0.5
    u_th = 0.5
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from typing import get_type_hints

from .errors import ConfigError
from .neuron import LifParams, QifParams


@dataclass
class RunSection:
    seed: int = 0
    out: str = "out"
    threads: int = 1


@dataclass
class TrainingSection:
    optimizer: str = "sgd"
    learning_rate: float = 0.1
    weight_decay: float = 1e-4
    momentum: float = 0.9
    epochs: int = 50
    batch_size: int = 32
    timesteps: int = 2
    dropout: float = 0.0
    scheduler: str = "cosine"
    grad_clip: float | None = None


@dataclass
class NetworkSection:
    architecture: str = "tiny_dense"
    hidden: int = 32
    channels: tuple = (8, 16)
    spec_file: str | None = None


@dataclass
class NeuronSection:
    kind: str = "qif"
    a: float | None = None
    u_r: float | None = None
    u_c: float | None = None
    u_1: float | None = None
    u_2: float | None = None
    u_th: float = 0.5
    u_reset: float = 0.0
    beta: float = 0.25
    lif_u_th: float = 0.5

    def qif_params(self) -> QifParams:
        a = 0.25 if self.a is None else self.a
        have_fp = self.u_r is not None or self.u_c is not None
        have_roots = self.u_1 is not None or self.u_2 is not None
        common = dict(a=a, u_th=self.u_th, u_reset=self.u_reset)
        if have_fp and have_roots:
            return QifParams(u_r=self.u_r, u_c=self.u_c, u_1=self.u_1, u_2=self.u_2, **common)
        if have_fp:
            if self.u_r is None or self.u_c is None:
                raise ConfigError("give both u_r and u_c")
            return QifParams.from_fixed_points(u_r=self.u_r, u_c=self.u_c, **common)
        u_1 = 0.0 if self.u_1 is None else self.u_1
        u_2 = 0.5 if self.u_2 is None else self.u_2
        return QifParams.from_roots(u_1=u_1, u_2=u_2, **common)

    def lif_params(self) -> LifParams:
        return LifParams(beta=self.beta, u_th=self.lif_u_th, u_reset=self.u_reset)


@dataclass
class SurrogateSection:
    kind: str = "auto"
    alpha: float = 1.0

    def resolve(self, neuron: str) -> str:
        if self.kind == "auto":
            return "window" if neuron == "qif" else "rectangle"
        return self.kind


@dataclass
class EnergySection:
    e_mac: float = 4.6e-12
    e_ac: float = 0.9e-12


@dataclass
class DataSection:
    source: str = "blobs"
    classes: int = 3
    n_per_class: int = 200
    dim: int = 8
    separation: float = 4.0
    test_fraction: float = 0.3
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None


@dataclass
class AnalyzeSection:
    initial_conditions: tuple = (-0.4, -0.2, 0.1, 0.3, 0.4, 4.6)
    grid: tuple | None = None
    grid_min: float = -1.0
    grid_max: float = 5.0
    grid_points: int = 121
    max_steps: int = 1000
    conv_tol: float = 1e-9
    div_bound: float = 1e3
    tol: float = 1e-9


@dataclass
class VerifySection:
    n: int = 1_000_000
    se_multiple: float = 5.0


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    neuron: NeuronSection = field(default_factory=NeuronSection)
    surrogate: SurrogateSection = field(default_factory=SurrogateSection)
    energy: EnergySection = field(default_factory=EnergySection)
    data: DataSection = field(default_factory=DataSection)
    analyze: AnalyzeSection = field(default_factory=AnalyzeSection)
    verify: VerifySection = field(default_factory=VerifySection)

    def to_text(self) -> str:
        return dump_config(self)


def _convert(raw: str, hint, where: str):
    text = raw.strip()
    optional = "None" in str(hint)
    if optional and text.lower() in ("", "none"):
        return None
    base = str(hint).replace(" | None", "")
    try:
        if hint is int or base == "int":
            return int(text)
        if hint is float or base == "float":
            return float(text)
        if hint is tuple or base == "tuple":
            return tuple(_scalar(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from exc
    return text


def _scalar(text: str):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        return float(text)


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    cfg = RunConfig()
    sections = {f.name: f for f in fields(RunConfig)}
    for name in cp.sections():
        if name not in sections:
            raise ConfigError(f"unknown section [{name}]")
        section = getattr(cfg, name)
        hints = get_type_hints(type(section))
        known = {f.name for f in fields(section)}
        for key, raw in cp.items(name):
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            setattr(section, key, _convert(raw, hints[key], f"[{name}] {key}"))
    validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for sec in fields(cfg):
        section = getattr(cfg, sec.name)
        lines.append(f"[{sec.name}]")
        for f in fields(section):
            lines.append(f"{f.name} = {_format(getattr(section, f.name))}")
        lines.append("")
    return "\n".join(lines)


def validate(cfg: RunConfig) -> None:
    """Check cross-field constraints that the parser alone cannot."""
    if cfg.neuron.kind not in ("qif", "lif"):
        raise ConfigError(f"[neuron] kind must be qif or lif, got {cfg.neuron.kind!r}")
    if cfg.surrogate.kind not in ("auto", "window", "rectangle"):
        raise ConfigError(f"[surrogate] kind must be auto, window or rectangle")
    if cfg.data.source not in ("blobs", "idx"):
        raise ConfigError("[data] source must be blobs or idx")
    if cfg.training.optimizer not in ("sgd", "adam"):
        raise ConfigError("[training] optimizer must be sgd or adam")
    if cfg.training.scheduler not in ("cosine", "constant"):
        raise ConfigError("[training] scheduler must be cosine or constant")
    if cfg.run.threads < 1:
        raise ConfigError("[run] threads must be >= 1")


def replace_section(cfg: RunConfig, name: str, **changes) -> RunConfig:
    """Copy of ``cfg`` with fields of one section replaced."""
    section = dataclasses.replace(getattr(cfg, name), **changes)
    return dataclasses.replace(cfg, **{name: section})
