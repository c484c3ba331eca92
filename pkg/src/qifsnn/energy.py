"""Layer-wise AC/MAC energy estimate for spiking networks.

Energy of layer i over T timesteps::

    E_i = T * (fr * E_AC * OP_AC + E_MAC * OP_MAC)

Synaptic adds driven by binary spikes are ACs, scaled by the firing rate of
the spikes feeding the layer. Synaptic ops on real-valued input (the
direct-encoded first layer) and membrane updates are MACs: one per LIF
neuron, two per QIF neuron.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidParams, InvalidRate, UnsupportedLayer
from .layers import TDBN, AvgPool2d, Conv2d, Dense, Dropout, Flatten, Layer, Readout, Residual, Spiking
from .network import ForwardRecord, SpikingNetwork

MAC_PER_UPDATE = {"lif": 1, "qif": 2}


@dataclass(frozen=True)
class EnergyConstants:
    e_mac: float = 4.6e-12
    e_ac: float = 0.9e-12

    def __post_init__(self):
        if not (self.e_mac > 0 and self.e_ac > 0):
            raise InvalidParams("energy constants must be > 0")


@dataclass(frozen=True)
class LayerOpCounts:
    op_ac: int = 0
    op_mac: int = 0
    neuron_count: int = 0


def layer_energy(T: int, fr: float, counts: LayerOpCounts, k: EnergyConstants = EnergyConstants()) -> float:
    """Joules spent by one layer over ``T`` timesteps at firing rate ``fr``."""
    if T < 1:
        raise InvalidParams(f"T must be >= 1, got {T}")
    if not 0.0 <= fr <= 1.0:
        raise InvalidRate(f"firing rate must lie in [0, 1], got {fr}")
    return T * (fr * k.e_ac * counts.op_ac + k.e_mac * counts.op_mac)


def count_ops(layer: Layer, real_input: bool = False) -> LayerOpCounts:
    """Per-timestep op counts for one sample passing through ``layer``.

    ``real_input`` marks a synaptic layer fed by non-binary values, whose
    synaptic ops are then MACs instead of ACs.
    """
    if isinstance(layer, (Dense, Readout)):
        synops = layer.params["weight"].size
    elif isinstance(layer, Conv2d):
        _, ho, wo = layer.out_shape
        synops = ho * wo * layer.params["weight"].size
    elif isinstance(layer, Spiking):
        n = int(np.prod(layer.out_shape))
        return LayerOpCounts(0, n * MAC_PER_UPDATE[layer.neuron], n)
    elif isinstance(layer, (TDBN, AvgPool2d, Flatten, Dropout, Residual)):
        # tdBN folds into the preceding weights; reshapes and pooling are free here.
        return LayerOpCounts()
    else:
        raise UnsupportedLayer(f"no op model for {type(layer).__name__}")
    return LayerOpCounts(0, synops, 0) if real_input else LayerOpCounts(synops, 0, 0)


def firing_rate(record: ForwardRecord, layer_index: int) -> float:
    """Mean of the binary spike tensor of one spiking layer over time, batch and neurons."""
    return float(record.layer_record(layer_index).spikes.mean())


@dataclass
class LayerEnergy:
    name: str
    kind: str
    fr: float
    op_ac: int
    op_mac: int
    neuron_count: int
    energy_j: float


@dataclass
class EnergyReport:
    timesteps: int
    layers: list[LayerEnergy] = field(default_factory=list)
    total_j: float = 0.0
    lif_equivalent_j: float = 0.0
    qif_overhead_j: float = 0.0
    qif_overhead_percent: float = 0.0
    architecture: str = ""
    dataset: str = ""

    @property
    def total_mac(self) -> int:
        return sum(layer.op_mac for layer in self.layers)

    @property
    def total_ac(self) -> int:
        return sum(layer.op_ac for layer in self.layers)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["total_mac"], d["total_ac"] = self.total_mac, self.total_ac
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TABLE_HEADER)
        writer.writerow([
            self.architecture, self.dataset, self.timesteps, self.total_mac, self.total_ac,
            repr(self.total_j * 1e3), repr(self.qif_overhead_j * 1e3), repr(self.qif_overhead_percent),
        ])
        return buf.getvalue()


TABLE_HEADER = ("architecture", "dataset", "timesteps", "mac_ops", "ac_ops", "energy_mj",
                "overhead_mj", "overhead_percent")


def qif_overhead(neurons, T: int, k: EnergyConstants = EnergyConstants(), lif_total_j: float | None = None):
    """Extra energy of QIF over LIF updates: one MAC per QIF neuron per timestep.

    ``neurons`` is a QIF neuron count or a network (its QIF layers are
    counted). Returns ``(joules, percent)``; the percentage is relative to
    ``lif_total_j`` and is NaN when that is not given.
    """
    if T < 1:
        raise InvalidParams(f"T must be >= 1, got {T}")
    if isinstance(neurons, SpikingNetwork):
        neurons = sum(int(np.prod(l.out_shape)) for l in neurons.spiking_layers() if l.neuron == "qif")
    joules = T * neurons * (MAC_PER_UPDATE["qif"] - MAC_PER_UPDATE["lif"]) * k.e_mac
    if lif_total_j is None:
        percent = math.nan
    else:
        percent = 100.0 * joules / lif_total_j if lif_total_j > 0 else 0.0
    return joules, percent


def _layer_sequence(layers):
    for layer in layers:
        if isinstance(layer, Residual):
            yield layer, "enter"
            yield from _layer_sequence(layer.branch)
            yield layer, "exit"
        else:
            yield layer, None


def estimate_energy(net: SpikingNetwork, rates: dict[str, float], k: EnergyConstants = EnergyConstants(),
                    architecture: str = "", dataset: str = "") -> EnergyReport:
    """Energy report from per-spiking-layer firing rates (keyed by layer name).

    Synaptic layers take the rate of the spikes feeding them; the readout
    takes the rate of the last spiking layer.
    """
    T = net.spec.timesteps
    report = EnergyReport(T, architecture=architecture, dataset=dataset)
    source_rate: float | None = None  # None: real-valued (non-spike) tensor
    lif_total = 0.0
    for layer, marker in list(_layer_sequence(net.layers)) + [(net.readout, None)]:
        if marker == "enter":
            continue
        if marker == "exit":
            source_rate = None  # shortcut spikes plus a real-valued branch
            continue
        if isinstance(layer, Spiking):
            counts = count_ops(layer)
            fr = rates[layer.name]
            source_rate = fr
            lif_counts = LayerOpCounts(0, counts.neuron_count * MAC_PER_UPDATE["lif"], counts.neuron_count)
        elif isinstance(layer, (Dense, Conv2d, Readout)):
            real = source_rate is None
            counts = count_ops(layer, real_input=real)
            fr = 0.0 if real else source_rate
            lif_counts = counts
            source_rate = None
        else:
            if isinstance(layer, TDBN):
                source_rate = None
            continue
        energy = layer_energy(T, fr, counts, k)
        lif_total += layer_energy(T, fr, lif_counts, k)
        report.layers.append(LayerEnergy(layer.name, layer.kind, fr, counts.op_ac, counts.op_mac,
                                         counts.neuron_count, energy))
    total = 0.0
    for entry in report.layers:
        total += entry.energy_j
    report.total_j = total
    report.lif_equivalent_j = lif_total
    report.qif_overhead_j, report.qif_overhead_percent = qif_overhead(net, T, k, lif_total)
    return report


def measured_rates(record: ForwardRecord) -> dict[str, float]:
    return {name: float(rec.spikes.mean()) for name, rec in record.spikes.items()}


def merge_rates(records: list[ForwardRecord]) -> dict[str, float]:
    """Spike-count-weighted firing rates over several evaluation batches."""
    sums: dict[str, float] = {}
    sizes: dict[str, int] = {}
    for rec in records:
        for name, sr in rec.spikes.items():
            sums[name] = sums.get(name, 0.0) + float(sr.spikes.sum())
            sizes[name] = sizes.get(name, 0) + sr.spikes.size
    return {name: sums[name] / sizes[name] for name in sums}
