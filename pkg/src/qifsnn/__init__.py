"""Discretized quadratic integrate-and-fire spiking networks.

Dynamics analysis of the QIF map, analytical surrogate-gradient windows,
tdBN, STBP training with a scikit-learn style classifier, and an AC/MAC
energy model.
"""
from .dynamics import (
    Region,
    Stability,
    StabilityVerdict,
    Trajectory,
    classify_fixed_points,
    classify_region,
    cobweb_trajectory,
    phase_portrait_samples,
    stability_derivative,
    u_min,
)
from .energy import EnergyConstants, EnergyReport, LayerOpCounts, count_ops, estimate_energy, firing_rate, layer_energy, qif_overhead
from .estimator import SpikingClassifier
from .network import NetworkSpec, SpikingNetwork, network_forward
from .neuron import (
    LifParams,
    NeuronState,
    QifParams,
    derive_u1_u2,
    lif_update,
    qif_step,
    qif_update,
    recover_fixed_points,
)
from .surrogate import (
    RectangleSgConfig,
    SurrogateWindow,
    monte_carlo_stats,
    qif_surrogate_derivative,
    qif_window,
    rectangle_surrogate,
    theorem1_stats,
)
from .training import TrainConfig, cross_entropy, finite_difference_check, stbp_backward, train

__version__ = "0.1.0"
