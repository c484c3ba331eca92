"""Surrogate derivatives for the spike nonlinearity.

Two surrogates are provided: the analytical window centred on the predicted
membrane distribution of a tdBN-driven QIF neuron, and the classic rectangle
around the threshold. Each also exposes a piecewise-linear *relaxation* whose
exact derivative is the surrogate; the gradient checker uses it as a
differentiable stand-in for the step function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def theorem1_stats(p) -> tuple[float, float]:
    """Predicted mean and variance of the membrane potential under N(0, u_th**2) input.

    ``p`` only needs attributes ``a, u_1, u_2, u_th``; degenerate values
    (``a = 0``, ``u_th = 0``) are accepted so limiting cases can be probed.

    >>> from qifsnn.neuron import QifParams
    >>> theorem1_stats(QifParams())
    (0.0625, 0.26171875)
    """
    a, u_1, u_2, u_th = p.a, p.u_1, p.u_2, p.u_th
    mean = a * (u_th**2 + u_1 * u_2)
    var = u_th**2 * (1.0 + a**2 * (2.0 * u_th**2 + (u_1 + u_2) ** 2))
    return mean, var


@dataclass(frozen=True)
class SurrogateWindow:
    mu_u: float
    sigma_u: float

    def __post_init__(self):
        if not self.sigma_u >= 0:
            raise ValueError(f"sigma_u must be >= 0, got {self.sigma_u}")

    @property
    def lower(self) -> float:
        return self.mu_u - self.sigma_u

    @property
    def upper(self) -> float:
        return self.mu_u + self.sigma_u

    def derivative(self, u):
        u = np.asarray(u, dtype=np.float64)
        return ((u >= self.lower) & (u <= self.upper)).astype(np.float64)

    def relaxed(self, u):
        """Ramp rising with unit slope across the window, flat outside it."""
        return np.clip(np.asarray(u, dtype=np.float64) - self.lower, 0.0, self.upper - self.lower)

    def boundaries(self) -> tuple[float, ...]:
        return (self.lower, self.upper)


def qif_window(p) -> SurrogateWindow:
    mean, var = theorem1_stats(p)
    return SurrogateWindow(mean, math.sqrt(var))


def qif_surrogate_derivative(u, w: SurrogateWindow):
    """1 inside the closed window ``[mu_u - sigma_u, mu_u + sigma_u]``, else 0."""
    d = w.derivative(u)
    return float(d) if d.ndim == 0 else d


@dataclass(frozen=True)
class RectangleSgConfig:
    alpha: float = 1.0
    u_th: float = 0.5

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")

    def derivative(self, u):
        u = np.asarray(u, dtype=np.float64)
        return (np.abs(u - self.u_th) < self.alpha / 2).astype(np.float64) / self.alpha

    def relaxed(self, u):
        u = np.asarray(u, dtype=np.float64)
        return np.clip((u - self.u_th) / self.alpha + 0.5, 0.0, 1.0)

    def boundaries(self) -> tuple[float, ...]:
        return (self.u_th - self.alpha / 2, self.u_th + self.alpha / 2)


def rectangle_surrogate(u, cfg: RectangleSgConfig):
    d = cfg.derivative(u)
    return float(d) if d.ndim == 0 else d


def monte_carlo_stats(p, n: int, seed: int) -> tuple[float, float]:
    """Sample mean and variance of the one-step membrane model.

    Draws independent ``I(t-1), I(t) ~ N(0, u_th**2)`` and evaluates
    ``a (I(t-1) - u_1)(I(t-1) - u_2) + I(t)``. Deterministic for a given seed.
    """
    u, _ = _one_step_samples(p, n, seed)
    return float(u.mean()), float(u.var())


def _one_step_samples(p, n: int, seed: int):
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    draws = rng.standard_normal((2, n)) * p.u_th
    prev, cur = draws
    u = p.a * (prev - p.u_1) * (prev - p.u_2) + cur
    return u, rng


def monte_carlo_moments(p, n: int, seed: int) -> dict:
    """Sample moments plus their standard errors, for tolerance checks.

    The standard error of the variance uses the sample fourth central moment,
    ``sqrt((m4 - s**4) / n)``.
    """
    u, _ = _one_step_samples(p, n, seed)
    mean = float(u.mean())
    centred = u - mean
    var = float(np.mean(centred**2))
    m4 = float(np.mean(centred**4))
    return {
        "mean": mean,
        "var": var,
        "se_mean": math.sqrt(var / n),
        "se_var": math.sqrt(max(m4 - var**2, 0.0) / n),
        "n": n,
    }
