"""Neuron parameter types and single-step LIF / QIF update kernels.

The discrete QIF recurrence is written in factored form

    u(t+1) = a (u(t) - u_1) (u(t) - u_2) + I(t)

where the roots ``u_1, u_2`` are tied to the resting and critical potentials
``u_r, u_c`` of the continuous model by coefficient matching:
``u_r + u_c = u_1 + u_2 + 1/a`` and ``u_r * u_c = u_1 * u_2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParams, NegativeDiscriminant, NonFiniteValue, ShapeMismatch

_CONSISTENCY_RTOL = 1e-9


def derive_u1_u2(a: float, u_r: float, u_c: float) -> tuple[float, float]:
    """Factored-form roots ``(u_1, u_2)`` from ``(a, u_r, u_c)``, smaller root first."""
    if not a > 0:
        raise InvalidParams(f"a must be > 0, got {a}")
    if not u_r < u_c:
        raise InvalidParams(f"need u_r < u_c, got u_r={u_r}, u_c={u_c}")
    disc = (u_c - u_r) ** 2 - 2.0 * (u_r + u_c) / a + 1.0 / a**2
    if disc < 0:
        raise NegativeDiscriminant(
            f"discriminant {disc:.6g} < 0 for a={a}, u_r={u_r}, u_c={u_c}: roots are complex"
        )
    centre = 0.5 * ((u_r + u_c) - 1.0 / a)
    half = 0.5 * math.sqrt(disc)
    return centre - half, centre + half


def recover_fixed_points(a: float, u_1: float, u_2: float) -> tuple[float, float]:
    """Inverse of :func:`derive_u1_u2`: the fixed points ``(u_r, u_c)``, ascending.

    They are the roots of ``x**2 - (u_1 + u_2 + 1/a) x + u_1 u_2``.
    """
    if not a > 0:
        raise InvalidParams(f"a must be > 0, got {a}")
    b = (u_1 + u_2) + 1.0 / a
    disc = b * b - 4.0 * u_1 * u_2
    if disc < 0:
        raise NegativeDiscriminant(
            f"fixed-point quadratic has no real roots for a={a}, u_1={u_1}, u_2={u_2}"
        )
    root = math.sqrt(disc)
    return 0.5 * (b - root), 0.5 * (b + root)


@dataclass(frozen=True)
class QifParams:
    """Parameters of the discrete QIF neuron.

    Build with :meth:`from_roots` or :meth:`from_fixed_points` rather than
    passing all seven fields by hand. ``QifParams()`` gives the default set
    ``a=0.25, u_1=0, u_2=0.5, u_th=0.5, u_reset=0`` (``u_r=0, u_c=4.5``).
    """

    a: float = 0.25
    u_r: float = 0.0
    u_c: float = 4.5
    u_1: float = 0.0
    u_2: float = 0.5
    u_th: float = 0.5
    u_reset: float = 0.0

    def __post_init__(self):
        for name in ("a", "u_r", "u_c", "u_1", "u_2", "u_th", "u_reset"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise InvalidParams(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, float(value))
        if not self.a > 0:
            raise InvalidParams(f"a must be > 0, got {self.a}")
        # u_r == u_c is admitted: it is the double-fixed-point limit of valid roots.
        if self.u_r > self.u_c:
            raise InvalidParams(f"need u_r <= u_c, got u_r={self.u_r}, u_c={self.u_c}")
        lo = max(self.u_1, self.u_2)
        if not lo <= self.u_th <= self.u_c:
            raise InvalidParams(
                f"threshold must satisfy max(u_1, u_2) <= u_th <= u_c, "
                f"got {lo} <= {self.u_th} <= {self.u_c}"
            )
        scale = max(1.0, abs(self.u_r), abs(self.u_c), abs(self.u_1), abs(self.u_2), 1.0 / self.a)
        sum_gap = (self.u_r + self.u_c) - (self.u_1 + self.u_2 + 1.0 / self.a)
        prod_gap = self.u_r * self.u_c - self.u_1 * self.u_2
        if abs(sum_gap) > _CONSISTENCY_RTOL * scale or abs(prod_gap) > _CONSISTENCY_RTOL * scale**2:
            raise InvalidParams(
                "(u_1, u_2) and (u_r, u_c) are inconsistent for the given a "
                f"(sum gap {sum_gap:.3g}, product gap {prod_gap:.3g})"
            )

    @classmethod
    def from_roots(cls, a=0.25, u_1=0.0, u_2=0.5, u_th=0.5, u_reset=0.0) -> "QifParams":
        u_r, u_c = recover_fixed_points(a, u_1, u_2)
        return cls(a=a, u_r=u_r, u_c=u_c, u_1=u_1, u_2=u_2, u_th=u_th, u_reset=u_reset)

    @classmethod
    def from_fixed_points(cls, a=0.25, u_r=0.0, u_c=4.5, u_th=0.5, u_reset=0.0) -> "QifParams":
        u_1, u_2 = derive_u1_u2(a, u_r, u_c)
        return cls(a=a, u_r=u_r, u_c=u_c, u_1=u_1, u_2=u_2, u_th=u_th, u_reset=u_reset)


@dataclass(frozen=True)
class LifParams:
    beta: float = 0.25
    u_th: float = 0.5
    u_reset: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise InvalidParams(f"beta must lie in (0, 1), got {self.beta}")
        if not self.u_th > 0:
            raise InvalidParams(f"u_th must be > 0, got {self.u_th}")


@dataclass(frozen=True)
class NeuronState:
    """Membrane potentials ``u`` and binary spikes ``o`` for a population."""

    u: np.ndarray
    o: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        o = np.asarray(self.o, dtype=np.float64)
        if u.shape != o.shape:
            raise ShapeMismatch(f"u has shape {u.shape} but o has shape {o.shape}")
        if not np.all((o == 0.0) | (o == 1.0)):
            raise InvalidParams("spike array must contain only 0 and 1")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "o", o)

    @classmethod
    def zeros(cls, shape) -> "NeuronState":
        return cls(np.zeros(shape), np.zeros(shape))


def heaviside(x):
    """Step function with ``heaviside(0) == 1``."""
    return (np.asarray(x) >= 0).astype(np.float64)


def qif_step(u, i, p: QifParams):
    """One zero-reset QIF map evaluation ``a (u - u_1)(u - u_2) + i``."""
    return p.a * (u - p.u_1) * (u - p.u_2) + i


def lif_step(u, i, p: LifParams):
    return p.beta * u + i


def _check_conformable(state: NeuronState, i) -> np.ndarray:
    i = np.asarray(i, dtype=np.float64)
    if i.shape != state.u.shape:
        raise ShapeMismatch(f"input shape {i.shape} does not match state shape {state.u.shape}")
    return i


def qif_update(state: NeuronState, i, p: QifParams) -> NeuronState:
    """Advance a QIF population one timestep, with hard reset after a spike."""
    i = _check_conformable(state, i)
    with np.errstate(over="ignore", invalid="ignore"):
        f = qif_step(state.u, 0.0, p)
        u_next = f * (1.0 - state.o) + p.u_reset * state.o + i
    if not np.all(np.isfinite(u_next)):
        raise NonFiniteValue("QIF membrane potential became non-finite")
    return NeuronState(u_next, heaviside(u_next - p.u_th))


def lif_update(state: NeuronState, i, p: LifParams) -> NeuronState:
    i = _check_conformable(state, i)
    u_next = p.beta * state.u * (1.0 - state.o) + p.u_reset * state.o + i
    if not np.all(np.isfinite(u_next)):
        raise NonFiniteValue("LIF membrane potential became non-finite")
    return NeuronState(u_next, heaviside(u_next - p.u_th))
