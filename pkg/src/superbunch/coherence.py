"""Closed-form temporal coherence of cascaded pseudothermal light.

All functions return degrees of coherence: the background where every
pairwise delay is much longer than the coherence time is normalized to 1.
Times are in seconds and bandwidths are angular (rad/s).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations
from typing import Sequence

import numpy as np

from .model import TimeTuple

_SERIES_CUTOFF = 1e-4
MAX_PERMANENT_ORDER = 6


def sinc(x):
    """sin(x)/x with a Taylor fallback near zero."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < _SERIES_CUTOFF
    safe = np.where(small, 1.0, x)
    x2 = x * x
    out = np.where(small, 1.0 - x2 / 6.0 + x2 * x2 / 120.0, np.sin(safe) / safe)
    return out if out.ndim else float(out)


def dsinc(x):
    """Derivative of sinc."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < _SERIES_CUTOFF
    safe = np.where(small, 1.0, x)
    x2 = x * x
    out = np.where(small, -x / 3.0 + x * x2 / 30.0, (np.cos(safe) - np.sin(safe) / safe) / safe)
    return out if out.ndim else float(out)


def _check_bandwidth(bandwidth):
    if np.any(np.asarray(bandwidth) <= 0):
        raise ValueError("bandwidth must be positive")


def g1(tau, bandwidth):
    """First-order coherence of a flat spectrum of angular width `bandwidth`."""
    _check_bandwidth(bandwidth)
    return sinc(np.multiply(bandwidth, tau) / 2.0)


def stage_bracket(times, bandwidth):
    """Third-order coherence contributed by one scattering stage.

    `times` is any (t1, t2, t3) triple; components may be arrays that
    broadcast together.
    """
    t1, t2, t3 = (np.asarray(t, dtype=float) for t in times)
    s12 = g1(t1 - t2, bandwidth)
    s23 = g1(t2 - t3, bandwidth)
    s31 = g1(t3 - t1, bandwidth)
    return 1.0 + s12 * s12 + s23 * s23 + s31 * s31 + 2.0 * s12 * s23 * s31


def permanent(matrix) -> float:
    """Permanent by explicit summation over all row permutations."""
    m = np.asarray(matrix, dtype=float)
    n = m.shape[0]
    if m.shape != (n, n):
        raise ValueError("matrix must be square")
    rows = range(n)
    total = 0.0
    for cols in permutations(rows):
        term = 1.0
        for i, j in zip(rows, cols):
            term *= m[i, j]
        total += term
    return total


def coherence_matrix(times: Sequence[float], bandwidth: float) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    return np.asarray(g1(t[:, None] - t[None, :], bandwidth), dtype=float)


def permanent_oracle(times: Sequence[float], bandwidth: float) -> float:
    """Sum over every assignment of detection times to scattered photons.

    Each of the N! assignments contributes the product of first-order
    coherences linking the paired times, i.e. the permanent of
    M_ij = g1(t_i - t_j).
    """
    _check_bandwidth(bandwidth)
    return permanent(coherence_matrix(times, bandwidth))


@dataclass(frozen=True)
class CoherenceModel:
    order: int
    bandwidths: tuple[float, ...] = ()

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be >= 1")
        object.__setattr__(self, "bandwidths", tuple(float(b) for b in self.bandwidths))
        _check_bandwidth(self.bandwidths)

    @property
    def n_stages(self) -> int:
        return len(self.bandwidths)

    def zero_delay(self) -> int:
        return gN_zero(self.order, self.n_stages)

    def __call__(self, times):
        if self.order == 3:
            return g3(times, self)
        return gN(times, self)


def g3(times, model: CoherenceModel):
    """Degree of third-order coherence for an n-stage cascade."""
    if model.order != 3:
        raise ValueError("g3 requires a model of order 3")
    t1, t2, t3 = times
    out = np.ones(np.broadcast(np.asarray(t1), np.asarray(t2), np.asarray(t3)).shape)
    for bw in model.bandwidths:
        out = out * stage_bracket((t1, t2, t3), bw)
    return out if out.ndim else float(out)


def gN(times: Sequence[float], model: CoherenceModel) -> float:
    """Degree of Nth-order coherence at one time tuple via per-stage permanents."""
    if len(times) != model.order:
        raise ValueError(f"expected {model.order} times, got {len(times)}")
    if model.order > MAX_PERMANENT_ORDER:
        raise ValueError(f"order > {MAX_PERMANENT_ORDER} not supported away from zero delay")
    out = 1.0
    for bw in model.bandwidths:
        out *= permanent_oracle(times, bw)
    return out


def gN_zero(order: int, n_stages: int) -> int:
    """Zero-delay degree of coherence, (N!)^n, as an exact integer."""
    if order < 1 or n_stages < 0:
        raise ValueError("need order >= 1 and n_stages >= 0")
    return math.factorial(order) ** n_stages


def g2(tau, bandwidths: Sequence[float]):
    out = np.ones(np.shape(tau))
    for bw in bandwidths:
        out = out * (1.0 + g1(tau, bw) ** 2)
    return out if out.ndim else float(out)


def slice_model_t1_eq_t3(tau, bandwidths: Sequence[float]):
    """g3 along t1 = t3 as a function of tau = t1 - t2.

    Each stage contributes (2 + 4 g1^2) / 2, so the far tail is 1 and the
    peak is 3 per stage.
    """
    out = np.ones(np.shape(tau))
    for bw in bandwidths:
        out = out * (1.0 + 2.0 * g1(tau, bw) ** 2)
    return out if out.ndim else float(out)


# t1 = t2 gives the same profile in tau = t2 - t3
slice_model_t1_eq_t2 = slice_model_t1_eq_t3


def slice_model_diag(tau, bandwidths: Sequence[float]):
    """g3 along t1 - t2 = t2 - t3 = tau."""
    out = np.ones(np.shape(tau))
    for bw in bandwidths:
        u = g1(tau, bw)
        v = g1(2.0 * np.asarray(tau, dtype=float), bw)
        out = out * (1.0 + 2.0 * u * u + v * v + 2.0 * u * u * v)
    return out if out.ndim else float(out)


def surface(tau12, tau23, bandwidths: Sequence[float]):
    """g3 on a (t1 - t2, t2 - t3) grid; returns array of shape (len(tau12), len(tau23))."""
    a = np.asarray(tau12, dtype=float)[:, None]
    b = np.asarray(tau23, dtype=float)[None, :]
    return g3((a + b, b, np.zeros_like(b)), CoherenceModel(3, tuple(bandwidths)))


__all__ = [
    "CoherenceModel",
    "TimeTuple",
    "dsinc",
    "g1",
    "g2",
    "g3",
    "gN",
    "gN_zero",
    "permanent",
    "permanent_oracle",
    "sinc",
    "slice_model_diag",
    "slice_model_t1_eq_t2",
    "slice_model_t1_eq_t3",
    "stage_bracket",
    "surface",
]
