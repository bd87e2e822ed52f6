"""Welfare, utility and involution measures, plus benchmark comparison stats.

Incomes passed to :func:`welfare` are cumulative earnings at the time of
measurement, not per-step deltas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np


class InvolutionLevel(str, Enum):
    LOW = "low"
    MODERATE = "moderate"
    HIGH = "high"


LOW_MAX = 30.0
MODERATE_MAX = 60.0


@dataclass(frozen=True)
class UtilityParams:
    eta: float = 0.2
    epsilon: float = 1e-6

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("metrics.eta must be > 0")
        if not self.epsilon > 0:
            raise ValueError("metrics.epsilon must be > 0")


@dataclass(frozen=True)
class WelfareSnapshot:
    eq: float
    prod: float
    swf: float


def crra(z: float, eta: float, epsilon: float = 1e-6) -> float:
    """Constant-relative-risk-aversion utility of a cumulative reward ``z``.

    ``eta == 1`` is the log limit. For ``eta >= 1`` the reward is floored at
    ``epsilon`` so that a rider who never earned anything still has a finite
    utility.
    """
    if not eta > 0:
        raise ValueError("metrics.eta must be > 0")
    if z < 0:
        raise ValueError(f"cumulative reward must be >= 0, got {z}")
    if eta >= 1 and z < epsilon:
        z = epsilon
    if eta == 1:
        return math.log(z)
    return (z ** (1.0 - eta) - 1.0) / (1.0 - eta)


def rider_utility(reward_sum: float, cost_sum: float, params: UtilityParams) -> float:
    return crra(reward_sum, params.eta, params.epsilon) - cost_sum


def utilities(rewards: Sequence[float], costs: Sequence[float], params: UtilityParams) -> np.ndarray:
    """Vectorised :func:`rider_utility` over a population."""
    z = np.asarray(rewards, dtype=float)
    c = np.asarray(costs, dtype=float)
    if np.any(z < 0):
        raise ValueError("cumulative reward must be >= 0")
    eta = params.eta
    if eta >= 1:
        z = np.maximum(z, params.epsilon)
    if eta == 1:
        u = np.log(z)
    else:
        u = (z ** (1.0 - eta) - 1.0) / (1.0 - eta)
    return u - c


def gini(incomes: Sequence[float]) -> float:
    """Mean absolute pairwise difference over twice the mean.

    Uses the sorted-rank identity, which equals
    ``sum_i sum_j |x_i - x_j| / (2 n^2 mu)``. All-zero incomes give 0.
    """
    x = np.asarray(incomes, dtype=float)
    if x.size == 0:
        raise ValueError("gini of an empty vector is undefined")
    if np.any(x < 0):
        raise ValueError("incomes must be non-negative")
    total = x.sum()
    if total == 0:
        return 0.0
    n = x.size
    xs = np.sort(x)
    ranks = np.arange(1, n + 1)
    # sum_{i<j} (x_j - x_i) = sum_k (2k - n - 1) x_(k)
    pair_sum = np.sum((2 * ranks - n - 1) * xs)
    return float(pair_sum / (n * total))


def welfare(incomes: Sequence[float]) -> WelfareSnapshot:
    x = np.asarray(incomes, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("equality undefined for N<2")
    g = gini(x)
    eq = 1.0 - g * n / (n - 1)
    # float noise can push eq a hair outside [0, 1]
    eq = min(1.0, max(0.0, eq))
    prod = float(x.sum())
    return WelfareSnapshot(eq=eq, prod=prod, swf=eq * prod)


def involution_index(swf_T: float, utilities: Sequence[float]) -> float:
    u = np.asarray(utilities, dtype=float)
    if u.size == 0:
        raise ValueError("involution index needs at least one utility")
    mean_u = float(u.mean())
    if not mean_u > 0:
        raise ValueError("involution index undefined for non-positive average utility")
    return swf_T / mean_u


def classify_involution(index: float) -> InvolutionLevel:
    if not index >= 0:
        raise ValueError(f"involution index must be >= 0, got {index}")
    if index <= LOW_MAX:
        return InvolutionLevel.LOW
    if index <= MODERATE_MAX:
        return InvolutionLevel.MODERATE
    return InvolutionLevel.HIGH


def benchmark_compare(real: Sequence[float], sim: Sequence[float]) -> dict:
    """MAE, RMSE and Pearson r between an observed and a simulated series.

    ``pearson`` is ``None`` (with ``pearson_error`` set) when either series is
    constant, since the correlation is undefined there.
    """
    r = np.asarray(real, dtype=float)
    s = np.asarray(sim, dtype=float)
    if r.shape != s.shape:
        raise ValueError(f"length mismatch: {r.size} vs {s.size}")
    if r.ndim != 1 or r.size < 2:
        raise ValueError("series must be 1-d with at least 2 points")
    err = s - r
    out = {
        "mae": float(np.mean(np.abs(err))),
        "rmse": float(np.sqrt(np.mean(err**2))),
        "pearson": None,
        "pearson_error": None,
    }
    rc = r - r.mean()
    sc = s - s.mean()
    denom = math.sqrt(float(np.dot(rc, rc)) * float(np.dot(sc, sc)))
    if denom == 0:
        out["pearson_error"] = "constant series: pearson undefined"
    else:
        out["pearson"] = float(np.dot(rc, sc) / denom)
    return out
