"""Time-of-day order intensity and Monte-Carlo order creation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .world import Order, Zone


@dataclass(frozen=True)
class IntensityProfile:
    """Five Gaussian bumps over the day fraction, scaled by a volume lever."""

    a: tuple[float, ...]
    b: tuple[float, ...]
    c: tuple[float, ...]
    volume_multiplier: float = 1.0

    def __post_init__(self):
        if not (len(self.a) == len(self.b) == len(self.c) == 5):
            raise ValueError("intensity profile needs exactly 5 components")
        if any(v < 0 for v in self.a):
            raise ValueError("amplitudes must be >= 0")
        if any(v <= 0 for v in self.c):
            raise ValueError("widths must be > 0")
        if self.volume_multiplier < 0:
            raise ValueError("volume_multiplier must be >= 0")

    @classmethod
    def from_config(cls, orders_cfg) -> "IntensityProfile":
        return cls(tuple(orders_cfg.a), tuple(orders_cfg.b), tuple(orders_cfg.c),
                   float(orders_cfg.volume_multiplier))


def intensity(x: float, profile: IntensityProfile) -> float:
    """Expected orders per step at day fraction ``x``."""
    if not 0 <= x < 1:
        raise ValueError(f"day fraction must lie in [0, 1), got {x}")
    a = np.asarray(profile.a, dtype=float)
    b = np.asarray(profile.b, dtype=float)
    c = np.asarray(profile.c, dtype=float)
    return float(profile.volume_multiplier * np.sum(a * np.exp(-(((x - b) / c) ** 2))))


def day_fraction(step: int, steps_per_day: int) -> float:
    return (step % steps_per_day) / steps_per_day


def step_intensities(profile: IntensityProfile, steps_per_day: int) -> np.ndarray:
    """Intensity at every step of one day; the engine caches this table."""
    return np.array([intensity(day_fraction(s, steps_per_day), profile) for s in range(steps_per_day)])


def _diamond(rng: np.random.Generator, cx: int, cy: int, radius: int) -> tuple[int, int]:
    # uniform over cells with |dx| + |dy| <= radius
    while True:
        dx, dy = rng.integers(-radius, radius + 1, size=2)
        if abs(dx) + abs(dy) <= radius:
            return int(cx + dx), int(cy + dy)


def sample_pickup(rng: np.random.Generator, zone: Zone, width: int, height: int) -> tuple[int, int]:
    """Uniform cell inside the zone's Manhattan radius and inside the grid."""
    while True:
        x, y = _diamond(rng, zone.center[0], zone.center[1], zone.radius)
        if 0 <= x < width and 0 <= y < height:
            return x, y


def sample_dropoff(rng: np.random.Generator, pickup: tuple[int, int], d_max: int,
                   width: int, height: int) -> tuple[int, int]:
    """Cell at Manhattan distance in ``[1, d_max]`` from ``pickup``, clamped to the grid."""
    d = int(rng.integers(1, d_max + 1))
    dx = int(rng.integers(-d, d + 1))
    dy = (d - abs(dx)) * (1 if rng.random() < 0.5 else -1)
    x = min(width - 1, max(0, pickup[0] + dx))
    y = min(height - 1, max(0, pickup[1] + dy))
    return x, y


def generate_orders(step: int, steps_per_day: int, profile: IntensityProfile, zones: Sequence[Zone],
                    rng: np.random.Generator, *, width: int, height: int, next_id: int = 0,
                    d_max: int = 10, base_fee: float = 2.0, per_cell_rate: float = 0.1,
                    mean: float | None = None) -> list[Order]:
    """Draw this step's new orders.

    The count is Poisson with mean ``intensity(day fraction)``; pass ``mean``
    to reuse a cached intensity. Pickup zones are drawn by zone weight.
    """
    if not zones:
        raise ValueError("cannot generate orders without zones")
    if mean is None:
        mean = intensity(day_fraction(step, steps_per_day), profile)
    if mean <= 0:
        return []
    count = int(rng.poisson(mean))
    if count == 0:
        return []
    weights = np.array([z.weight for z in zones], dtype=float)
    weights = weights / weights.sum()
    zone_idx = rng.choice(len(zones), size=count, p=weights)
    out = []
    for k, zi in enumerate(zone_idx):
        zone = zones[int(zi)]
        pickup = sample_pickup(rng, zone, width, height)
        dropoff = sample_dropoff(rng, pickup, d_max, width, height)
        dist = abs(pickup[0] - dropoff[0]) + abs(pickup[1] - dropoff[1])
        out.append(Order(id=next_id + k, created_step=step, zone=zone.id, pickup=pickup,
                         dropoff=dropoff, fee=base_fee + per_cell_rate * dist))
    return out
