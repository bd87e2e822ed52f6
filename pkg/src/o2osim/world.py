"""World model: grid, zones, orders, riders, clock and the initial state."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np

from . import rng as rngmod
from .agents import Intention, IntentionState, PlatformPolicy
from .config import RunConfig


@dataclass(frozen=True)
class Zone:
    id: int
    center: tuple[int, int]
    radius: int
    weight: float

    def contains(self, cell: tuple[int, int]) -> bool:
        return abs(cell[0] - self.center[0]) + abs(cell[1] - self.center[1]) <= self.radius


@dataclass(frozen=True)
class CityGrid:
    width: int
    height: int
    zones: tuple[Zone, ...]

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid must be at least 1x1")
        for z in self.zones:
            if not self.inside(z.center):
                raise ValueError(f"zone {z.id} centre outside grid")

    def inside(self, cell: tuple[int, int]) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height


class OrderStatus(IntEnum):
    OPEN = 0
    ASSIGNED = 1
    DELIVERED = 2
    EXPIRED = 3


@dataclass
class Order:
    id: int
    created_step: int
    zone: int
    pickup: tuple[int, int]
    dropoff: tuple[int, int]
    fee: float
    status: OrderStatus = OrderStatus.OPEN
    rider: Optional[int] = None
    closed_step: Optional[int] = None

    def assign(self, rider: int) -> None:
        if self.status is not OrderStatus.OPEN:
            raise RuntimeError(f"order {self.id} is {self.status.name}, cannot assign")
        self.status = OrderStatus.ASSIGNED
        self.rider = rider

    def deliver(self, step: int) -> None:
        if self.status is not OrderStatus.ASSIGNED:
            raise RuntimeError(f"order {self.id} is {self.status.name}, cannot deliver")
        self.status = OrderStatus.DELIVERED
        self.closed_step = step

    def expire(self, step: int) -> None:
        if self.status is not OrderStatus.OPEN:
            raise RuntimeError(f"order {self.id} is {self.status.name}, cannot expire")
        self.status = OrderStatus.EXPIRED
        self.closed_step = step


@dataclass(frozen=True)
class SimClock:
    step: int = 0
    steps_per_day: int = 120
    horizon: int = 3600

    def __post_init__(self):
        if self.steps_per_day < 1 or self.horizon % self.steps_per_day != 0:
            raise ValueError("horizon must be divisible by steps_per_day")

    @property
    def day(self) -> int:
        return self.step // self.steps_per_day

    @property
    def day_step(self) -> int:
        return self.step % self.steps_per_day

    def advanced(self) -> "SimClock":
        return SimClock(self.step + 1, self.steps_per_day, self.horizon)


@dataclass(slots=True)
class RiderState:
    id: int
    position: tuple[int, int]
    zone_choice: int
    intention: IntentionState = field(default_factory=IntentionState)
    working: bool = False
    hours_today: int = 0
    shift_start: int = 0
    shift_limit: int = 0
    cumulative_reward: float = 0.0
    cumulative_cost: float = 0.0
    work_steps: int = 0
    order: Optional[int] = None
    picked: bool = False
    target: Optional[tuple[int, int]] = None
    tolerance: float = float("inf")
    exposure: float = 0.0
    behavior_log: list = field(default_factory=list)

    @property
    def idle(self) -> bool:
        return self.order is None

    @property
    def income_rate(self) -> float:
        return self.cumulative_reward / self.work_steps if self.work_steps else 0.0


@dataclass
class WorldState:
    config: RunConfig
    seed: int
    grid: CityGrid
    clock: SimClock
    riders: list[RiderState]
    platform: PlatformPolicy
    orders: dict[int, Order] = field(default_factory=dict)
    open_orders: list[int] = field(default_factory=list)
    next_order_id: int = 0
    # orders created per (step, zone); feeds the trailing demand signal
    zone_demand: np.ndarray = None
    order_rng: np.random.Generator = None
    rider_rngs: list = field(default_factory=list)
    swf_history: list[float] = field(default_factory=list)
    epoch_reward_start: np.ndarray = None
    cache: object = field(default=None, repr=False, compare=False)

    @property
    def zones(self) -> tuple[Zone, ...]:
        return self.grid.zones

    def snapshot(self) -> dict:
        """JSON-safe view of the full state, RNG positions included."""
        return {
            "seed": self.seed,
            "config_hash": self.config.content_hash(),
            "clock": [self.clock.step, self.clock.steps_per_day, self.clock.horizon],
            "zones": [[z.id, list(z.center), z.radius, z.weight] for z in self.zones],
            "riders": [
                [r.id, list(r.position), r.zone_choice, int(r.intention.label), r.intention.streak,
                 r.intention.clear, r.working, r.hours_today, r.shift_start, r.shift_limit,
                 repr(r.cumulative_reward), repr(r.cumulative_cost), r.work_steps, r.order, r.picked,
                 list(r.target) if r.target else None, repr(r.tolerance), repr(r.exposure)]
                for r in self.riders
            ],
            "orders": [
                [o.id, o.created_step, o.zone, list(o.pickup), list(o.dropoff), repr(o.fee),
                 int(o.status), o.rider, o.closed_step]
                for o in self.orders.values()
            ],
            "platform": [repr(self.platform.base_fee), repr(self.platform.per_cell_rate),
                         self.platform.governance, self.platform.direction],
            "rng": [self.order_rng.bit_generator.state["state"]["state"]]
                   + [g.bit_generator.state["state"]["state"] for g in self.rider_rngs],
        }

    def serialize(self) -> bytes:
        return json.dumps(self.snapshot(), sort_keys=True, separators=(",", ":")).encode()


def build_grid(config: RunConfig) -> CityGrid:
    w = config.world
    total = sum(z.weight for z in w.zones)
    zones = tuple(Zone(i, (z.x, z.y), z.radius, z.weight / total) for i, z in enumerate(w.zones))
    return CityGrid(w.width, w.height, zones)


def nearest_zone(zones, cell: tuple[int, int]) -> int:
    best, best_d = 0, None
    for z in zones:
        d = abs(cell[0] - z.center[0]) + abs(cell[1] - z.center[1])
        if best_d is None or d < best_d:
            best, best_d = z.id, d
    return best


def init_world(config: RunConfig, seed: int) -> WorldState:
    """Place riders uniformly at random and zero every counter."""
    w = config.world
    if w.n_riders < 1:
        raise ValueError("world needs at least one rider")
    grid = build_grid(config)
    place = rngmod.substream(seed, rngmod.PLACEMENT_STREAM)
    xs = place.integers(0, w.width, size=w.n_riders)
    ys = place.integers(0, w.height, size=w.n_riders)
    latest_start = w.steps_per_day - config.agents.shift_steps
    starts = place.integers(0, latest_start + 1, size=w.n_riders)
    a = config.agents
    tolerances = place.uniform(a.tolerance_low, a.tolerance_high, size=w.n_riders)
    riders = []
    for i in range(w.n_riders):
        pos = (int(xs[i]), int(ys[i]))
        riders.append(RiderState(
            id=i, position=pos, zone_choice=nearest_zone(grid.zones, pos),
            intention=IntentionState(Intention.RULE_FOLLOWING, 0, 0),
            shift_start=int(starts[i]), shift_limit=config.agents.shift_steps,
            tolerance=float(tolerances[i]),
        ))
    return WorldState(
        config=config,
        seed=seed,
        grid=grid,
        clock=SimClock(0, w.steps_per_day, w.horizon),
        riders=riders,
        platform=PlatformPolicy.from_config(config.platform, config.orders.volume_multiplier),
        zone_demand=np.zeros((max(w.horizon, 1), len(grid.zones)), dtype=np.int32),
        order_rng=rngmod.substream(seed, rngmod.ORDER_STREAM),
        rider_rngs=rngmod.rider_streams(seed, w.n_riders),
        epoch_reward_start=np.zeros(w.n_riders),
    )
