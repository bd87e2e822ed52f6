"""Rider intentions and decision policies, platform dispatch and governance.

Riders decide from a :class:`Snapshot` taken once per step, before anyone
acts, and from their own RNG stream. That makes each decision independent of
the order in which riders are iterated.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Optional, Sequence

import numpy as np


class Intention(IntEnum):
    RULE_FOLLOWING = 0
    ANXIOUS = 1
    RISK_AVOIDANT = 2


# (from, to) pairs update_intention may produce, self-loops included
INTENTION_EDGES = frozenset({
    (Intention.RULE_FOLLOWING, Intention.RULE_FOLLOWING),
    (Intention.RULE_FOLLOWING, Intention.ANXIOUS),
    (Intention.ANXIOUS, Intention.ANXIOUS),
    (Intention.ANXIOUS, Intention.RISK_AVOIDANT),
    (Intention.ANXIOUS, Intention.RULE_FOLLOWING),
    (Intention.RISK_AVOIDANT, Intention.RISK_AVOIDANT),
    (Intention.RISK_AVOIDANT, Intention.ANXIOUS),
})


@dataclass(frozen=True, slots=True)
class IntentionState:
    label: Intention = Intention.RULE_FOLLOWING
    streak: int = 0  # updates spent in the current label
    clear: int = 0  # consecutive updates with the triggering conditions absent


class ActionKind(IntEnum):
    REST = 0
    RANDOM_WALK = 1
    ACCEPT_ORDER = 2
    SWITCH_ZONE = 3
    EXTEND_SHIFT = 4
    # trace-only codes for steps where no decision is taken
    DELIVER = 5
    RELOCATE = 6
    OFF_SHIFT = 7


DECISIONS = (ActionKind.REST, ActionKind.RANDOM_WALK, ActionKind.ACCEPT_ORDER,
             ActionKind.SWITCH_ZONE, ActionKind.EXTEND_SHIFT)


@dataclass(frozen=True, slots=True)
class Action:
    kind: ActionKind
    target: Optional[int] = None  # order id or zone id

    @classmethod
    def accept(cls, order_id: int) -> "Action":
        return cls(ActionKind.ACCEPT_ORDER, order_id)

    @classmethod
    def switch(cls, zone_id: int) -> "Action":
        return cls(ActionKind.SWITCH_ZONE, zone_id)


REST = Action(ActionKind.REST)
RANDOM_WALK = Action(ActionKind.RANDOM_WALK)
EXTEND_SHIFT = Action(ActionKind.EXTEND_SHIFT)


@dataclass(frozen=True)
class IntentionParams:
    alpha: float = 0.8
    sigma0: float = 0.5
    K: int = 60
    H: int = 30


@dataclass(frozen=True)
class RiderPolicy:
    intelligence: str = "medium"
    params: IntentionParams = field(default_factory=IntentionParams)
    switch_margin: float = 0.5

    @classmethod
    def from_config(cls, agents_cfg) -> "RiderPolicy":
        return cls(agents_cfg.intelligence,
                   IntentionParams(agents_cfg.alpha, agents_cfg.sigma0, agents_cfg.K, agents_cfg.H),
                   agents_cfg.switch_margin)


@dataclass(frozen=True)
class InteractionMode:
    mode: str = "none"
    radius: int = 10

    def __post_init__(self):
        if self.mode not in ("none", "local", "global"):
            raise ValueError(f"unknown interaction mode {self.mode!r}")
        if self.mode == "local" and self.radius < 1:
            raise ValueError("local interaction radius must be >= 1")


@dataclass(frozen=True)
class PlatformPolicy:
    base_fee: float = 2.0
    per_cell_rate: float = 0.1
    volume_multiplier: float = 1.0
    governance: str = "off"
    step: float = 0.01
    epoch_steps: int = 120
    direction: int = 1
    last_delta: float = 0.0

    def __post_init__(self):
        if self.base_fee < 0 or self.per_cell_rate < 0:
            raise ValueError("fees must be >= 0")

    @classmethod
    def from_config(cls, platform_cfg, volume_multiplier: float = 1.0) -> "PlatformPolicy":
        return cls(platform_cfg.base_fee, platform_cfg.per_cell_rate, volume_multiplier,
                   platform_cfg.governance, platform_cfg.governance_step, platform_cfg.epoch_steps)


@dataclass(frozen=True)
class Snapshot:
    """What every rider can see at the start of the act phase.

    ``zone_open`` maps a zone id to its still-open orders as
    ``(order_id, pickup)`` pairs sorted by id.
    """

    positions: np.ndarray  # (N, 2) int
    income_rates: np.ndarray  # (N,)
    zone_choice: np.ndarray  # (N,) int
    zone_centers: np.ndarray  # (Z, 2) int
    zone_supply: np.ndarray  # (Z,) recent orders per rider in zone
    zone_value: np.ndarray  # (Z,) open-order fees per rider in zone
    zone_open: dict
    grid_size: tuple[int, int]
    intentions: Optional[np.ndarray] = None  # (N,) labels before this step's update


@dataclass(frozen=True, slots=True)
class Observation:
    own_rate: float
    orders_per_rider: float
    peer_median: Optional[float]
    position: tuple[int, int] = (0, 0)
    zone: int = 0
    can_extend: bool = False
    shift_ending: bool = False
    visible_zones: Optional[frozenset] = None  # None: every zone
    peer_anxious: Optional[float] = None  # share of peers that are risk-avoidant
    exposure: float = 0.0  # running sum of peer_anxious over past observations
    tolerance: float = float("inf")  # exposure at which this rider stays unsettled


def _peer_mask(snapshot: Snapshot, mode: InteractionMode) -> Optional[np.ndarray]:
    n = snapshot.income_rates.size
    if mode.mode == "none" or n < 2:
        return None
    if mode.mode == "global":
        return ~np.eye(n, dtype=bool)
    pos = snapshot.positions
    dist = np.abs(pos[:, None, 0] - pos[None, :, 0]) + np.abs(pos[:, None, 1] - pos[None, :, 1])
    mask = dist <= mode.radius
    np.fill_diagonal(mask, False)
    return mask


def peer_stats(snapshot: Snapshot, mode: InteractionMode, *,
               mask: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    """Per rider: median peer income rate and share of peers that are risk-avoidant.

    Both are NaN for riders without peers (always, when ``mode`` is none).
    """
    n = snapshot.income_rates.size
    med = np.full(n, np.nan)
    share = np.full(n, np.nan)
    if mask is None:
        mask = _peer_mask(snapshot, mode)
    if mask is None:
        return med, share
    has = mask.any(axis=1)
    if has.any():
        # NaN sorts last, so each row's peers occupy its first k slots
        vals = np.sort(np.where(mask[has], snapshot.income_rates[None, :], np.nan), axis=1)
        k = mask[has].sum(axis=1)
        rows = np.arange(k.size)
        med[has] = 0.5 * (vals[rows, (k - 1) // 2] + vals[rows, k // 2])
        if snapshot.intentions is not None:
            unsettled = (snapshot.intentions == Intention.RISK_AVOIDANT).astype(float)
            share[has] = (mask[has] @ unsettled) / mask[has].sum(axis=1)
    return med, share


def peer_medians(snapshot: Snapshot, mode: InteractionMode) -> np.ndarray:
    """Median income rate of each rider's peers; NaN where there are none."""
    return peer_stats(snapshot, mode)[0]


def visible_zones(snapshot: Snapshot, mode: InteractionMode, *,
                  mask: Optional[np.ndarray] = None) -> list[Optional[frozenset]]:
    """Zones each rider has word of: its own only without interaction, plus
    the zones of peers in range under Local, and all of them under Global."""
    n = snapshot.income_rates.size
    if mode.mode == "global":
        return [None] * n
    own = snapshot.zone_choice
    if mode.mode == "none":
        return [frozenset((int(own[i]),)) for i in range(n)]
    near = _peer_mask(snapshot, mode) if mask is None else mask
    if near is None:
        return [frozenset((int(own[i]),)) for i in range(n)]
    n_zones = len(snapshot.zone_centers)
    onehot = np.zeros((n, n_zones), dtype=np.int64)
    onehot[np.arange(n), own] = 1
    seen = (near.astype(np.int64) @ onehot + onehot) > 0
    # one bitmask per rider; identical sets share one frozenset
    codes = seen.astype(object) @ [1 << z for z in range(n_zones)]
    cache: dict[int, frozenset] = {}
    out = []
    for c in codes.tolist():
        fs = cache.get(c)
        if fs is None:
            fs = cache[c] = frozenset(z for z in range(n_zones) if c >> z & 1)
        out.append(fs)
    return out


def observe(snapshot: Snapshot, rider: int, mode: InteractionMode, *,
            can_extend: bool = False, shift_ending: bool = False,
            peer: Optional[float] = None, peer_anxious: Optional[float] = None,
            visible: Optional[frozenset] = None, exposure: float = 0.0,
            tolerance: float = float("inf")) -> Observation:
    """Observation for one rider.

    The engine passes ``peer``, ``peer_anxious`` and ``visible`` precomputed
    for the whole population; when omitted they are derived here.
    """
    if not 0 <= rider < snapshot.income_rates.size:
        raise IndexError(f"no rider {rider}")
    if mode.mode != "none" and (peer is None or peer_anxious is None):
        med, share = peer_stats(snapshot, mode)
        peer = med[rider] if peer is None else peer
        peer_anxious = share[rider] if peer_anxious is None else peer_anxious
    if mode.mode == "none" or (peer is not None and np.isnan(peer)):
        peer = None
    if mode.mode == "none" or (peer_anxious is not None and np.isnan(peer_anxious)):
        peer_anxious = None
    zone = int(snapshot.zone_choice[rider])
    if visible is None and mode.mode != "global":
        visible = visible_zones(snapshot, mode)[rider]
    return Observation(
        own_rate=float(snapshot.income_rates[rider]),
        orders_per_rider=float(snapshot.zone_supply[zone]),
        peer_median=None if peer is None else float(peer),
        position=(int(snapshot.positions[rider, 0]), int(snapshot.positions[rider, 1])),
        zone=zone,
        can_extend=can_extend,
        shift_ending=shift_ending,
        visible_zones=visible,
        peer_anxious=None if peer_anxious is None else float(peer_anxious),
        exposure=exposure,
        tolerance=tolerance,
    )


def update_intention(state: IntentionState, obs: Observation, params: IntentionParams) -> IntentionState:
    scarce = obs.orders_per_rider < params.sigma0
    behind = obs.peer_median is not None and obs.own_rate < params.alpha * obs.peer_median
    contagion = obs.peer_anxious is not None and obs.exposure >= obs.tolerance
    triggered = scarce or behind or contagion
    label = state.label
    if label is Intention.RULE_FOLLOWING:
        if triggered:
            return IntentionState(Intention.ANXIOUS, 0, 0)
        return IntentionState(label, state.streak + 1, 0)
    if label is Intention.ANXIOUS:
        if state.streak >= params.K:
            return IntentionState(Intention.RISK_AVOIDANT, 0, 0)
        caught_up = (not scarce and not contagion
                     and (obs.peer_median is None or obs.own_rate >= obs.peer_median))
        clear = state.clear + 1 if caught_up else 0
        if clear >= params.H:
            return IntentionState(Intention.RULE_FOLLOWING, 0, 0)
        return IntentionState(label, state.streak + 1, clear)
    clear = 0 if triggered else state.clear + 1
    if clear >= params.H:
        return IntentionState(Intention.ANXIOUS, 0, 0)
    return IntentionState(label, state.streak + 1, clear)


def _manhattan(a, b) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def nearest_order(position: tuple[int, int], feasible: Sequence[tuple[int, tuple[int, int]]]) -> Optional[int]:
    best, best_key = None, None
    for oid, pickup in feasible:
        key = (_manhattan(position, pickup), oid)
        if best_key is None or key < best_key:
            best, best_key = oid, key
    return best


def best_zone(values: np.ndarray, current: int, margin: float = 0.0,
              visible: Optional[frozenset] = None) -> Optional[int]:
    """Zone to move to, or None to stay. Ties go to the lowest zone id."""
    if visible is not None:
        masked = np.full(len(values), -np.inf)
        idx = [z for z in visible if 0 <= z < len(values)]
        masked[idx] = np.asarray(values)[idx]
        values = masked
    z = int(np.argmax(values))
    if z != current and values[z] > values[current] * (1.0 + margin) and values[z] > 0:
        return z
    return None


def decide(policy: RiderPolicy, intention: IntentionState, obs: Observation,
           feasible: Sequence[tuple[int, tuple[int, int]]], rng: np.random.Generator,
           snapshot: Optional[Snapshot] = None) -> Action:
    """Pick one action for an idle, on-shift rider.

    ``feasible`` lists the open orders in the rider's zone. The High tier and
    the risk-avoidant overlay need ``snapshot`` for zone-level statistics.
    """
    label = intention.label
    if obs.shift_ending:
        # clocked out: the only choice left is whether to keep working
        if label is Intention.RULE_FOLLOWING or not obs.can_extend:
            return REST
        if policy.intelligence == "low":
            return EXTEND_SHIFT if rng.random() < 0.5 else REST
        return EXTEND_SHIFT

    if label is Intention.RISK_AVOIDANT and snapshot is not None:
        z = best_zone(snapshot.zone_supply, obs.zone, policy.switch_margin, obs.visible_zones)
        if z is not None:
            return Action.switch(z)

    if policy.intelligence == "low":
        options = [Action.accept(oid) for oid, _ in feasible]
        options += [RANDOM_WALK, REST]
        return options[int(rng.integers(len(options)))]

    if policy.intelligence == "high" and snapshot is not None:
        z = best_zone(snapshot.zone_value, obs.zone)
        if z is not None:
            return Action.switch(z)

    oid = nearest_order(obs.position, feasible)
    if oid is not None:
        return Action.accept(oid)
    return RANDOM_WALK


def dispatch(open_orders: Sequence, idle_riders: Sequence[tuple[int, tuple[int, int], int]]) -> list[tuple[int, int]]:
    """Greedy nearest-rider matching, oldest orders first.

    ``open_orders`` need ``id``, ``created_step``, ``zone`` and ``pickup``;
    ``idle_riders`` are ``(rider_id, position, zone_choice)``. Only riders
    operating in the order's zone are eligible and each rider takes at most
    one order. Returns ``(order_id, rider_id)`` pairs.
    """
    by_zone: dict[int, list[tuple[int, tuple[int, int]]]] = {}
    for rid, pos, zone in idle_riders:
        by_zone.setdefault(zone, []).append((rid, pos))
    taken: set[int] = set()
    out = []
    for order in sorted(open_orders, key=lambda o: (o.created_step, o.id)):
        cands = by_zone.get(order.zone)
        if not cands:
            continue
        best, best_key = None, None
        for rid, pos in cands:
            if rid in taken:
                continue
            key = (_manhattan(pos, order.pickup), rid)
            if best_key is None or key < best_key:
                best, best_key = rid, key
        if best is not None:
            taken.add(best)
            out.append((order.id, best))
    return out


def govern(policy: PlatformPolicy, swf_history: Sequence[float]) -> PlatformPolicy:
    """One coordinate hill-climb move on ``per_cell_rate`` at an epoch boundary.

    If welfare fell after the last perturbation, undo it and flip direction;
    the new direction is tried at the next epoch. Otherwise step again in the
    current direction.
    """
    if policy.governance == "off":
        return policy
    fell = len(swf_history) >= 2 and swf_history[-1] < swf_history[-2]
    if fell and policy.last_delta != 0:
        rate = max(0.0, policy.per_cell_rate - policy.last_delta)
        return replace(policy, per_cell_rate=rate, direction=-policy.direction, last_delta=0.0)
    rate = max(0.0, policy.per_cell_rate + policy.direction * policy.step)
    return replace(policy, per_cell_rate=rate, last_delta=rate - policy.per_cell_rate)
