"""Deterministic step and run loop.

Each step runs four phases in a fixed order:

1. generate: expire stale orders, draw new ones;
2. dispatch: the platform matches open orders to idle riders;
3. act: every rider observes the same snapshot, updates its intention,
   decides and moves;
4. settle: deliveries are paid, costs booked, governance runs at epoch ends.

``step`` mutates the world in place and also returns it.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .agents import (
    Action,
    ActionKind,
    Intention,
    InteractionMode,
    RiderPolicy,
    Snapshot,
    decide,
    dispatch,
    govern,
    observe,
    _peer_mask,
    peer_stats,
    update_intention,
    visible_zones,
)
from .config import RunConfig, validate
from .orders import IntensityProfile, generate_orders, step_intensities
from .world import OrderStatus, RiderState, WorldState, init_world


@dataclass
class StepRecord:
    step: int
    created: list[int]
    assigned: list[tuple[int, int]]
    delivered: list[tuple[int, int, float]]
    expired: list[int]
    actions: np.ndarray
    intentions: np.ndarray
    positions: np.ndarray
    income_delta: np.ndarray
    cost_delta: np.ndarray


@dataclass
class RunTrace:
    """Everything the analysis layers need from one run.

    Per-rider arrays are indexed ``[step, rider]``; ``positions`` is the
    position at the end of each step.
    """

    config: RunConfig
    seed: int
    actions: np.ndarray
    intentions: np.ndarray
    positions: np.ndarray
    income_delta: np.ndarray
    cost_delta: np.ndarray
    events: list[dict]
    summary: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]

    @property
    def n_riders(self) -> int:
        return self.actions.shape[1]

    def content_hash(self) -> str:
        from .io import trace_lines

        h = hashlib.sha256()
        for line in trace_lines(self):
            h.update(line.encode())
        return h.hexdigest()


class _Ctx:
    """Per-run constants cached outside the world state."""

    def __init__(self, world: WorldState):
        cfg = world.config
        self.policy = RiderPolicy.from_config(cfg.agents)
        self.mode = InteractionMode(cfg.agents.interaction_mode, cfg.agents.local_radius)
        self.profile = IntensityProfile.from_config(cfg.orders)
        self.zone_centers = np.array([z.center for z in world.zones], dtype=np.int64)
        self.zone_radius = [z.radius for z in world.zones]
        self._intensity_mult = None
        self._intensity = None


def _ctx(world: WorldState) -> _Ctx:
    if world.cache is None:
        world.cache = _Ctx(world)
    return world.cache


def _intensity_table(world: WorldState, ctx: _Ctx) -> np.ndarray:
    vm = world.platform.volume_multiplier
    if ctx._intensity_mult != vm:
        prof = IntensityProfile(ctx.profile.a, ctx.profile.b, ctx.profile.c, vm)
        ctx._intensity = step_intensities(prof, world.clock.steps_per_day)
        ctx._intensity_mult = vm
    return ctx._intensity


def _on_shift(r: RiderState, day_step: int) -> bool:
    return day_step >= r.shift_start and r.hours_today < r.shift_limit


def _move_toward(pos: tuple[int, int], target: tuple[int, int], budget: int) -> tuple[tuple[int, int], int]:
    """Move along x first, then y; returns the new cell and cells moved."""
    x, y = pos
    tx, ty = target
    dx = tx - x
    sx = min(abs(dx), budget)
    x += sx if dx > 0 else -sx
    budget -= sx
    dy = ty - y
    sy = min(abs(dy), budget)
    y += sy if dy > 0 else -sy
    return (x, y), sx + sy


def step(world: WorldState, order=None) -> tuple[WorldState, StepRecord]:
    """Advance one step. ``order`` permutes the rider iteration order of the
    act phase; results do not depend on it."""
    clock = world.clock
    if clock.step >= clock.horizon:
        raise RuntimeError(f"cannot step past horizon {clock.horizon}")
    cfg = world.config
    ctx = _ctx(world)
    t = clock.step
    day_step = clock.day_step
    riders = world.riders
    n = len(riders)
    acfg = cfg.agents
    width, height = world.grid.width, world.grid.height

    if day_step == 0 and t > 0:
        for r in riders:
            r.hours_today = 0
            r.shift_limit = acfg.shift_steps

    # --- generate ---
    expired = []
    still_open = []
    for oid in world.open_orders:
        o = world.orders[oid]
        if t - o.created_step >= cfg.orders.expiry:
            o.expire(t)
            expired.append(oid)
        else:
            still_open.append(oid)
    world.open_orders = still_open

    lam = float(_intensity_table(world, ctx)[day_step])
    new = generate_orders(
        t, clock.steps_per_day, ctx.profile, world.zones, world.order_rng,
        width=width, height=height, next_id=world.next_order_id,
        d_max=cfg.orders.max_dropoff_distance, base_fee=world.platform.base_fee,
        per_cell_rate=world.platform.per_cell_rate, mean=lam,
    )
    world.next_order_id += len(new)
    for o in new:
        world.orders[o.id] = o
        world.open_orders.append(o.id)
        world.zone_demand[t, o.zone] += 1
    created = [o.id for o in new]

    # --- dispatch ---
    on_shift = [_on_shift(r, day_step) for r in riders]
    idle = [(r.id, r.position, r.zone_choice) for r in riders if r.order is None and on_shift[r.id]]
    pairs = dispatch([world.orders[oid] for oid in world.open_orders], idle)
    assigned = []
    for oid, rid in pairs:
        world.orders[oid].assign(rid)
        r = riders[rid]
        r.order = oid
        r.picked = False
        r.target = None
        assigned.append((oid, rid))
    if pairs:
        world.open_orders = [oid for oid in world.open_orders if world.orders[oid].status is OrderStatus.OPEN]

    # --- snapshot ---
    n_zones = len(world.zones)
    zone_choice = np.fromiter((r.zone_choice for r in riders), dtype=np.int64, count=n)
    riders_in_zone = np.maximum(np.bincount(zone_choice, minlength=n_zones), 1)
    active = np.fromiter((on_shift[r.id] or r.order is not None for r in riders), dtype=bool, count=n)
    working_in_zone = np.maximum(np.bincount(zone_choice[active], minlength=n_zones), 1)
    lo = max(0, t - acfg.demand_window + 1)
    recent = world.zone_demand[lo:t + 1].sum(axis=0)
    zone_open: dict[int, list] = {}
    fee_sum = np.zeros(n_zones)
    for oid in world.open_orders:
        o = world.orders[oid]
        zone_open.setdefault(o.zone, []).append((oid, o.pickup))
        fee_sum[o.zone] += o.fee
    positions = np.array([r.position for r in riders], dtype=np.int64)
    rates = np.fromiter((r.income_rate for r in riders), dtype=float, count=n)
    snap = Snapshot(
        positions=positions,
        income_rates=rates,
        zone_choice=zone_choice,
        zone_centers=ctx.zone_centers,
        zone_supply=recent / working_in_zone,
        zone_value=fee_sum / riders_in_zone,
        zone_open=zone_open,
        grid_size=(width, height),
        intentions=np.fromiter((int(r.intention.label) for r in riders), dtype=np.int8, count=n),
    )
    mask = _peer_mask(snap, ctx.mode)
    peers, peer_anx = peer_stats(snap, ctx.mode, mask=mask)
    seen = visible_zones(snap, ctx.mode, mask=mask)

    # --- act: decide on the snapshot ---
    acting = riders if order is None else [riders[i] for i in order]
    actions = np.full(n, int(ActionKind.OFF_SHIFT), dtype=np.int8)
    decisions: dict[int, Action] = {}
    working = [False] * n
    for r in acting:
        rid = r.id
        busy = r.order is not None
        # just clocked out: shift used up, last step worked, nothing in hand
        clocked_out = (not busy and not on_shift[rid] and r.working
                       and day_step >= r.shift_start and r.hours_today >= r.shift_limit)
        if not (on_shift[rid] or busy or clocked_out):
            r.working = False
            continue
        can_extend = acfg.extend_steps > 0 and r.shift_limit + acfg.extend_steps <= clock.steps_per_day
        if not np.isnan(peer_anx[rid]):
            r.exposure += float(peer_anx[rid])
        obs = observe(snap, rid, ctx.mode, can_extend=can_extend, shift_ending=clocked_out,
                      peer=float(peers[rid]), peer_anxious=float(peer_anx[rid]), visible=seen[rid],
                      exposure=r.exposure, tolerance=r.tolerance)
        r.intention = update_intention(r.intention, obs, ctx.policy.params)
        if clocked_out:
            act = decide(ctx.policy, r.intention, obs, (), world.rider_rngs[rid], snap)
            if act.kind is ActionKind.EXTEND_SHIFT:
                working[rid] = True
                decisions[rid] = act
                actions[rid] = act.kind
                r.behavior_log.append((t, int(act.kind)))
            else:
                r.working = False
            continue
        working[rid] = True
        if busy:
            actions[rid] = ActionKind.DELIVER
        elif r.target is not None:
            actions[rid] = ActionKind.RELOCATE
        else:
            act = decide(ctx.policy, r.intention, obs, zone_open.get(r.zone_choice, ()),
                         world.rider_rngs[rid], snap)
            decisions[rid] = act
            actions[rid] = act.kind
            r.behavior_log.append((t, int(act.kind)))

    # accept conflicts: nearest claimant wins, then lowest id
    claims: dict[int, list[int]] = {}
    for rid, act in decisions.items():
        if act.kind is ActionKind.ACCEPT_ORDER:
            claims.setdefault(act.target, []).append(rid)
    for oid, claimants in sorted(claims.items()):
        o = world.orders[oid]
        win = min(claimants, key=lambda i: (abs(riders[i].position[0] - o.pickup[0])
                                            + abs(riders[i].position[1] - o.pickup[1]), i))
        o.assign(win)
        riders[win].order = oid
        riders[win].picked = False
        assigned.append((oid, win))
    if claims:
        world.open_orders = [oid for oid in world.open_orders if world.orders[oid].status is OrderStatus.OPEN]

    # --- act: move ---
    income = np.zeros(n)
    cost = np.zeros(n)
    delivered = []
    speed = acfg.speed
    for r in acting:
        rid = r.id
        if not working[rid]:
            continue
        act = decisions.get(rid)
        moved = 0
        if act is not None and act.kind is ActionKind.REST:
            working[rid] = False
        elif act is not None and act.kind is ActionKind.EXTEND_SHIFT:
            r.shift_limit = min(clock.steps_per_day, r.shift_limit + acfg.extend_steps)
        elif r.order is not None:
            o = world.orders[r.order]
            budget = speed
            if not r.picked:
                r.position, m = _move_toward(r.position, o.pickup, budget)
                moved += m
                budget -= m
                if r.position == o.pickup:
                    r.picked = True
            if r.picked:
                r.position, m = _move_toward(r.position, o.dropoff, budget)
                moved += m
                if r.position == o.dropoff:
                    o.deliver(t)
                    income[rid] = o.fee
                    delivered.append((o.id, rid, o.fee))
                    r.order = None
        elif act is not None and act.kind is ActionKind.SWITCH_ZONE:
            r.zone_choice = act.target
            r.target = tuple(int(v) for v in ctx.zone_centers[act.target])
            r.position, moved = _move_toward(r.position, r.target, speed)
            if r.position == r.target:
                r.target = None
        elif r.target is not None:
            r.position, moved = _move_toward(r.position, r.target, speed)
            if r.position == r.target:
                r.target = None
        elif act is not None and act.kind is ActionKind.RANDOM_WALK:
            r.position, moved = _random_walk(r, world, ctx, speed)
        if working[rid]:
            r.hours_today += 1
            r.work_steps += 1
            cost[rid] = acfg.time_cost + acfg.distance_cost * moved
        else:
            cost[rid] = acfg.distance_cost * moved
        r.working = working[rid]

    # --- settle ---
    for r in riders:
        if income[r.id]:
            r.cumulative_reward += income[r.id]
        if cost[r.id]:
            r.cumulative_cost += cost[r.id]

    if cfg.platform.governance != "off" and n >= 2 and (t + 1) % world.platform.epoch_steps == 0:
        rewards = np.fromiter((r.cumulative_reward for r in riders), dtype=float, count=n)
        world.swf_history.append(metrics.welfare(rewards - world.epoch_reward_start).swf)
        world.epoch_reward_start = rewards
        world.platform = govern(world.platform, world.swf_history)

    record = StepRecord(
        step=t,
        created=created,
        assigned=assigned,
        delivered=sorted(delivered),
        expired=expired,
        actions=actions,
        intentions=np.fromiter((int(r.intention.label) for r in riders), dtype=np.int8, count=n),
        positions=np.array([r.position for r in riders], dtype=np.int16),
        income_delta=income,
        cost_delta=cost,
    )
    world.clock = clock.advanced()
    return world, record


def _random_walk(r: RiderState, world: WorldState, ctx: _Ctx, speed: int) -> tuple[tuple[int, int], int]:
    """One random 4-neighbour move, pulled back toward the zone when outside it."""
    center = tuple(int(v) for v in ctx.zone_centers[r.zone_choice])
    x, y = r.position
    if abs(x - center[0]) + abs(y - center[1]) > ctx.zone_radius[r.zone_choice]:
        return _move_toward(r.position, center, speed)
    rng = world.rider_rngs[r.id]
    moves = [(1, 0), (-1, 0), (0, 1), (0, -1)]
    options = [(x + dx, y + dy) for dx, dy in moves
               if 0 <= x + dx < world.grid.width and 0 <= y + dy < world.grid.height]
    if not options:
        return r.position, 0
    return options[int(rng.integers(len(options)))], 1


def terminal_summary(world: WorldState, trace_income: np.ndarray | None = None) -> dict:
    riders = world.riders
    cfg = world.config
    params = metrics.UtilityParams(cfg.metrics.eta, cfg.metrics.epsilon)
    rewards = np.array([r.cumulative_reward for r in riders])
    costs = np.array([r.cumulative_cost for r in riders])
    u = metrics.utilities(rewards, costs, params)
    out = {
        "n_riders": len(riders),
        "steps": world.clock.step,
        "prod": float(rewards.sum()),
        "mean_utility": float(u.mean()),
        "mean_cost": float(costs.mean()),
        "frac_risk_avoidant": float(np.mean([r.intention.label is Intention.RISK_AVOIDANT for r in riders])),
        "orders_created": world.next_order_id,
        "orders_delivered": sum(o.status is OrderStatus.DELIVERED for o in world.orders.values()),
        "orders_expired": sum(o.status is OrderStatus.EXPIRED for o in world.orders.values()),
        "per_cell_rate": world.platform.per_cell_rate,
    }
    if len(riders) >= 2:
        w = metrics.welfare(rewards)
        out.update(eq=w.eq, swf=w.swf)
        out["involution_index"] = _safe_index(w.swf, u)
    else:
        out.update(eq=None, swf=None, involution_index=None)
    return out


def _safe_index(swf: float, u: np.ndarray):
    try:
        return metrics.involution_index(swf, u)
    except ValueError:
        return None


def daily_involution(trace: RunTrace) -> list:
    """Involution index from cumulative earnings and costs at each day end."""
    cfg = trace.config
    spd = cfg.world.steps_per_day
    params = metrics.UtilityParams(cfg.metrics.eta, cfg.metrics.epsilon)
    if trace.n_riders < 2:
        return []
    cum_r = np.cumsum(trace.income_delta, axis=0)
    cum_c = np.cumsum(trace.cost_delta, axis=0)
    out = []
    for end in range(spd - 1, trace.horizon, spd):
        w = metrics.welfare(cum_r[end])
        out.append(_safe_index(w.swf, metrics.utilities(cum_r[end], cum_c[end], params)))
    return out


def run(config: RunConfig, seed: int, rider_order=None) -> RunTrace:
    """Execute ``config.world.horizon`` steps from a fresh world."""
    validate(config)
    horizon = config.world.horizon
    if horizon == 0:
        raise ValueError("empty run")
    world = init_world(config, seed)
    n = len(world.riders)
    actions = np.empty((horizon, n), dtype=np.int8)
    intentions = np.empty((horizon, n), dtype=np.int8)
    positions = np.empty((horizon, n, 2), dtype=np.int16)
    income = np.empty((horizon, n))
    cost = np.empty((horizon, n))
    events = []
    for t in range(horizon):
        world, rec = step(world, rider_order)
        actions[t] = rec.actions
        intentions[t] = rec.intentions
        positions[t] = rec.positions
        income[t] = rec.income_delta
        cost[t] = rec.cost_delta
        events.append({"created": rec.created, "assigned": rec.assigned,
                       "delivered": rec.delivered, "expired": rec.expired})
    trace = RunTrace(config, seed, actions, intentions, positions, income, cost, events)
    trace.summary = terminal_summary(world)
    trace.summary["daily_involution"] = daily_involution(trace)
    trace.summary["final_world_hash"] = hashlib.sha256(world.serialize()).hexdigest()
    return trace


def is_finite_index(value) -> bool:
    return value is not None and math.isfinite(value)
