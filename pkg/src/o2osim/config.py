"""Run configuration: dataclass sections, strict TOML loading and writing.

Every section has defaults, so a file only needs the keys it changes. Unknown
keys are rejected so that a misspelt factor name fails loudly instead of being
silently ignored by an experiment.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import tomli
import tomli_w

INTELLIGENCE_LEVELS = ("low", "medium", "high")
INTERACTION_MODES = ("none", "local", "global")
GOVERNANCE_MODES = ("off", "hill_climb")
FACTOR_ROLES = ("controllable", "uncontrollable")

DEFAULT_A = (6.0, 10.0, 4.0, 8.0, 3.0)
DEFAULT_B = (0.08, 0.33, 0.5, 0.66, 0.9)
DEFAULT_C = (0.04, 0.05, 0.08, 0.05, 0.06)

# short factor names -> dotted config paths
FACTOR_ALIASES = {
    "intelligence": "agents.intelligence",
    "interaction": "agents.interaction_mode",
    "order_volume": "orders.volume_multiplier",
}


class ConfigError(ValueError):
    pass


@dataclass
class ZoneConfig:
    x: int
    y: int
    radius: int = 8
    weight: float = 1.0


def default_zones(width: int = 100, height: int = 100, n: int = 10) -> list[ZoneConfig]:
    """``n`` zone centres on a jittered two-row lattice.

    The jitter uses a fixed generator so the default layout is part of the
    configuration, not of the run seed.
    """
    rng = np.random.default_rng(20240601)
    cols = max(1, (n + 1) // 2)
    rows = 1 if n == 1 else 2
    radius = max(1, min(8, width // (2 * cols) - 1, height // (2 * rows) - 1))
    zones = []
    for k in range(n):
        r, c = divmod(k, cols)
        cx = (c + 0.5) * width / cols
        cy = (r + 0.5) * height / rows
        jx, jy = rng.integers(-3, 4, size=2)
        x = int(min(width - 1, max(0, round(cx + jx))))
        y = int(min(height - 1, max(0, round(cy + jy))))
        zones.append(ZoneConfig(x=x, y=y, radius=radius, weight=1.0))
    return zones


@dataclass
class WorldConfig:
    width: int = 100
    height: int = 100
    n_riders: int = 100
    steps_per_day: int = 120
    horizon: int = 3600
    zones: list[ZoneConfig] = field(default_factory=default_zones)


@dataclass
class OrdersConfig:
    a: list[float] = field(default_factory=lambda: list(DEFAULT_A))
    b: list[float] = field(default_factory=lambda: list(DEFAULT_B))
    c: list[float] = field(default_factory=lambda: list(DEFAULT_C))
    volume_multiplier: float = 1.0
    expiry: int = 30
    max_dropoff_distance: int = 10


@dataclass
class AgentsConfig:
    intelligence: str = "medium"
    interaction_mode: str = "local"
    local_radius: int = 10
    alpha: float = 0.8
    sigma0: float = 0.5
    K: int = 60
    H: int = 30
    demand_window: int = 30
    switch_margin: float = 0.5
    tolerance_low: float = 60.0
    tolerance_high: float = 1500.0
    speed: int = 1
    shift_steps: int = 60
    extend_steps: int = 20
    time_cost: float = 0.01
    distance_cost: float = 0.02


@dataclass
class PlatformConfig:
    base_fee: float = 2.0
    per_cell_rate: float = 0.1
    governance: str = "off"
    governance_step: float = 0.01
    epoch_steps: int = 120


@dataclass
class MetricsConfig:
    eta: float = 0.2
    epsilon: float = 1e-6


@dataclass
class FactorSpec:
    name: str
    levels: list[Any]
    role: str = "controllable"

    @property
    def path(self) -> str:
        return FACTOR_ALIASES.get(self.name, self.name)


@dataclass
class ExperimentConfig:
    factors: list[FactorSpec] = field(default_factory=list)
    replicates: int = 10
    base_seed: int = 0


@dataclass
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    orders: OrdersConfig = field(default_factory=OrdersConfig)
    agents: AgentsConfig = field(default_factory=AgentsConfig)
    platform: PlatformConfig = field(default_factory=PlatformConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def replace(self, **dotted: Any) -> "RunConfig":
        """Copy with dotted-path overrides, e.g. ``replace(**{"world.n_riders": 5})``."""
        cfg = copy.deepcopy(self)
        for path, value in dotted.items():
            set_path(cfg, path, value)
        validate(cfg)
        return cfg


_SECTIONS = {
    "world": WorldConfig,
    "orders": OrdersConfig,
    "agents": AgentsConfig,
    "platform": PlatformConfig,
    "metrics": MetricsConfig,
    "experiment": ExperimentConfig,
}


def set_path(cfg: RunConfig, path: str, value: Any) -> None:
    path = FACTOR_ALIASES.get(path, path)
    parts = path.split(".")
    if len(parts) != 2 or parts[0] not in _SECTIONS:
        raise ConfigError(f"unknown config path {path!r}")
    section = getattr(cfg, parts[0])
    names = {f.name for f in dataclasses.fields(section)}
    if parts[1] not in names:
        raise ConfigError(f"unknown config path {path!r}")
    setattr(section, parts[1], value)


def get_path(cfg: RunConfig, path: str) -> Any:
    path = FACTOR_ALIASES.get(path, path)
    section, key = path.split(".")
    return getattr(getattr(cfg, section), key)


def _build_section(cls, raw: dict, prefix: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{prefix} must be a table")
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown key {prefix}.{key}")
    kwargs = dict(raw)
    if cls is WorldConfig and "zones" in kwargs:
        zones = []
        for i, z in enumerate(kwargs["zones"]):
            zones.append(_build_section(ZoneConfig, z, f"world.zones[{i}]"))
        kwargs["zones"] = zones
    if cls is ExperimentConfig and "factors" in kwargs:
        factors = []
        for i, f in enumerate(kwargs["factors"]):
            factors.append(_build_section(FactorSpec, f, f"experiment.factors[{i}]"))
        kwargs["factors"] = factors
    try:
        return cls(**kwargs)
    except TypeError as exc:
        # dataclass complains about the first missing positional field
        missing = [n for n, f in known.items()
                   if f.default is dataclasses.MISSING
                   and f.default_factory is dataclasses.MISSING
                   and n not in kwargs]
        if missing:
            raise ConfigError(f"missing required key {prefix}.{missing[0]}") from exc
        raise ConfigError(f"{prefix}: {exc}") from exc


def from_dict(raw: dict) -> RunConfig:
    for key in raw:
        if key not in _SECTIONS:
            raise ConfigError(f"unknown key {key}")
    # a bare n_riders at top level is not accepted; it lives in [world]
    sections = {name: _build_section(cls, raw.get(name, {}), name) for name, cls in _SECTIONS.items()}
    cfg = RunConfig(**sections)
    validate(cfg)
    return cfg


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _is_int(v) -> bool:
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool)


def validate(cfg: RunConfig) -> None:
    """Range-check every field; raise :class:`ConfigError` naming the key."""
    w = cfg.world
    for key in ("width", "height", "n_riders", "steps_per_day", "horizon"):
        _check(_is_int(getattr(w, key)), f"world.{key} must be an integer")
    _check(w.width >= 1, "world.width must be >= 1")
    _check(w.height >= 1, "world.height must be >= 1")
    _check(w.n_riders >= 1, "world.n_riders must be >= 1")
    _check(w.steps_per_day >= 1, "world.steps_per_day must be >= 1")
    _check(w.horizon >= 0, "world.horizon must be >= 0")
    _check(w.horizon % w.steps_per_day == 0,
           f"world.horizon must be divisible by world.steps_per_day ({w.steps_per_day})")
    _check(len(w.zones) >= 1, "world.zones must contain at least one zone")
    for i, z in enumerate(w.zones):
        p = f"world.zones[{i}]"
        _check(_is_int(z.x) and _is_int(z.y), f"{p} centre must be integer cells")
        _check(0 <= z.x < w.width and 0 <= z.y < w.height, f"{p} centre must lie inside the grid")
        _check(_is_int(z.radius) and z.radius >= 1, f"{p}.radius must be >= 1")
        _check(_is_num(z.weight) and z.weight >= 0, f"{p}.weight must be >= 0")
    _check(sum(z.weight for z in w.zones) > 0, "world.zones weights must not all be zero")

    o = cfg.orders
    for key in ("a", "b", "c"):
        vals = getattr(o, key)
        _check(isinstance(vals, (list, tuple)) and len(vals) == 5 and all(_is_num(v) for v in vals),
               f"orders.{key} must be a list of 5 numbers")
    _check(all(v >= 0 for v in o.a), "orders.a must be >= 0")
    _check(all(0 <= v < 1 for v in o.b), "orders.b must lie in [0, 1)")
    _check(all(v > 0 for v in o.c), "orders.c must be > 0")
    _check(_is_num(o.volume_multiplier) and o.volume_multiplier >= 0, "orders.volume_multiplier must be >= 0")
    _check(_is_int(o.expiry) and o.expiry >= 1, "orders.expiry must be >= 1")
    _check(_is_int(o.max_dropoff_distance) and o.max_dropoff_distance >= 1,
           "orders.max_dropoff_distance must be >= 1")

    a = cfg.agents
    _check(a.intelligence in INTELLIGENCE_LEVELS, f"agents.intelligence must be one of {INTELLIGENCE_LEVELS}")
    _check(a.interaction_mode in INTERACTION_MODES,
           f"agents.interaction_mode must be one of {INTERACTION_MODES}")
    _check(_is_int(a.local_radius) and a.local_radius >= 1, "agents.local_radius must be >= 1")
    _check(_is_num(a.alpha) and a.alpha > 0, "agents.alpha must be > 0")
    _check(_is_num(a.sigma0) and a.sigma0 >= 0, "agents.sigma0 must be >= 0")
    for key in ("K", "H", "demand_window", "speed", "shift_steps"):
        _check(_is_int(getattr(a, key)) and getattr(a, key) >= 1, f"agents.{key} must be >= 1")
    _check(_is_int(a.extend_steps) and a.extend_steps >= 0, "agents.extend_steps must be >= 0")
    _check(a.shift_steps <= w.steps_per_day, "agents.shift_steps must be <= world.steps_per_day")
    _check(_is_num(a.switch_margin) and a.switch_margin >= 0, "agents.switch_margin must be >= 0")
    _check(_is_num(a.tolerance_low) and a.tolerance_low >= 0, "agents.tolerance_low must be >= 0")
    _check(_is_num(a.tolerance_high) and a.tolerance_high >= a.tolerance_low,
           "agents.tolerance_high must be >= agents.tolerance_low")
    _check(_is_num(a.time_cost) and a.time_cost >= 0, "agents.time_cost must be >= 0")
    _check(_is_num(a.distance_cost) and a.distance_cost >= 0, "agents.distance_cost must be >= 0")

    p = cfg.platform
    _check(_is_num(p.base_fee) and p.base_fee >= 0, "platform.base_fee must be >= 0")
    _check(_is_num(p.per_cell_rate) and p.per_cell_rate >= 0, "platform.per_cell_rate must be >= 0")
    _check(p.governance in GOVERNANCE_MODES, f"platform.governance must be one of {GOVERNANCE_MODES}")
    _check(_is_num(p.governance_step) and p.governance_step > 0, "platform.governance_step must be > 0")
    _check(_is_int(p.epoch_steps) and p.epoch_steps >= 1, "platform.epoch_steps must be >= 1")

    m = cfg.metrics
    _check(_is_num(m.eta) and m.eta > 0, "metrics.eta must be > 0")
    _check(_is_num(m.epsilon) and m.epsilon > 0, "metrics.epsilon must be > 0")

    e = cfg.experiment
    _check(_is_int(e.replicates) and e.replicates >= 1, "experiment.replicates must be >= 1")
    _check(_is_int(e.base_seed) and e.base_seed >= 0, "experiment.base_seed must be >= 0")
    names = [f.name for f in e.factors]
    _check(len(names) == len(set(names)), "experiment.factors names must be unique")
    for f in e.factors:
        _check(isinstance(f.levels, list) and len(f.levels) >= 1,
               f"experiment factor {f.name!r} needs at least one level")
        _check(f.role in FACTOR_ROLES, f"experiment factor {f.name!r} role must be one of {FACTOR_ROLES}")
        probe = copy.deepcopy(cfg)
        probe.experiment = ExperimentConfig()
        for level in f.levels:
            try:
                set_path(probe, f.path, level)
            except ConfigError:
                raise ConfigError(f"experiment factor {f.name!r} does not name a config field") from None
            try:
                validate(probe)
            except ConfigError as exc:
                raise ConfigError(f"experiment factor {f.name!r} level {level!r}: {exc}") from None


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    with path.open("rb") as fh:
        try:
            raw = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(raw)


def dumps_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())


def write_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(dumps_config(cfg))
