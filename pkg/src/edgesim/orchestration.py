"""Request routing, edge caching and utilisation-target autoscaling."""

from __future__ import annotations

import enum
import math
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from typing import Any, Optional

from .engine import Engine, ms
from .network import Topology


class RoutingKind(enum.Enum):
    NEAREST = "NEAREST"
    LEAST_LOADED = "LEAST_LOADED"
    PREDICTIVE = "PREDICTIVE"


@dataclass(frozen=True)
class RoutingPolicy:
    kind: RoutingKind = RoutingKind.NEAREST
    ewma_half_life: int = ms(50)
    forecast_window: int = 5
    period: int = ms(1000)


@dataclass
class LoadSnapshot:
    depth: dict = field(default_factory=dict)     # node -> EWMA queue depth
    forecast: dict = field(default_factory=dict)  # node -> forecast load


def route(region: str, policy: RoutingPolicy, topology: Topology,
          load: Optional[LoadSnapshot] = None, healthy: Optional[dict] = None) -> Optional[str]:
    """Pick one healthy edge node reachable from ``region``; None if there is none."""
    candidates = [e for e in topology.reachable_edges(region)
                  if healthy is None or healthy.get(e, True)]
    if not candidates:
        return None

    def proximity(e):
        return (topology.link(region, e).mean_latency, topology.distance(region, e), e)

    if policy.kind is RoutingKind.NEAREST or load is None:
        return min(candidates, key=proximity)
    table = load.depth if policy.kind is RoutingKind.LEAST_LOADED else load.forecast
    return min(candidates, key=lambda e: (table.get(e, 0.0), proximity(e)))


class EwmaDepth:
    """Exponentially weighted queue depth, decayed by elapsed virtual time."""

    __slots__ = ("half_life", "value", "_t")

    def __init__(self, half_life: int):
        self.half_life = half_life
        self.value = 0.0
        self._t = 0

    def update(self, depth: float, now: int) -> float:
        dt = now - self._t
        self._t = now
        if self.half_life <= 0:
            self.value = float(depth)
        else:
            w = 0.5 ** (dt / self.half_life)
            self.value = w * self.value + (1.0 - w) * depth
        return self.value


class MovingAverageForecaster:
    """Arithmetic mean of the last ``window`` observations."""

    def __init__(self, window: int = 5):
        if window < 1:
            raise ValueError("forecast window must be >= 1")
        self.window = window
        self._obs: deque = deque(maxlen=window)

    def observe(self, value: float) -> None:
        self._obs.append(value)

    def forecast(self) -> Optional[float]:
        if not self._obs:
            return None
        return sum(self._obs) / len(self._obs)


class EdgeCache:
    """LRU cache whose entries expire ``ttl`` microseconds after insertion."""

    def __init__(self, capacity: int, ttl: int):
        if capacity < 0 or ttl < 0:
            raise ValueError("cache capacity and ttl must be non-negative")
        self.capacity = capacity
        self.ttl = ttl
        self.entries: OrderedDict = OrderedDict()
        self.hits = 0
        self.misses = 0
        self.evictions = 0

    def get(self, key, now: int) -> Optional[Any]:
        item = self.entries.get(key)
        if item is None:
            self.misses += 1
            return None
        value, inserted = item
        if now - inserted > self.ttl:
            del self.entries[key]
            self.misses += 1
            return None
        self.entries.move_to_end(key)
        self.hits += 1
        return value

    def put(self, key, value, now: int) -> Optional[Any]:
        """Insert; returns the evicted key, if any."""
        if self.capacity == 0:
            return None
        entries = self.entries
        evicted = None
        if key in entries:
            entries.move_to_end(key)
        elif len(entries) >= self.capacity:
            evicted, _ = entries.popitem(last=False)
            self.evictions += 1
        entries[key] = (value, now)
        return evicted

    def invalidate(self, key) -> None:
        self.entries.pop(key, None)

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0


@dataclass(frozen=True)
class AutoscalerConfig:
    target_utilization: float = 0.6
    min_instances: int = 1
    max_instances: int = 16
    evaluation_period: int = ms(1000)
    forecast_window: int = 0  # 0 = react to the last period only
    actuation_delay: int = ms(1000)
    tolerance: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.target_utilization < 1.0:
            raise ValueError("target_utilization must be in (0, 1)")
        if not 1 <= self.min_instances <= self.max_instances:
            raise ValueError("need 1 <= min_instances <= max_instances")
        if self.evaluation_period <= 0 or self.actuation_delay < 0:
            raise ValueError("bad autoscaler timing")


def desired_instances(current: int, utilization: float, config: AutoscalerConfig,
                      load: Optional[float] = None) -> int:
    """ceil(current * utilization / target), clamped to [min, max].

    ``load`` (mean busy servers) replaces ``current * utilization`` when the
    instance count changed during the measured window. Inside the tolerance
    band around the target the count is left alone.
    """
    ratio = utilization / config.target_utilization
    if abs(ratio - 1.0) <= config.tolerance:
        want = current
    else:
        busy = current * utilization if load is None else load
        # guard against 2 * 0.9 / 0.6 = 3.0000000000000004
        want = math.ceil(busy / config.target_utilization - 1e-9)
    return max(config.min_instances, min(config.max_instances, want))


class StageAutoscaler:
    """Periodic utilisation-target controller for one stage of one node."""

    def __init__(self, engine: Engine, stage, config: AutoscalerConfig):
        self.engine = engine
        self.stage = stage
        self.config = config
        self.forecaster = (MovingAverageForecaster(config.forecast_window)
                           if config.forecast_window > 0 else None)
        self.series: list[tuple[int, int]] = [(engine.now, stage.instances)]
        self.decisions: list[tuple[int, float, int]] = []
        self._pending: Optional[int] = None
        self._busy0 = stage.busy_area()
        self._inst0 = stage.instance_area()

    def start(self) -> None:
        self.engine.schedule(self.config.evaluation_period, self.evaluate,
                             target=self.stage.node, action=f"autoscale {self.stage.kind.name}")

    def evaluate(self) -> None:
        busy, inst = self.stage.busy_area(), self.stage.instance_area()
        window = self.config.evaluation_period
        util = (busy - self._busy0) / (inst - self._inst0) if inst > self._inst0 else 0.0
        load = (busy - self._busy0) / window  # mean busy servers over the window
        self._busy0, self._inst0 = busy, inst
        observed = util
        if self.forecaster is not None:
            self.forecaster.observe(util)
            observed = self.forecaster.forecast()
            load = None
        want = desired_instances(self.stage.instances, observed, self.config, load)
        self.decisions.append((self.engine.now, util, want))
        if self._pending is None and want != self.stage.instances:
            self._pending = want
            self.engine.schedule(self.config.actuation_delay, self._actuate, want,
                                 target=self.stage.node, action="scale")
        self.start()

    def _actuate(self, n: int) -> None:
        self._pending = None
        if n != self.stage.instances:
            self.stage.set_instances(n)
            self.series.append((self.engine.now, n))
