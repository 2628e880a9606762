"""Topology of user regions, edge nodes and the cloud, with link-class delays."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .engine import Engine, RngStream

LINK_KINDS = ("LAN", "WAN", "CELLULAR")


class ConfigError(ValueError):
    """Scenario definition is inconsistent; raised at load time."""


@dataclass(frozen=True)
class LinkClass:
    name: str
    kind: str
    latency_lo: int  # microseconds
    latency_hi: int
    bandwidth: float  # bytes per second
    loss_rate: float = 0.0

    def __post_init__(self):
        if self.kind not in LINK_KINDS:
            raise ConfigError(f"link class {self.name}: unknown kind {self.kind!r}")
        if self.latency_lo < 0 or self.latency_hi < self.latency_lo:
            raise ConfigError(f"link class {self.name}: bad latency range")
        if not self.bandwidth > 0:
            raise ConfigError(f"link class {self.name}: bandwidth must be > 0")
        if not 0.0 <= self.loss_rate < 1.0:
            raise ConfigError(f"link class {self.name}: loss_rate must be in [0, 1)")

    @property
    def mean_latency(self) -> float:
        return (self.latency_lo + self.latency_hi) / 2

    def sample_latency(self, rng: RngStream) -> int:
        if self.latency_lo == self.latency_hi:
            return self.latency_lo
        return int(round(rng.uniform(self.latency_lo, self.latency_hi)))

    def serialization(self, size: int) -> int:
        return math.ceil(size * 1_000_000 / self.bandwidth)


def transit_delay(link: LinkClass, size: int, rng: RngStream) -> int:
    """Propagation sample plus ``size / bandwidth`` serialization, in µs."""
    return link.sample_latency(rng) + link.serialization(size)


@dataclass(frozen=True)
class Site:
    id: str
    x: float = 0.0
    y: float = 0.0
    region: Optional[str] = None


@dataclass
class Topology:
    regions: dict[str, Site]
    edges: dict[str, Site]
    cloud: Site
    links: dict[frozenset, LinkClass] = field(default_factory=dict)

    def add_link(self, a: str, b: str, link: LinkClass) -> None:
        self.links[frozenset((a, b))] = link

    def link(self, a: str, b: str) -> LinkClass:
        try:
            return self.links[frozenset((a, b))]
        except KeyError:
            raise ConfigError(f"no link between {a} and {b}") from None

    def has_link(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self.links

    def site(self, node: str) -> Site:
        if node == self.cloud.id:
            return self.cloud
        return self.edges.get(node) or self.regions[node]

    def distance(self, a: str, b: str) -> float:
        sa, sb = self.site(a), self.site(b)
        return math.hypot(sa.x - sb.x, sa.y - sb.y)

    def reachable_edges(self, region: str) -> list[str]:
        return [e for e in self.edges if self.has_link(region, e)]

    def max_latency(self, nodes=None) -> int:
        """Largest latency upper bound among links joining ``nodes``."""
        worst = 0
        for pair, link in self.links.items():
            if nodes is None or pair <= nodes:
                worst = max(worst, link.latency_hi)
        return worst

    def diagnostics(self, architecture: str, edge_favorable: bool = False) -> list[str]:
        """Reachability problems for the given architecture (EDGE/CENTRALIZED/BOTH)."""
        out = []
        ids = list(self.regions) + list(self.edges) + [self.cloud.id]
        if len(set(ids)) != len(ids):
            out.append("network: node identifiers must be unique across regions, edges and cloud")
        for e, site in self.edges.items():
            if site.region not in self.regions:
                out.append(f"network.edges.{e}: unknown region {site.region!r}")
        for region in self.regions:
            if architecture in ("CENTRALIZED", "BOTH") and not self.has_link(region, self.cloud.id):
                out.append(f"network.regions.{region}: no path to cloud {self.cloud.id}")
            if architecture in ("EDGE", "BOTH"):
                reach = self.reachable_edges(region)
                if not reach:
                    out.append(f"network.regions.{region}: no reachable edge node")
                elif edge_favorable and self.has_link(region, self.cloud.id):
                    best = min(self.link(region, e).mean_latency for e in reach)
                    if not best < self.link(region, self.cloud.id).mean_latency:
                        out.append(f"network.regions.{region}: nearest edge is not closer "
                                   "than the cloud in an edge-favorable scenario")
        if architecture in ("EDGE", "BOTH"):
            members = list(self.edges) + [self.cloud.id]
            for i, a in enumerate(members):
                for b in members[i + 1:]:
                    if not self.has_link(a, b):
                        out.append(f"network.links: missing link {a} <-> {b} needed for replication")
        return out


@dataclass(slots=True)
class Message:
    src: str
    dst: str
    size: int
    payload: Any
    send_time: int = 0

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError("message size must be positive")


class Network:
    """Schedules message arrivals over a topology; drops are final."""

    def __init__(self, engine: Engine, topology: Topology):
        self.engine = engine
        self.topology = topology
        self.healthy: dict[str, bool] = {n: True for n in topology.edges}
        self.healthy[topology.cloud.id] = True
        self._access = engine.stream("network.access")
        self._backbone = engine.stream("network.backbone")
        self._loss = engine.stream("network.loss")
        self.sent = 0
        self.dropped = 0
        self.bytes_sent = 0

    def _rng_for(self, msg: Message) -> RngStream:
        regions = self.topology.regions
        if msg.src in regions or msg.dst in regions:
            return self._access
        return self._backbone

    def deliver(self, msg: Message, on_arrive: Callable[[Message], Any],
                on_drop: Optional[Callable[[Message], Any]] = None):
        """Schedule ``on_arrive(msg)`` after the link's transit delay, or drop."""
        link = self.topology.link(msg.src, msg.dst)
        engine = self.engine
        msg.send_time = engine.now
        self.sent += 1
        self.bytes_sent += msg.size
        lost = link.loss_rate > 0.0 and self._loss.random() < link.loss_rate
        if lost or not self.healthy.get(msg.dst, True):
            self.dropped += 1
            if engine.tracing:
                engine.note(msg.src, f"drop {msg.src}->{msg.dst}")
            if on_drop is not None:
                on_drop(msg)
            return None
        delay = transit_delay(link, msg.size, self._rng_for(msg))
        return engine.schedule(delay, on_arrive, msg, target=msg.dst, action="arrive")
