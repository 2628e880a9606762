"""One simulated system: a centralized or edge deployment driven by a workload."""

from __future__ import annotations

from typing import Optional

from .config import ScenarioConfig
from .engine import US_PER_MS, US_PER_S, Engine, TraceFile
from .inventory import (BookingTicket, InventoryService, Outcome, SeatId, StrongOp,
                        converged, replay)
from .metrics import Collector, ScenarioReport, build_report
from .network import Message, Network
from .orchestration import (EdgeCache, EwmaDepth, LoadSnapshot, MovingAverageForecaster,
                            RoutingKind, StageAutoscaler, route)
from .pipeline import CloudArchive, CloudSyncer, DecisionPolicy, Pipeline, StageKind, Verdict
from .workload import RequestKind, generate

STRONG_OPS = {
    RequestKind.BOOKING: StrongOp.BOOK,
    RequestKind.CONFIRMATION: StrongOp.CONFIRM,
    RequestKind.CANCELLATION: StrongOp.CANCEL,
}


class InvariantViolation(RuntimeError):
    pass


class ServiceNode:
    """A node hosting the processing chain, its cache and its cloud syncer."""

    def __init__(self, sim: "Simulation", node: str, params, cache: Optional[EdgeCache]):
        self.sim = sim
        self.node = node
        self.engine = sim.engine
        self.inventory: InventoryService = sim.inventory[node]
        self.cache = cache
        cfg = sim.config
        self.syncer = CloudSyncer(self.engine, node, cfg.cloud_sync.interval, self._ship,
                                  cfg.cloud_sync.retry_limit, cfg.cloud_sync.backoff)
        self.pipeline = Pipeline(self.engine, node, params, DecisionPolicy.named(cfg.decision),
                                 analyzed=self._analyzed, complete=self._complete,
                                 dropped=self._dropped,
                                 probe=self._probe if cache is not None else None,
                                 syncer=self.syncer)
        self.inventory.on_change = self._invalidate if cache is not None else None
        self.routed = 0

    # -- pipeline hooks --------------------------------------------------
    def _probe(self, record) -> bool:
        if record.kind is not RequestKind.AVAILABILITY_CHECK:
            return False
        snap = self.cache.get(record.flight, self.engine.now)
        if snap is None:
            return False
        st = self.inventory.staleness(record.flight)
        self.sim.observe_staleness(st)
        record.result = (snap, st)
        return True

    def _analyzed(self, record) -> None:
        if record.kind is RequestKind.AVAILABILITY_CHECK:
            self.inventory.read_availability(
                record.flight, lambda snap, st: self._read_done(record, snap, st))
        else:
            self.inventory.submit(record.id, STRONG_OPS[record.kind],
                                  SeatId(record.flight, record.seat),
                                  lambda ticket: self._ticket(record, ticket))

    def _read_done(self, record, snap, staleness: int) -> None:
        self.sim.observe_staleness(staleness)
        record.result = (snap, staleness)
        self.pipeline.conclude(record)

    def _ticket(self, record, ticket: BookingTicket) -> None:
        record.result = ticket
        self.pipeline.conclude(record)

    def _complete(self, record) -> None:
        cache = self.cache
        if (cache is not None and record.kind is RequestKind.AVAILABILITY_CHECK
                and record.verdict is not Verdict.CLOUD and record.result is not None):
            snap = record.result[0]
            # only cache what is still the replica's current view
            rep = self.inventory.replica
            if rep.has_flight(record.flight) and rep.snapshot(record.flight) is snap:
                cache.put(record.flight, snap, self.engine.now)
        self.sim.respond(self.node, record)

    def _dropped(self, record, reason: str) -> None:
        if reason == "shed":
            self.sim.collector.on_shed()
        else:
            self.sim.collector.on_filtered()

    def _invalidate(self, flights: set) -> None:
        for f in flights:
            self.cache.invalidate(f)

    # -- cloud archive ---------------------------------------------------
    def _ship(self, batch, on_drop) -> None:
        sim = self.sim
        if self.node == sim.cloud:
            sim.archive.append(batch, self.engine.now)
            return
        size = sim.config.inventory.header_bytes + sum(r.size for r in batch.records)
        sim.network.deliver(Message(self.node, sim.cloud, size, batch), sim.archive_arrive,
                            lambda m: on_drop(m.payload))


class Simulation:
    """Build with a config and an architecture ("EDGE" or "CENTRALIZED"), then :meth:`run`."""

    def __init__(self, config: ScenarioConfig, architecture: str, trace_path=None):
        architecture = architecture.upper()
        if architecture not in ("EDGE", "CENTRALIZED"):
            raise ValueError(f"architecture must be EDGE or CENTRALIZED, not {architecture!r}")
        self.config = config
        self.architecture = architecture
        self.trace = TraceFile(trace_path) if trace_path else None
        self.engine = Engine(config.seed, self.trace)
        topo = config.topology
        self.topology = topo
        self.network = Network(self.engine, topo)
        self.collector = Collector()
        self.archive = CloudArchive()
        self.cloud = topo.cloud.id
        self.max_staleness = 0
        self.staleness_reads = 0
        self.staleness_violations = 0

        home = config.home_flights()
        catalog = config.catalog()
        if architecture == "EDGE":
            owner_of = {f: config.owners[r] for r, fl in home.items() for f in fl}
            replicas = list(topo.edges) + [self.cloud]
            hosts = list(topo.edges)
        else:
            owner_of = {f: self.cloud for f in catalog}
            replicas = [self.cloud]
            hosts = [self.cloud]
        self.owner_of = owner_of
        registry: dict = {}
        self.inventory = {
            n: InventoryService(self.engine, n, owner_of, catalog, config.inventory,
                                self.network, registry, config.seed_foreign)
            for n in replicas
        }
        self.nodes: dict[str, ServiceNode] = {}
        for n in hosts:
            params = config.cloud_pipeline if n == self.cloud else config.edge_pipeline
            cache = (EdgeCache(config.cache_capacity, config.cache_ttl)
                     if n != self.cloud and config.cache_capacity > 0 else None)
            self.nodes[n] = ServiceNode(self, n, params, cache)

        policy = config.routing
        self._ewma = {n: EwmaDepth(policy.ewma_half_life) for n in self.nodes}
        self._forecasters = {n: MovingAverageForecaster(policy.forecast_window) for n in self.nodes}
        self._period_counts = {n: 0 for n in self.nodes}
        self.autoscalers: list[StageAutoscaler] = []
        self._records = None
        self.staleness_bound = self._staleness_bound()

    # -- wiring ----------------------------------------------------------
    def _staleness_bound(self) -> float:
        cfg = self.config
        reps = list(self.inventory)
        lat = 0
        for i, a in enumerate(reps):
            for b in reps[i + 1:]:
                if self.topology.has_link(a, b):
                    link = self.topology.link(a, b)
                    # worst case: a full delta of every seat in the catalog
                    size = cfg.inventory.header_bytes + cfg.inventory.entry_bytes * cfg.flights * cfg.seats_per_flight
                    lat = max(lat, link.latency_hi + link.serialization(size))
        service = max(p.service.upper for pp in (cfg.edge_pipeline, cfg.cloud_pipeline)
                      for p in pp.stages.values())
        return cfg.inventory.sync_interval + lat + service

    def observe_staleness(self, st: int) -> None:
        self.staleness_reads += 1
        if st > self.max_staleness:
            self.max_staleness = st
        if st > self.staleness_bound:
            self.staleness_violations += 1

    def _pick_node(self, region: str) -> Optional[str]:
        if self.architecture == "CENTRALIZED":
            return self.cloud
        policy = self.config.routing
        load = None
        healthy = self.network.healthy
        if policy.kind is RoutingKind.LEAST_LOADED:
            now = self.engine.now
            load = LoadSnapshot(depth={n: self._ewma[n].update(node.pipeline.depth(), now)
                                       for n, node in self.nodes.items()})
        elif policy.kind is RoutingKind.PREDICTIVE:
            load = LoadSnapshot(forecast={n: (self._forecasters[n].forecast() or 0.0) + self._period_counts[n]
                                          for n in self.nodes})
        return route(region, policy, self.topology, load, healthy)

    def _period_tick(self) -> None:
        for n in self.nodes:
            self._forecasters[n].observe(self._period_counts[n])
            self._period_counts[n] = 0
        self.engine.schedule(self.config.routing.period, self._period_tick,
                             target="router", action="forecast_period")

    # -- request lifecycle -----------------------------------------------
    def _arrive(self, record) -> None:
        self.collector.on_generated()
        node = self._pick_node(record.origin_region)
        if node is None:
            self.collector.on_failed("no_healthy_node")
            if self.engine.tracing:
                self.engine.note(record.origin_region, f"unroutable r{record.id}")
        else:
            self.nodes[node].routed += 1
            if node in self._period_counts:
                self._period_counts[node] += 1
            msg = Message(record.origin_region, node, record.size, record)
            self.network.deliver(msg, self._at_node, self._lost)
        self._next_arrival()

    def _next_arrival(self) -> None:
        rec = next(self._records, None)
        if rec is not None:
            self.engine.schedule_at(rec.created_at, self._arrive, rec,
                                    target=rec.origin_region, action="arrival")

    def _at_node(self, msg: Message) -> None:
        self.nodes[msg.dst].pipeline.ingest(msg.payload)

    def _lost(self, msg: Message) -> None:
        self.collector.on_failed("network")

    def respond(self, node: str, record) -> None:
        msg = Message(node, record.origin_region, self.config.workload.response_bytes, record)
        self.network.deliver(msg, self._at_user, self._lost)

    def _at_user(self, msg: Message) -> None:
        record = msg.payload
        res = record.result
        if isinstance(res, BookingTicket) and res.outcome is Outcome.TIMEOUT:
            self.collector.on_failed("timeout")
            return
        self.collector.on_completed(record.kind, record.created_at, record.processed_at,
                                    self.engine.now)

    def archive_arrive(self, msg: Message) -> None:
        self.archive.append(msg.payload, self.engine.now)

    def _health(self, node: str, up: bool) -> None:
        self.network.healthy[node] = up

    # -- run -------------------------------------------------------------
    def run(self) -> ScenarioReport:
        cfg = self.config
        eng = self.engine
        if len(self.inventory) > 1:
            for svc in self.inventory.values():
                svc.start_sync()
        if self.architecture == "EDGE" and cfg.routing.kind is RoutingKind.PREDICTIVE:
            eng.schedule(cfg.routing.period, self._period_tick, target="router",
                         action="forecast_period")
        if cfg.autoscaler is not None:
            for node in self.nodes.values():
                for kind in cfg.autoscaled_stages:
                    a = StageAutoscaler(eng, node.pipeline.stages[kind], cfg.autoscaler)
                    a.start()
                    self.autoscalers.append(a)
        for node, down, up in cfg.failures:
            eng.schedule_at(down, self._health, node, False, target=node, action="down")
            if up < cfg.horizon:
                eng.schedule_at(up, self._health, node, True, target=node, action="up")
        self._records = generate(cfg.workload, eng.stream("workload"),
                                 home_flights=cfg.home_flights(),
                                 seats_per_flight=cfg.seats_per_flight)
        self._next_arrival()
        eng.run_until(cfg.horizon)
        if self.trace is not None:
            self.trace.close()
        return self.report()

    # -- post-run --------------------------------------------------------
    def double_booked_seats(self) -> int:
        """Seats that ever had two live confirmed bookings, from the owners' ledgers."""
        bad = set()
        live: dict = {}
        for svc in self.inventory.values():
            for t in svc.coordinator.ledger.values():
                if t.outcome is not Outcome.CONFIRMED:
                    continue
                if t.op is StrongOp.BOOK:
                    live[t.seat] = live.get(t.seat, 0) + 1
                    if live[t.seat] > 1:
                        bad.add(t.seat)
                elif t.op is StrongOp.CANCEL:
                    live[t.seat] = live.get(t.seat, 0) - 1
        return len(bad)

    def log_replay_ok(self) -> bool:
        return all(replay(s.replica.log) == s.replica.seats for s in self.inventory.values())

    def check(self, report: ScenarioReport) -> list[str]:
        """Runtime invariants; empty when all hold."""
        out = []
        if not report.conservation_ok():
            out.append("request conservation violated")
        if not report.percentiles_ok():
            out.append("percentile ordering violated")
        if self.double_booked_seats():
            out.append(f"double booking on {self.double_booked_seats()} seats")
        if self.config.verify_log and not self.log_replay_ok():
            out.append("replica log replay differs from live state")
        lossless = all(l.loss_rate == 0 for l in self.topology.links.values())
        if lossless and self.staleness_violations:
            out.append(f"{self.staleness_violations} reads exceeded the staleness bound")
        return out

    def resource_seconds(self) -> float:
        return sum(s.instance_area() for n in self.nodes.values()
                   for s in n.pipeline.stages.values()) / US_PER_S

    def report(self) -> ScenarioReport:
        cfg = self.config
        extra = {}
        tickets = {o: 0 for o in Outcome}
        for svc in self.inventory.values():
            for t in svc.coordinator.ledger.values():
                tickets[t.outcome] += 1
        for name, node in self.nodes.items():
            p = node.pipeline
            extra[f"routing.{name}.requests"] = node.routed
            if node.cache is not None:
                c = node.cache
                extra[f"cache.{name}.hits"] = c.hits
                extra[f"cache.{name}.misses"] = c.misses
                extra[f"cache.{name}.hit_rate"] = f"{c.hit_rate:.6f}"
            for kind, st in p.stages.items():
                pre = f"stage.{name}.{kind.name}"
                extra[f"{pre}.processed"] = st.processed
                extra[f"{pre}.shed"] = st.shed
                extra[f"{pre}.max_queue"] = st.max_queue
                extra[f"{pre}.instances"] = st.instances
            extra[f"sync.{name}.batches"] = node.syncer.batches_sent
            extra[f"sync.{name}.unsynced_batches"] = len(node.syncer.unsynced)
            extra[f"decision.{name}.local"] = p.local_verdicts
            extra[f"decision.{name}.cloud"] = p.cloud_verdicts
        for o, n in tickets.items():
            extra[f"inventory.tickets.{o.value}"] = n
        extra["inventory.double_booked_seats"] = self.double_booked_seats()
        extra["inventory.converged"] = str(converged(self.inventory.values())).lower()
        extra["inventory.hold_expiries"] = sum(s.coordinator.expired_holds for s in self.inventory.values())
        extra["inventory.fetches"] = sum(s.fetches for s in self.inventory.values())
        extra["staleness.reads"] = self.staleness_reads
        extra["staleness.max_ms"] = f"{self.max_staleness / US_PER_MS:.6f}"
        extra["staleness.bound_ms"] = f"{self.staleness_bound / US_PER_MS:.6f}"
        extra["staleness.violations"] = self.staleness_violations
        extra["archive.records"] = len(self.archive.records)
        for reason in sorted(self.collector.failures):
            extra[f"failed.{reason}"] = self.collector.failures[reason]
        for a in self.autoscalers:
            series = ";".join(f"{t / US_PER_S:g}:{n}" for t, n in a.series)
            extra[f"autoscale.{a.stage.node}.{a.stage.kind.name}"] = series
        extra["network.messages"] = self.network.sent
        extra["network.dropped"] = self.network.dropped
        extra["events_processed"] = self.engine.processed
        return build_report(
            self.collector, scenario=cfg.name, architecture=self.architecture, seed=cfg.seed,
            config_hash=cfg.config_hash(), workload_hash=cfg.workload_hash(),
            horizon_us=cfg.horizon, slo=cfg.slo, w_slo=cfg.w_slo, w_completion=cfg.w_completion,
            resource_seconds=self.resource_seconds(), extra=extra)


def run_scenario(config: ScenarioConfig, architecture: str, trace_path=None) -> tuple[ScenarioReport, list[str]]:
    """Run one architecture; returns the report and any invariant violations."""
    sim = Simulation(config, architecture, trace_path)
    report = sim.run()
    return report, sim.check(report)
