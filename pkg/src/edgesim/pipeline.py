"""Six-stage edge processing chain and the decision node that ends it.

Records flow INGESTION -> FILTERING -> AGGREGATION -> ANALYSIS and then, per
the decision policy, to TEMP_STORAGE (answered locally) or CLOUD_SYNC (also
batched up to the cloud archive). Every stage is an M-server FIFO queue with a
bounded waiting room.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .engine import Engine, RngStream, ms


class StageKind(enum.Enum):
    INGESTION = 0
    FILTERING = 1
    AGGREGATION = 2
    ANALYSIS = 3
    TEMP_STORAGE = 4
    CLOUD_SYNC = 5


CHAIN = (StageKind.INGESTION, StageKind.FILTERING, StageKind.AGGREGATION, StageKind.ANALYSIS)
TERMINAL_STAGES = (StageKind.TEMP_STORAGE, StageKind.CLOUD_SYNC)


class Verdict(enum.Enum):
    LOCAL = "LOCAL"
    CLOUD = "CLOUD"


@dataclass(frozen=True)
class ServiceTime:
    """Service-time distribution; parameters are microseconds."""

    dist: str = "fixed"
    a: int = 0
    b: int = 0

    @classmethod
    def fixed(cls, value_ms: float) -> "ServiceTime":
        return cls("fixed", ms(value_ms), ms(value_ms))

    @classmethod
    def uniform(cls, lo_ms: float, hi_ms: float) -> "ServiceTime":
        return cls("uniform", ms(lo_ms), ms(hi_ms))

    @classmethod
    def exponential(cls, mean_ms: float) -> "ServiceTime":
        return cls("exponential", ms(mean_ms), ms(mean_ms))

    @property
    def mean(self) -> float:
        return self.a if self.dist == "exponential" else (self.a + self.b) / 2

    @property
    def upper(self) -> float:
        return float("inf") if self.dist == "exponential" else self.b

    def sample(self, rng: RngStream) -> int:
        if self.dist == "fixed":
            return self.a
        if self.dist == "uniform":
            return int(round(rng.uniform(self.a, self.b)))
        return int(round(rng.expovariate(1.0 / self.a)))


@dataclass(slots=True, eq=False)
class DataRecord:
    id: int
    kind: Any  # workload.RequestKind
    origin_region: str
    created_at: int
    relevance: bool = True
    size: int = 1024
    flight: int = 0
    seat: int = 0
    hops: list = field(default_factory=list)
    node: str = ""
    verdict: Optional[Verdict] = None
    result: Any = None
    processed_at: int = -1
    consumed: bool = False

    @property
    def members(self) -> tuple:
        return (self,)

    def record_hop(self, stage: StageKind, enter: int, exit: int) -> None:
        self.hops.append((stage, enter, exit))


@dataclass(slots=True, eq=False)
class ConsolidatedRecord:
    """One unit carrying an aggregation window's member records."""

    id: int
    node: str
    size: int
    members: tuple
    created_at: int

    @property
    def member_ids(self) -> tuple:
        return tuple(r.id for r in self.members)

    def record_hop(self, stage: StageKind, enter: int, exit: int) -> None:
        for r in self.members:
            r.hops.append((stage, enter, exit))


def aggregate(window: list, compression: float = 1.0, *, unit_id: int = 0,
              now: int = 0) -> ConsolidatedRecord:
    if not window:
        raise ValueError("aggregation window is empty")
    nodes = {r.node for r in window}
    if len(nodes) > 1:
        raise ValueError(f"window mixes records from nodes {sorted(nodes)}")
    for r in window:
        if r.consumed:
            raise ValueError(f"record {r.id} already consumed by another window")
        r.consumed = True
    size = int(round(sum(r.size for r in window) * compression))
    return ConsolidatedRecord(unit_id, window[0].node, size, tuple(window), now)


def filter_record(record: DataRecord) -> bool:
    """True when the record is forwarded, False when it is dropped as noise."""
    return bool(record.relevance)


class DecisionPolicy:
    """Total mapping from a record to a LOCAL or CLOUD verdict."""

    def __init__(self, rule: Callable[[DataRecord], Verdict], name: str = "custom"):
        self.rule = rule
        self.name = name

    def __call__(self, record: DataRecord) -> Verdict:
        return self.rule(record)

    @classmethod
    def default(cls) -> "DecisionPolicy":
        # Reads stay at the edge; state-changing finalisations go to the cloud.
        from .workload import RequestKind

        def rule(record):
            if record.kind is RequestKind.AVAILABILITY_CHECK:
                return Verdict.LOCAL
            return Verdict.CLOUD
        return cls(rule, "default")

    @classmethod
    def constant(cls, verdict: Verdict) -> "DecisionPolicy":
        return cls(lambda record: verdict, f"all_{verdict.value.lower()}")

    @classmethod
    def named(cls, name: str) -> "DecisionPolicy":
        if name == "default":
            return cls.default()
        if name == "all_local":
            return cls.constant(Verdict.LOCAL)
        if name == "all_cloud":
            return cls.constant(Verdict.CLOUD)
        raise ValueError(f"unknown decision policy {name!r}")


def decide(record: DataRecord, policy: DecisionPolicy) -> Verdict:
    verdict = policy(record)
    if not isinstance(verdict, Verdict):
        raise TypeError(f"decision policy returned {verdict!r}")
    record.verdict = verdict
    return verdict


class Stage:
    """M-server FIFO queue. ``capacity`` bounds the waiting room (None = unbounded)."""

    def __init__(self, engine: Engine, node: str, kind: StageKind, service: ServiceTime,
                 instances: int = 1, capacity: Optional[int] = None,
                 rng: Optional[RngStream] = None,
                 on_done: Optional[Callable[[Any], None]] = None,
                 on_shed: Optional[Callable[[Any], None]] = None):
        if instances < 1:
            raise ValueError("a stage needs at least one instance")
        self.engine = engine
        self.node = node
        self.kind = kind
        self.service = service
        self.instances = instances
        self.capacity = capacity
        self.rng = rng or engine.stream(f"service.{kind.name}")
        self.on_done = on_done
        self.on_shed = on_shed
        self.queue: deque = deque()
        self.busy = 0
        self.processed = 0
        self.shed = 0
        self.arrivals = 0
        self._label = f"done {kind.name}"
        self._t = 0
        self._busy_area = 0  # server-microseconds of work
        self._inst_area = 0
        self.max_queue = 0

    def _account(self) -> None:
        now = self.engine.now
        dt = now - self._t
        if dt:
            self._busy_area += self.busy * dt
            self._inst_area += self.instances * dt
            self._t = now

    @property
    def depth(self) -> int:
        return len(self.queue) + self.busy

    def busy_area(self) -> int:
        self._account()
        return self._busy_area

    def instance_area(self) -> int:
        self._account()
        return self._inst_area

    def arrive(self, item) -> bool:
        self.arrivals += 1
        if self.busy < self.instances:
            self._start(item, self.engine.now)
            return True
        if self.capacity is not None and len(self.queue) >= self.capacity:
            self.shed += 1
            if self.on_shed is not None:
                self.on_shed(item)
            return False
        self.queue.append((item, self.engine.now))
        if len(self.queue) > self.max_queue:
            self.max_queue = len(self.queue)
        return True

    def _start(self, item, enter: int) -> None:
        self._account()
        self.busy += 1
        self.engine.schedule(self.service.sample(self.rng), self._done, item, enter,
                             target=self.node, action=self._label)

    def _done(self, item, enter: int) -> None:
        self._account()
        self.busy -= 1
        self.processed += 1
        item.record_hop(self.kind, enter, self.engine.now)
        queue = self.queue
        while queue and self.busy < self.instances:
            nxt, t_in = queue.popleft()
            self._start(nxt, t_in)
        if self.on_done is not None:
            self.on_done(item)

    def set_instances(self, n: int) -> None:
        """Resize; surplus busy servers finish their current job before retiring."""
        if n < 1:
            raise ValueError("a stage needs at least one instance")
        self._account()
        self.instances = n
        queue = self.queue
        while queue and self.busy < self.instances:
            nxt, t_in = queue.popleft()
            self._start(nxt, t_in)


@dataclass
class StageParams:
    service: ServiceTime
    instances: int = 1
    capacity: Optional[int] = None


def default_stage_params() -> dict[StageKind, StageParams]:
    return {
        StageKind.INGESTION: StageParams(ServiceTime.fixed(0.2)),
        StageKind.FILTERING: StageParams(ServiceTime.fixed(0.1)),
        StageKind.AGGREGATION: StageParams(ServiceTime.fixed(0.5)),
        StageKind.ANALYSIS: StageParams(ServiceTime.fixed(2.0)),
        StageKind.TEMP_STORAGE: StageParams(ServiceTime.fixed(0.3)),
        StageKind.CLOUD_SYNC: StageParams(ServiceTime.fixed(0.5)),
    }


@dataclass
class PipelineParams:
    stages: dict = field(default_factory=default_stage_params)
    window_count: int = 8
    window_timeout: int = ms(20)
    compression: float = 1.0


class Aggregator:
    """Count-or-timeout windows; each record joins exactly one window."""

    def __init__(self, engine: Engine, node: str, count: int, timeout: int,
                 compression: float, emit: Callable[[ConsolidatedRecord], None]):
        if count < 1 or timeout < 0:
            raise ValueError("window count must be >= 1 and timeout >= 0")
        self.engine = engine
        self.node = node
        self.count = count
        self.timeout = timeout
        self.compression = compression
        self.emit = emit
        self.window: list = []
        self._serial = 0
        self.windows_closed = 0

    def add(self, record: DataRecord) -> None:
        window = self.window
        window.append(record)
        if len(window) == 1 and self.count > 1:
            self.engine.schedule(self.timeout, self._expire, self._serial,
                                 target=self.node, action="window_timeout")
        if len(window) >= self.count:
            self.close()

    def _expire(self, serial: int) -> None:
        if serial == self._serial and self.window:
            self.close()

    def close(self) -> None:
        window, self.window = self.window, []
        self._serial += 1
        self.windows_closed += 1
        unit = aggregate(window, self.compression, unit_id=self._serial, now=self.engine.now)
        self.emit(unit)


class Pipeline:
    """The processing chain hosted by one node.

    Hooks supplied by the owner:
      ``probe(record) -> bool``     after INGESTION; True means answered from cache
      ``analyzed(record)``          after ANALYSIS; must eventually call :meth:`conclude`
      ``complete(record)``          after TEMP_STORAGE / CLOUD_SYNC (or a cache answer)
      ``dropped(record, reason)``   shed or filtered
    """

    def __init__(self, engine: Engine, node: str, params: PipelineParams,
                 policy: DecisionPolicy, *, analyzed: Callable, complete: Callable,
                 dropped: Optional[Callable] = None, probe: Optional[Callable] = None,
                 syncer: Optional["CloudSyncer"] = None):
        self.engine = engine
        self.node = node
        self.params = params
        self.policy = policy
        self.analyzed = analyzed
        self.complete = complete
        self.dropped_hook = dropped
        self.probe = probe
        self.syncer = syncer
        self.ingested = 0
        self.responded = 0
        self.filtered = 0
        self.shed = 0
        self.active = 0
        self.local_verdicts = 0
        self.cloud_verdicts = 0

        sp = params.stages

        def stage(kind, on_done):
            p = sp[kind]
            return Stage(engine, node, kind, p.service, p.instances, p.capacity,
                         on_done=on_done, on_shed=self._on_shed)

        self.stages = {
            StageKind.INGESTION: stage(StageKind.INGESTION, self._after_ingestion),
            StageKind.FILTERING: stage(StageKind.FILTERING, self._after_filtering),
            StageKind.AGGREGATION: stage(StageKind.AGGREGATION, self._after_aggregation),
            StageKind.ANALYSIS: stage(StageKind.ANALYSIS, self._after_analysis),
            StageKind.TEMP_STORAGE: stage(StageKind.TEMP_STORAGE, self._after_storage),
            StageKind.CLOUD_SYNC: stage(StageKind.CLOUD_SYNC, self._after_sync),
        }
        self.aggregator = Aggregator(engine, node, params.window_count, params.window_timeout,
                                     params.compression, self.stages[StageKind.AGGREGATION].arrive)

    def depth(self) -> int:
        return sum(s.depth for s in self.stages.values()) + len(self.aggregator.window)

    def ingest(self, record: DataRecord) -> bool:
        record.node = self.node
        self.ingested += 1
        self.active += 1
        if self.engine.tracing:
            self.engine.note(self.node, f"ingest r{record.id}")
        return self.stages[StageKind.INGESTION].arrive(record)

    def _finish(self, record: DataRecord, how: str) -> None:
        self.active -= 1
        if self.engine.tracing:
            hops = ";".join(f"{s.name}:{a}:{b}" for s, a, b in record.hops)
            self.engine.note(self.node, f"{how} r{record.id} {hops}")

    def _on_shed(self, item) -> None:
        for r in item.members:
            self.shed += 1
            self._finish(r, "shed")
            if self.dropped_hook is not None:
                self.dropped_hook(r, "shed")

    def _after_ingestion(self, record: DataRecord) -> None:
        if self.probe is not None and self.probe(record):
            self._respond(record)
            return
        self.stages[StageKind.FILTERING].arrive(record)

    def _after_filtering(self, record: DataRecord) -> None:
        if not filter_record(record):
            self.filtered += 1
            self._finish(record, "filtered")
            if self.dropped_hook is not None:
                self.dropped_hook(record, "filtered")
            return
        self.aggregator.add(record)

    def _after_aggregation(self, unit: ConsolidatedRecord) -> None:
        self.stages[StageKind.ANALYSIS].arrive(unit)

    def _after_analysis(self, unit: ConsolidatedRecord) -> None:
        for r in unit.members:
            self.analyzed(r)

    def conclude(self, record: DataRecord) -> Verdict:
        """Decision node: route an analysed record to local storage or cloud sync."""
        verdict = decide(record, self.policy)
        if verdict is Verdict.LOCAL:
            self.local_verdicts += 1
            self.stages[StageKind.TEMP_STORAGE].arrive(record)
        else:
            self.cloud_verdicts += 1
            self.stages[StageKind.CLOUD_SYNC].arrive(record)
        return verdict

    def _after_storage(self, record: DataRecord) -> None:
        self._respond(record)

    def _after_sync(self, record: DataRecord) -> None:
        if self.syncer is not None:
            self.syncer.add(record)
        self._respond(record)

    def _respond(self, record: DataRecord) -> None:
        record.processed_at = self.engine.now
        self.responded += 1
        self._finish(record, "respond")
        self.complete(record)


@dataclass(eq=False)
class SyncBatch:
    node: str
    records: list
    attempts: int = 0
    built_at: int = 0
    delivered_at: int = -1
    unsynced: bool = False


class CloudArchive:
    """Cloud-side store of synced records."""

    def __init__(self):
        self.records: dict[int, tuple[int, int]] = {}  # id -> (edge time, arrival)
        self.batches = 0

    def append(self, batch: SyncBatch, now: int) -> None:
        self.batches += 1
        for r in batch.records:
            self.records.setdefault(r.id, (r.processed_at, now))


class CloudSyncer:
    """Collects CLOUD-verdict records and ships them as one message per interval."""

    def __init__(self, engine: Engine, node: str, interval: int, send: Callable,
                 retry_limit: int = 3, backoff: int = ms(200), record_size: int = 0):
        if interval <= 0:
            raise ValueError("sync interval must be positive")
        self.engine = engine
        self.node = node
        self.interval = interval
        self.send = send  # send(batch, on_ok, on_drop)
        self.retry_limit = retry_limit
        self.backoff = backoff
        self.pending: list = []
        self._armed = False
        self.batches_sent = 0
        self.messages = 0
        self.unsynced: list[SyncBatch] = []

    def add(self, record: DataRecord) -> None:
        self.pending.append(record)
        if not self._armed:
            self._armed = True
            self.engine.schedule(self.interval, self.flush, target=self.node, action="sync_flush")

    def flush(self) -> Optional[SyncBatch]:
        self._armed = False
        if not self.pending:
            return None
        batch = SyncBatch(self.node, self.pending, built_at=self.engine.now)
        self.pending = []
        self.batches_sent += 1
        self._attempt(batch)
        return batch

    def _attempt(self, batch: SyncBatch) -> None:
        batch.attempts += 1
        self.messages += 1
        self.send(batch, self._on_drop)

    def _on_drop(self, batch: SyncBatch) -> None:
        if batch.attempts >= self.retry_limit:
            batch.unsynced = True
            self.unsynced.append(batch)
            if self.engine.tracing:
                self.engine.note(self.node, f"unsynced batch of {len(batch.records)}")
            return
        self.engine.schedule(self.backoff, self._attempt, batch,
                             target=self.node, action="sync_retry")
