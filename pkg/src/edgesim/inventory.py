"""Geo-partitioned seat inventory replicated with a version-vector CRDT.

Reads are served from the local replica (eventual path). Bookings,
confirmations and cancellations go to the seat's partition owner, which
serialises them with a per-seat lock (strong path). Owners ship their log
suffix to every peer each sync interval; receivers merge.

Each seat holds a register of causally-maximal versions. Concurrent versions
are all retained and the visible state is the one with the highest status
precedence (BOOKED > CANCELLED_TOMBSTONE > HELD > AVAILABLE), then the latest
writer. Keeping the siblings is what makes merge a true join: commutative,
associative and idempotent.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, NamedTuple, Optional

from .engine import Engine, ms
from .network import Message, Network


class SeatStatus(enum.IntEnum):
    # value doubles as merge precedence
    AVAILABLE = 0
    HELD = 1
    CANCELLED_TOMBSTONE = 2
    BOOKED = 3


ALLOWED = {
    (SeatStatus.AVAILABLE, SeatStatus.HELD),
    (SeatStatus.HELD, SeatStatus.BOOKED),
    (SeatStatus.HELD, SeatStatus.AVAILABLE),
    (SeatStatus.BOOKED, SeatStatus.CANCELLED_TOMBSTONE),
    (SeatStatus.CANCELLED_TOMBSTONE, SeatStatus.AVAILABLE),
}


class SeatId(NamedTuple):
    flight: int
    seat: int

    @property
    def label(self) -> str:
        row, col = divmod(self.seat, 6)
        return f"F{self.flight}-{row + 1}{'ABCDEF'[col]}"


class VersionVector:
    """Immutable map node -> counter."""

    __slots__ = ("_v", "_key")

    def __init__(self, counters: Optional[dict] = None):
        self._v = {k: v for k, v in (counters or {}).items() if v}
        self._key = tuple(sorted(self._v.items()))

    def __getitem__(self, node: str) -> int:
        return self._v.get(node, 0)

    def __eq__(self, other) -> bool:
        return isinstance(other, VersionVector) and self._key == other._key

    def __hash__(self) -> int:
        return hash(self._key)

    def __repr__(self) -> str:
        return f"VV{dict(self._key)}"

    def as_dict(self) -> dict:
        return dict(self._v)

    def increment(self, node: str) -> "VersionVector":
        v = dict(self._v)
        v[node] = v.get(node, 0) + 1
        return VersionVector(v)

    def join(self, other: "VersionVector") -> "VersionVector":
        v = dict(self._v)
        for k, n in other._v.items():
            if n > v.get(k, 0):
                v[k] = n
        return VersionVector(v)

    def __le__(self, other: "VersionVector") -> bool:
        ov = other._v
        return all(n <= ov.get(k, 0) for k, n in self._v.items())

    def __lt__(self, other: "VersionVector") -> bool:
        return self <= other and self._key != other._key

    def compare(self, other: "VersionVector") -> str:
        """'equal', 'before', 'after' or 'concurrent'."""
        le, ge = self <= other, other <= self
        if le and ge:
            return "equal"
        if le:
            return "before"
        if ge:
            return "after"
        return "concurrent"


EMPTY_VV = VersionVector()


@dataclass(frozen=True)
class SeatVersion:
    status: SeatStatus
    version: VersionVector
    last_writer: tuple  # (SimTime, node id)
    holder: Optional[str] = None

    def rank(self) -> tuple:
        return (int(self.status), self.last_writer, self.holder or "")


class VersionedSeatState:
    """Register of causally-maximal versions for one seat."""

    __slots__ = ("siblings", "_winner", "_version")

    def __init__(self, siblings: Iterable[SeatVersion]):
        sibs = tuple(sorted(set(siblings), key=_canonical))
        if not sibs:
            raise ValueError("a seat state needs at least one version")
        self.siblings = sibs
        self._winner = max(sibs, key=SeatVersion.rank)
        v = sibs[0].version
        for s in sibs[1:]:
            v = v.join(s.version)
        self._version = v

    @property
    def status(self) -> SeatStatus:
        return self._winner.status

    @property
    def version(self) -> VersionVector:
        return self._version

    @property
    def last_writer(self) -> tuple:
        return self._winner.last_writer

    @property
    def holder(self) -> Optional[str]:
        return self._winner.holder

    def __eq__(self, other) -> bool:
        return isinstance(other, VersionedSeatState) and self.siblings == other.siblings

    def __hash__(self) -> int:
        return hash(self.siblings)

    def __repr__(self) -> str:
        return f"<{self.status.name} {self.version!r} siblings={len(self.siblings)}>"


def _canonical(v: SeatVersion) -> tuple:
    return (v.version._key, int(v.status), v.last_writer, v.holder or "")


def merge(a: VersionedSeatState, b: VersionedSeatState) -> VersionedSeatState:
    """Join of two seat states.

    Ordered versions: the dominant one wins. Concurrent versions are kept as
    siblings and resolved by status precedence, then ``last_writer``.
    """
    if a is b or a.siblings == b.siblings:
        return a
    pool = set(a.siblings) | set(b.siblings)
    keep = {x for x in pool if not any(x.version < y.version for y in pool)}
    # hand back an operand when nothing new survived, so callers can test identity
    if keep == set(a.siblings):
        return a
    if keep == set(b.siblings):
        return b
    return VersionedSeatState(keep)


INITIAL_VERSION = SeatVersion(SeatStatus.AVAILABLE, EMPTY_VV, (0, ""), None)
INITIAL_STATE = VersionedSeatState([INITIAL_VERSION])


class Outcome(enum.Enum):
    CONFIRMED = "CONFIRMED"
    REJECTED_TAKEN = "REJECTED_TAKEN"
    REJECTED_NOT_BOOKED = "REJECTED_NOT_BOOKED"
    REJECTED_UNKNOWN = "REJECTED_UNKNOWN"
    TIMEOUT = "TIMEOUT"


class StrongOp(enum.Enum):
    BOOK = "BOOK"
    CONFIRM = "CONFIRM"
    CANCEL = "CANCEL"


@dataclass(frozen=True)
class BookingTicket:
    request_id: int
    seat: SeatId
    op: StrongOp
    outcome: Outcome
    decided_at: int
    coordinator: str


class FlightSnapshot(NamedTuple):
    flight: int
    statuses: tuple
    available: int


@dataclass
class LogEntry:
    at: int
    origin: str
    seat: Optional[SeatId]
    version: Any  # SeatVersion, or catalog dict for the seed entry


class ReplicaState:
    """Seat inventory owned by one node, event-sourced into ``log``."""

    def __init__(self, node: str, partition: Iterable[int] = ()):
        self.node = node
        self.partition = set(partition)
        self.seats: dict[int, list] = {}
        self.log: list[LogEntry] = []
        self.outbox: list[tuple] = []  # locally originated (seat, version)
        self._snapshots: dict[int, FlightSnapshot] = {}
        self.last_write_at = -1

    def seed(self, catalog: dict, now: int = 0) -> None:
        """Install flights {flight: seat count} as all-AVAILABLE."""
        self.log.append(LogEntry(now, "seed", None, dict(catalog)))
        _install(self.seats, catalog)

    def has_flight(self, flight: int) -> bool:
        return flight in self.seats

    def state(self, seat: SeatId) -> VersionedSeatState:
        return self.seats[seat.flight][seat.seat]

    def snapshot(self, flight: int) -> FlightSnapshot:
        snap = self._snapshots.get(flight)
        if snap is None:
            statuses = tuple(s.status for s in self.seats[flight])
            snap = FlightSnapshot(flight, statuses,
                                  sum(1 for s in statuses if s is SeatStatus.AVAILABLE))
            self._snapshots[flight] = snap
        return snap

    def write(self, seat: SeatId, status: SeatStatus, now: int,
              holder: Optional[str] = None) -> VersionedSeatState:
        """Local state transition; only the allowed edges of the seat lifecycle."""
        cur = self.state(seat)
        if (cur.status, status) not in ALLOWED:
            raise ValueError(f"illegal transition {cur.status.name}->{status.name} on {seat}")
        version = SeatVersion(status, cur.version.increment(self.node), (now, self.node), holder)
        self.outbox.append((seat, version))
        self.last_write_at = now
        return self.apply(seat, version, now, self.node)

    def apply(self, seat: SeatId, version: SeatVersion, now: int, origin: str) -> VersionedSeatState:
        row = self.seats[seat.flight]
        cur = row[seat.seat]
        new = merge(cur, VersionedSeatState([version]))
        self.log.append(LogEntry(now, origin, seat, version))
        if new is not cur:
            row[seat.seat] = new
            self._snapshots.pop(seat.flight, None)
        return new

    def merge_delta(self, entries: Iterable[tuple], now: int, origin: str) -> set:
        """Apply a remote delta; returns flights whose visible state may have changed."""
        changed = set()
        for seat, version in entries:
            if seat.flight not in self.seats:
                continue
            before = self.state(seat)
            after = self.apply(seat, version, now, origin)
            if after is not before:
                changed.add(seat.flight)
        return changed

    def install_snapshot(self, flight: int, states: list, now: int, origin: str) -> None:
        """Cache a foreign flight fetched from its owner."""
        self.seats[flight] = [INITIAL_STATE] * len(states)
        self.log.append(LogEntry(now, "seed", None, {flight: len(states)}))
        for i, st in enumerate(states):
            for v in st.siblings:
                self.apply(SeatId(flight, i), v, now, origin)

    def visible(self) -> dict:
        return {(f, i): s.status for f, row in self.seats.items() for i, s in enumerate(row)}


def _install(seats: dict, catalog: dict) -> None:
    for flight, n in catalog.items():
        seats[flight] = [INITIAL_STATE] * n


def replay(log: Iterable[LogEntry]) -> dict:
    """Fold a log from empty; must equal the live ``seats`` it was recorded from."""
    seats: dict[int, list] = {}
    for e in log:
        if e.seat is None:
            _install(seats, e.version)
            continue
        row = seats[e.seat.flight]
        row[e.seat.seat] = merge(row[e.seat.seat], VersionedSeatState([e.version]))
    return seats


@dataclass
class StrongRequest:
    request_id: int
    op: StrongOp
    seat: SeatId
    entry: str
    attempts: int = 0
    callback: Optional[Callable[[BookingTicket], None]] = field(default=None, repr=False)


class Coordinator:
    """Partition owner's strong path: per-seat FIFO lock around check-and-transition."""

    def __init__(self, engine: Engine, replica: ReplicaState, commit_time: int = ms(0.1),
                 hold_ttl: int = ms(5000)):
        self.engine = engine
        self.replica = replica
        self.commit_time = commit_time
        self.hold_ttl = hold_ttl
        self.ledger: dict[int, BookingTicket] = {}
        self._locks: dict[SeatId, deque] = {}
        self._in_progress: set = set()
        self.on_change: Optional[Callable[[set], None]] = None
        self.expired_holds = 0

    def submit(self, req: StrongRequest, reply: Callable[[BookingTicket], None]) -> None:
        done = self.ledger.get(req.request_id)
        if done is not None:
            reply(done)
            return
        if req.request_id in self._in_progress:
            return  # the first copy will answer
        self._in_progress.add(req.request_id)
        waiters = self._locks.get(req.seat)
        if waiters is None:
            self._locks[req.seat] = deque()
            self._execute(req, reply)
        else:
            waiters.append((req, reply))

    def _execute(self, req: StrongRequest, reply) -> None:
        replica = self.replica
        now = self.engine.now
        status = replica.state(req.seat).status
        holder = f"q{req.request_id}"
        if req.op is StrongOp.BOOK:
            if status is SeatStatus.AVAILABLE:
                replica.write(req.seat, SeatStatus.HELD, now, holder)
                self._changed(req.seat)
                self.engine.schedule(self.hold_ttl, self._expire, req.seat, holder,
                                     target=replica.node, action="hold_ttl")
                self.engine.schedule(self.commit_time, self._commit, req, reply,
                                     SeatStatus.BOOKED, target=replica.node, action="commit")
                return
            self._decide(req, reply, Outcome.REJECTED_TAKEN)
        elif req.op is StrongOp.CANCEL:
            if status is SeatStatus.BOOKED:
                replica.write(req.seat, SeatStatus.CANCELLED_TOMBSTONE, now, holder)
                self._changed(req.seat)
                self.engine.schedule(self.commit_time, self._commit, req, reply,
                                     SeatStatus.AVAILABLE, target=replica.node, action="commit")
                return
            self._decide(req, reply, Outcome.REJECTED_NOT_BOOKED)
        else:
            ok = status is SeatStatus.BOOKED
            self._decide(req, reply, Outcome.CONFIRMED if ok else Outcome.REJECTED_NOT_BOOKED)

    def _commit(self, req: StrongRequest, reply, status: SeatStatus) -> None:
        holder = f"q{req.request_id}" if status is SeatStatus.BOOKED else None
        if status is SeatStatus.BOOKED:
            st = self.replica.state(req.seat)
            if st.status is not SeatStatus.HELD or st.holder != holder:
                # the hold expired before the commit landed
                self._decide(req, reply, Outcome.TIMEOUT)
                return
        self.replica.write(req.seat, status, self.engine.now, holder)
        self._changed(req.seat)
        self._decide(req, reply, Outcome.CONFIRMED)

    def _decide(self, req: StrongRequest, reply, outcome: Outcome) -> None:
        ticket = BookingTicket(req.request_id, req.seat, req.op, outcome,
                               self.engine.now, self.replica.node)
        self.ledger[req.request_id] = ticket
        self._in_progress.discard(req.request_id)
        if self.engine.tracing:
            self.engine.note(self.replica.node,
                             f"ticket q{req.request_id} {req.op.value} {req.seat.flight}:{req.seat.seat} {outcome.value}")
        waiters = self._locks[req.seat]
        if waiters:
            nxt, nxt_reply = waiters.popleft()
            self._execute(nxt, nxt_reply)
        else:
            del self._locks[req.seat]
        reply(ticket)

    def _expire(self, seat: SeatId, holder: str) -> None:
        st = self.replica.state(seat)
        if st.status is SeatStatus.HELD and st.holder == holder:
            self.replica.write(seat, SeatStatus.AVAILABLE, self.engine.now)
            self.expired_holds += 1
            self._changed(seat)

    def _changed(self, seat: SeatId) -> None:
        if self.on_change is not None:
            self.on_change({seat.flight})


@dataclass
class InventoryParams:
    sync_interval: int = ms(100)
    hold_ttl: int = ms(5000)
    commit_time: int = ms(0.1)
    retry_limit: int = 3
    request_timeout: int = ms(1000)
    entry_bytes: int = 64
    header_bytes: int = 128


class InventoryService:
    """One node's replica plus its strong-path client, coordinator and sync agent."""

    def __init__(self, engine: Engine, node: str, owner_of: dict, catalog: dict,
                 params: InventoryParams, network: Optional[Network] = None,
                 registry: Optional[dict] = None, seed_foreign: bool = True):
        self.engine = engine
        self.node = node
        self.owner_of = owner_of
        self.catalog = catalog
        self.params = params
        self.network = network
        self.registry = registry if registry is not None else {}
        self.registry[node] = self
        owned = {f for f, o in owner_of.items() if o == node}
        self.replica = ReplicaState(node, owned)
        self.replica.seed({f: n for f, n in catalog.items() if seed_foreign or f in owned})
        self.coordinator = Coordinator(engine, self.replica, params.commit_time, params.hold_ttl)
        self.coordinator.on_change = self._local_change
        self.on_change: Optional[Callable[[set], None]] = None
        self.last_sync: dict[str, int] = {}
        self.acked: dict[str, int] = {}
        self.sync_messages = 0
        self.max_delta_bytes = 0
        self.deltas_received = 0
        self.last_change_at = 0
        self.fetches = 0
        self.timeouts = 0
        self._fetch_waiters: dict[int, list] = {}

    # -- eventual path ---------------------------------------------------
    def staleness(self, flight: int) -> int:
        owner = self.owner_of[flight]
        if owner == self.node:
            return 0
        return self.engine.now - self.last_sync.get(owner, 0)

    def read_availability(self, flight: int, done: Callable[[FlightSnapshot, int], None]) -> None:
        """Local snapshot plus staleness; fetches from the owner if nothing is cached."""
        if self.replica.has_flight(flight):
            done(self.replica.snapshot(flight), self.staleness(flight))
            return
        waiters = self._fetch_waiters.get(flight)
        if waiters is not None:
            waiters.append(done)
            return
        self._fetch_waiters[flight] = [done]
        self.fetches += 1
        owner = self.owner_of[flight]
        self._send(owner, ("fetch", flight, self.node), self.params.header_bytes)

    def _on_fetch(self, flight: int, requester: str) -> None:
        states = list(self.replica.seats[flight])
        size = self.params.header_bytes + self.params.entry_bytes * len(states)
        self._send(requester, ("snapshot", flight, states, self.node), size)

    def _on_snapshot(self, flight: int, states: list, origin: str) -> None:
        if not self.replica.has_flight(flight):
            self.replica.install_snapshot(flight, states, self.engine.now, origin)
        for done in self._fetch_waiters.pop(flight, []):
            done(self.replica.snapshot(flight), 0)

    # -- strong path -----------------------------------------------------
    def submit(self, request_id: int, op: StrongOp, seat: SeatId,
               callback: Callable[[BookingTicket], None]) -> None:
        n = self.catalog.get(seat.flight)
        if n is None or not 0 <= seat.seat < n:
            callback(BookingTicket(request_id, seat, op, Outcome.REJECTED_UNKNOWN,
                                   self.engine.now, self.node))
            return
        req = StrongRequest(request_id, op, seat, self.node, callback=callback)
        owner = self.owner_of[seat.flight]
        if owner == self.node:
            self.coordinator.submit(req, callback)
        else:
            self._forward(req, owner)

    def book_seat(self, request_id: int, seat: SeatId, callback) -> None:
        self.submit(request_id, StrongOp.BOOK, seat, callback)

    def _forward(self, req: StrongRequest, owner: str) -> None:
        req.attempts += 1
        self._send(owner, ("strong", req), self.params.header_bytes,
                   on_drop=lambda m: self._retry(req, owner))

    def _retry(self, req: StrongRequest, owner: str) -> None:
        if req.attempts >= self.params.retry_limit:
            self.timeouts += 1
            ticket = BookingTicket(req.request_id, req.seat, req.op, Outcome.TIMEOUT,
                                   self.engine.now + self.params.request_timeout, owner)
            self.engine.schedule(self.params.request_timeout, req.callback, ticket,
                                 target=self.node, action="strong_timeout")
            return
        self.engine.schedule(self.params.request_timeout, self._forward, req, owner,
                             target=self.node, action="strong_retry")

    def _on_strong(self, req: StrongRequest) -> None:
        entry = req.entry

        def reply(ticket: BookingTicket) -> None:
            self._send(entry, ("ticket", ticket, req), self.params.header_bytes,
                       on_drop=lambda m: self.registry[entry]._retry(req, self.node))
        self.coordinator.submit(req, reply)

    def _on_ticket(self, ticket: BookingTicket, req: StrongRequest) -> None:
        if req.callback is not None:
            cb, req.callback = req.callback, None  # first answer wins
            cb(ticket)

    # -- replication -----------------------------------------------------
    def peers(self) -> list:
        return [n for n in self.registry if n != self.node]

    def start_sync(self) -> None:
        self.engine.schedule(self.params.sync_interval, self._sync_tick,
                             target=self.node, action="sync_tick")

    def _sync_tick(self) -> None:
        now = self.engine.now
        outbox = self.replica.outbox
        end = len(outbox)
        for peer in self.peers():
            start = self.acked.get(peer, 0)
            entries = outbox[start:end]
            size = self.params.header_bytes + self.params.entry_bytes * len(entries)
            self.sync_messages += 1
            if size > self.max_delta_bytes:
                self.max_delta_bytes = size
            self._send(peer, ("delta", self.node, start, end, entries, now), size)
        self.engine.schedule(self.params.sync_interval, self._sync_tick,
                             target=self.node, action="sync_tick")

    def _on_delta(self, sender: str, start: int, end: int, entries: list, as_of: int) -> None:
        self.deltas_received += 1
        changed = self.replica.merge_delta(entries, self.engine.now, sender)
        if as_of > self.last_sync.get(sender, -1):
            self.last_sync[sender] = as_of
        if changed:
            self.last_change_at = self.engine.now
            if self.on_change is not None:
                self.on_change(changed)
        self._send(sender, ("ack", self.node, end), self.params.header_bytes)

    def _on_ack(self, peer: str, end: int) -> None:
        if end > self.acked.get(peer, 0):
            self.acked[peer] = end

    def _local_change(self, flights: set) -> None:
        self.last_change_at = self.engine.now
        if self.on_change is not None:
            self.on_change(flights)

    # -- transport -------------------------------------------------------
    def _send(self, dst: str, payload: tuple, size: int, on_drop=None) -> None:
        target = self.registry[dst]
        self.network.deliver(Message(self.node, dst, size, payload), target.receive, on_drop)

    def receive(self, msg: Message) -> None:
        kind, *rest = msg.payload
        if kind == "delta":
            self._on_delta(*rest)
        elif kind == "ack":
            self._on_ack(*rest)
        elif kind == "strong":
            self._on_strong(*rest)
        elif kind == "ticket":
            self._on_ticket(*rest)
        elif kind == "fetch":
            self._on_fetch(*rest)
        elif kind == "snapshot":
            self._on_snapshot(*rest)
        else:
            raise ValueError(f"unknown inventory message {kind!r}")


def converged(services: Iterable[InventoryService]) -> bool:
    """All replicas show the same visible status for every seat they share."""
    views = [s.replica.visible() for s in services]
    first = views[0]
    return all(v == first for v in views[1:])
