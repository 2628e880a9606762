"""Post-run trace auditor.

Replays the ``time,seq,target,action`` lines of a run and checks, for every
record, that it entered once, left through exactly one terminal (respond, shed
or filtered), visited stages in chain order with monotone times, and that the
record count balanced at every line. Ticket lines are checked for booking
safety: a seat never holds two live confirmed bookings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

CHAIN = ("INGESTION", "FILTERING", "AGGREGATION", "ANALYSIS")
TERMINAL = ("TEMP_STORAGE", "CLOUD_SYNC")
MAX_REPORTED = 50


@dataclass
class AuditResult:
    lines: int = 0
    ingested: int = 0
    responded: int = 0
    shed: int = 0
    filtered: int = 0
    in_flight: int = 0
    tickets: int = 0
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        state = "ok" if self.ok else f"{len(self.violations)} violations"
        return (f"audit {state}: {self.lines} lines, {self.ingested} ingested, "
                f"{self.responded} responded, {self.shed} shed, {self.filtered} filtered, "
                f"{self.in_flight} in flight, {self.tickets} tickets")


def _hops_ok(how: str, stages: list) -> bool:
    n = len(stages)
    if how == "filtered":
        return stages == ["INGESTION", "FILTERING"]
    if how == "shed":
        return n <= len(CHAIN) and stages == list(CHAIN[:n])
    # respond: a cache answer after INGESTION, or the whole chain plus one terminal stage
    if stages == ["INGESTION"]:
        return True
    return n == len(CHAIN) + 1 and stages[:-1] == list(CHAIN) and stages[-1] in TERMINAL


def audit_lines(lines: Iterable[str]) -> AuditResult:
    res = AuditResult()
    v = res.violations
    open_records: dict[str, int] = {}
    closed: set = set()
    live: dict[str, int] = {}
    last_t = 0

    def bad(msg: str) -> None:
        if len(v) < MAX_REPORTED:
            v.append(msg)
        elif len(v) == MAX_REPORTED:
            v.append("further violations suppressed")

    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\n")
        if not line:
            continue
        res.lines += 1
        parts = line.split(",", 3)
        if len(parts) != 4:
            bad(f"line {lineno}: malformed record")
            continue
        t = int(parts[0])
        if t < last_t:
            bad(f"line {lineno}: time goes backwards ({t} < {last_t})")
        last_t = t
        action = parts[3]
        word, _, rest = action.partition(" ")
        if word == "ingest":
            rid = rest
            if rid in open_records or rid in closed:
                bad(f"line {lineno}: {rid} ingested twice")
            open_records[rid] = t
            res.ingested += 1
        elif word in ("respond", "shed", "filtered"):
            rid, _, hop_text = rest.partition(" ")
            if rid not in open_records:
                bad(f"line {lineno}: {rid} terminates without an open ingest")
                continue
            entered = open_records.pop(rid)
            closed.add(rid)
            if word == "respond":
                res.responded += 1
            elif word == "shed":
                res.shed += 1
            else:
                res.filtered += 1
            hops = [h.split(":") for h in hop_text.split(";")] if hop_text else []
            stages = [h[0] for h in hops]
            if not _hops_ok(word, stages):
                bad(f"line {lineno}: {rid} {word} with stage order {stages}")
            prev = entered
            for stage, a, b in hops:
                a, b = int(a), int(b)
                if a < prev or b < a or b > t:
                    bad(f"line {lineno}: {rid} hop {stage} times out of order")
                    break
                prev = b
        elif word == "ticket":
            res.tickets += 1
            fields = rest.split(" ")
            if len(fields) != 4:
                bad(f"line {lineno}: malformed ticket")
                continue
            _, op, seat, outcome = fields
            if outcome == "CONFIRMED":
                if op == "BOOK":
                    live[seat] = live.get(seat, 0) + 1
                    if live[seat] > 1:
                        bad(f"line {lineno}: seat {seat} confirmed twice")
                elif op == "CANCEL":
                    live[seat] = live.get(seat, 0) - 1
        # conservation: every ingested record is responded, shed, filtered or still open
        if res.ingested != res.responded + res.shed + res.filtered + len(open_records):
            bad(f"line {lineno}: record conservation broken")
    res.in_flight = len(open_records)
    return res


def audit_trace(path) -> AuditResult:
    with Path(path).open(encoding="utf-8") as fh:
        return audit_lines(fh)
