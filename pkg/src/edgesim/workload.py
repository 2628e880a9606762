"""Reservation workload: Poisson arrivals with piecewise-constant peak rates."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .engine import RngStream, US_PER_S, seconds
from .pipeline import DataRecord


class RequestKind(enum.Enum):
    AVAILABILITY_CHECK = "AVAILABILITY_CHECK"
    BOOKING = "BOOKING"
    CONFIRMATION = "CONFIRMATION"
    CANCELLATION = "CANCELLATION"


KINDS = tuple(RequestKind)


@dataclass
class Peak:
    start: int  # µs
    end: int
    multiplier: float


@dataclass
class WorkloadProfile:
    base_rate: float                      # requests per second
    duration: int                         # µs
    mix: dict = field(default_factory=lambda: {RequestKind.AVAILABILITY_CHECK: 1.0})
    region_weights: dict = field(default_factory=dict)
    peaks: list = field(default_factory=list)
    locality: float = 1.0                 # P(flight homed in the caller's region)
    irrelevant_fraction: float = 0.0
    record_bytes: int = 1024
    response_bytes: int = 2048

    def problems(self) -> list[str]:
        out = []
        if self.base_rate <= 0:
            out.append("workload.base_rate: must be > 0")
        if self.duration <= 0:
            out.append("workload.duration_s: must be > 0")
        if abs(sum(self.mix.values()) - 1.0) > 1e-9:
            out.append(f"workload.mix: probabilities sum to {sum(self.mix.values()):g}, expected 1")
        if any(p < 0 for p in self.mix.values()):
            out.append("workload.mix: negative probability")
        if self.region_weights and abs(sum(self.region_weights.values()) - 1.0) > 1e-9:
            out.append("workload.region_weights: probabilities sum to "
                       f"{sum(self.region_weights.values()):g}, expected 1")
        for i, p in enumerate(self.peaks):
            if p.multiplier < 1:
                out.append(f"workload.peaks[{i}].multiplier: must be >= 1")
            if not 0 <= p.start < p.end:
                out.append(f"workload.peaks[{i}]: need 0 <= start < end")
        if not 0.0 <= self.locality <= 1.0:
            out.append("workload.locality: must be in [0, 1]")
        if not 0.0 <= self.irrelevant_fraction <= 1.0:
            out.append("workload.irrelevant_fraction: must be in [0, 1]")
        if self.record_bytes <= 0 or self.response_bytes <= 0:
            out.append("workload: message sizes must be positive")
        return out

    def rate_at(self, t: int) -> float:
        mult = 1.0
        for p in self.peaks:
            if p.start <= t < p.end:
                mult = max(mult, p.multiplier)
        return self.base_rate * mult

    def segments(self) -> list[tuple[int, int, float]]:
        """(start, end, rate) pieces covering [0, duration)."""
        cuts = {0, self.duration}
        for p in self.peaks:
            cuts.update(c for c in (p.start, p.end) if 0 < c < self.duration)
        cuts = sorted(cuts)
        return [(a, b, self.rate_at(a)) for a, b in zip(cuts, cuts[1:])]

    def expected_count(self) -> float:
        return sum((b - a) / US_PER_S * r for a, b, r in self.segments())


def arrival_times(profile: WorkloadProfile, rng: RngStream) -> Iterator[int]:
    """Event times of a Poisson process with the profile's piecewise rate."""
    t = 0.0
    for start, end, rate in profile.segments():
        t = max(t, float(start))
        per_us = rate / US_PER_S
        while True:
            t += rng.expovariate(per_us)
            if t >= end:
                t = float(end)
                # memorylessness: restart the clock at the segment boundary
                break
            yield int(t)


def _cumulative(weights: dict) -> tuple[list, list]:
    items = list(weights)
    cum, acc = [], 0.0
    for k in items:
        acc += weights[k]
        cum.append(acc)
    return cum, items


def generate(profile: WorkloadProfile, rng: RngStream, *, home_flights: Optional[dict] = None,
             seats_per_flight: int = 1, first_id: int = 0) -> Iterator[DataRecord]:
    """Timed requests; every draw comes from ``rng`` in a fixed order."""
    kind_cum, kinds = _cumulative({k: profile.mix.get(k, 0.0) for k in KINDS})
    regions = profile.region_weights or {"region": 1.0}
    region_cum, region_ids = _cumulative(regions)
    home_flights = home_flights or {}
    all_flights = sorted(f for fl in home_flights.values() for f in fl) or [0]
    rid = first_id
    for t in arrival_times(profile, rng):
        kind = rng.pick(kind_cum, kinds)
        region = rng.pick(region_cum, region_ids)
        local = home_flights.get(region)
        if local and rng.random() < profile.locality:
            flight = local[rng.randrange(len(local))]
        else:
            flight = all_flights[rng.randrange(len(all_flights))]
        seat = rng.randrange(seats_per_flight)
        relevant = not (profile.irrelevant_fraction > 0 and rng.random() < profile.irrelevant_fraction)
        yield DataRecord(rid, kind, region, t, relevant, profile.record_bytes, flight, seat)
        rid += 1


def poisson_sigma(expected: float) -> float:
    return math.sqrt(expected)


def profile_from_seconds(base_rate: float, duration_s: float, **kw) -> WorkloadProfile:
    peaks = [Peak(seconds(a), seconds(b), m) for a, b, m in kw.pop("peaks", [])]
    return WorkloadProfile(base_rate, seconds(duration_s), peaks=peaks, **kw)
