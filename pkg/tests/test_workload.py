import math

from edgesim.engine import RngStream, US_PER_S, seconds
from edgesim.workload import (Peak, RequestKind, WorkloadProfile, arrival_times, generate,
                              profile_from_seconds)


def test_poisson_count_within_three_sigma():
    prof = profile_from_seconds(100, 10)
    n = sum(1 for _ in arrival_times(prof, RngStream(1, "workload")))
    assert abs(n - 1000) <= 3 * math.sqrt(1000)


def test_peak_multiplier_three_in_second_half():
    prof = profile_from_seconds(100, 10, peaks=[(5, 10, 3)])
    times = list(arrival_times(prof, RngStream(2, "workload")))
    first = sum(1 for t in times if t < seconds(5))
    second = len(times) - first
    # second - 3*first has mean 0 and variance 500 + 9*500
    assert abs(second - 3 * first) <= 3 * math.sqrt(500 + 9 * 500)
    assert prof.expected_count() == 2000


def test_pure_availability_mix():
    prof = profile_from_seconds(200, 2)
    kinds = {r.kind for r in generate(prof, RngStream(3, "workload"))}
    assert kinds == {RequestKind.AVAILABILITY_CHECK}


def test_generation_is_deterministic_and_ordered():
    prof = profile_from_seconds(300, 2, mix={RequestKind.BOOKING: 0.5,
                                             RequestKind.AVAILABILITY_CHECK: 0.5},
                                region_weights={"a": 0.5, "b": 0.5})
    run = lambda: [(r.created_at, r.kind, r.origin_region, r.flight, r.seat)
                   for r in generate(prof, RngStream(4, "w"), home_flights={"a": [0], "b": [1]},
                                     seats_per_flight=10)]
    a, b = run(), run()
    assert a == b
    assert [x[0] for x in a] == sorted(x[0] for x in a)
    assert all(0 <= x[4] < 10 for x in a)


def test_locality_one_keeps_flights_home():
    prof = profile_from_seconds(300, 1, region_weights={"a": 0.5, "b": 0.5}, locality=1.0)
    for r in generate(prof, RngStream(5, "w"), home_flights={"a": [0, 2], "b": [1, 3]}):
        assert r.flight % 2 == (0 if r.origin_region == "a" else 1)


def test_profile_problems():
    bad = WorkloadProfile(100, seconds(1), mix={RequestKind.BOOKING: 0.9},
                          region_weights={"a": 0.5}, peaks=[Peak(0, seconds(1), 0.5)])
    probs = bad.problems()
    assert any(p.startswith("workload.mix") for p in probs)
    assert any(p.startswith("workload.region_weights") for p in probs)
    assert any("multiplier" in p for p in probs)
    assert profile_from_seconds(100, 1).problems() == []


def test_segments_cover_duration():
    prof = profile_from_seconds(10, 10, peaks=[(2, 4, 2), (3, 6, 5)])
    segs = prof.segments()
    assert segs[0][0] == 0 and segs[-1][1] == 10 * US_PER_S
    assert all(a[1] == b[0] for a, b in zip(segs, segs[1:]))
    assert prof.rate_at(seconds(3.5)) == 50
