import pytest

from edgesim.engine import ms
from edgesim.metrics import (Collector, ComparisonError, LatencyStats, build_report, compare,
                             percentile, satisfaction, ScenarioReport)
from edgesim.workload import RequestKind

SLO = ms(500)


def test_satisfaction_endpoints_and_example():
    assert satisfaction([ms(10)] * 10, 10, SLO) == pytest.approx(1.0)
    assert satisfaction([ms(900)] * 10, 10, SLO) == pytest.approx(0.3)
    resp = [ms(100)] * 72 + [ms(900)] * 18  # 80% of 90 completions within SLO
    assert satisfaction(resp, 100, SLO) == pytest.approx(0.83)


def test_satisfaction_absent_and_bad_slo():
    assert satisfaction([], 0, SLO) is None
    with pytest.raises(ValueError):
        satisfaction([], 1, 0)


def test_nearest_rank_percentile():
    v = list(range(1, 101))
    assert percentile(v, 50) == 50 and percentile(v, 95) == 95 and percentile(v, 100) == 100
    assert percentile([7], 99) == 7 and percentile([], 50) is None


def make_report(latencies_ms, seed=1, generated=None, shed=0, whash="w"):
    c = Collector()
    generated = generated if generated is not None else len(latencies_ms) + shed
    for _ in range(generated):
        c.on_generated()
    for x in latencies_ms:
        c.on_completed(RequestKind.BOOKING, 0, ms(x), ms(x) + ms(10))
    for _ in range(shed):
        c.on_shed()
    return build_report(c, scenario="t", architecture="EDGE", seed=seed, config_hash="h",
                        workload_hash=whash, horizon_us=ms(1000), slo=SLO)


def test_compare_identical_is_zero():
    r = make_report([10, 20, 30])
    cmp = compare(r, r)
    assert cmp.latency_reduction == 0 and cmp.throughput_gain == 0
    assert cmp.satisfaction_gain == 0


def test_compare_sixty_percent_reduction():
    cmp = compare(make_report([100] * 5), make_report([40] * 5))
    assert cmp.latency_reduction == pytest.approx(60.0)


def test_compare_refuses_mismatched_experiments():
    with pytest.raises(ComparisonError):
        compare(make_report([1], seed=1), make_report([1], seed=2))
    with pytest.raises(ComparisonError):
        compare(make_report([1], whash="a"), make_report([1], whash="b"))


def test_conservation_and_percentile_order():
    r = make_report([5, 1, 9, 3], shed=2)
    assert r.conservation_ok() and r.percentiles_ok()
    assert r.generated == 6 and r.in_flight == 0
    s = r.latency["ALL"]
    assert s.p50 <= s.p95 <= s.p99 <= s.max


def test_report_text_round_trip():
    r = make_report([5, 15, 25], shed=1)
    r.extra["cache.e0.hits"] = 3
    back = ScenarioReport.from_text(r.to_text())
    assert back.to_text() == r.to_text()
    assert "satisfaction is a proxy" in r.to_text()


def test_csv_rows_shape():
    rows = make_report([5]).csv_rows()
    assert all(len(row) == 4 for row in rows)
    assert ("edge", "ALL", "completed", 1) in rows


def test_latency_stats_empty():
    assert LatencyStats.of([]).count == 0
