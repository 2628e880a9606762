import pytest
from hypothesis import given, strategies as st

from edgesim.engine import Engine, ms
from edgesim.network import LinkClass, Site, Topology
from edgesim.orchestration import (AutoscalerConfig, EdgeCache, EwmaDepth, LoadSnapshot,
                                   MovingAverageForecaster, RoutingKind, RoutingPolicy,
                                   StageAutoscaler, desired_instances, route)
from edgesim.pipeline import ServiceTime, Stage, StageKind


def topo(latencies: dict, coords=None):
    coords = coords or {}
    edges = {e: Site(e, *coords.get(e, (0, 0)), region="r") for e in latencies}
    t = Topology({"r": Site("r")}, edges, Site("cloud"))
    for e, lat in latencies.items():
        t.add_link("r", e, LinkClass("L", "LAN", ms(lat), ms(lat), 1e9))
    return t


@pytest.mark.parametrize("kind", list(RoutingKind))
def test_single_edge_always_chosen(kind):
    load = LoadSnapshot({"A": 99.0}, {"A": 99.0})
    assert route("r", RoutingPolicy(kind), topo({"A": 5}), load) == "A"


def test_nearest_by_latency():
    assert route("r", RoutingPolicy(), topo({"A": 5, "B": 20})) == "A"


def test_nearest_euclidean_then_id_tiebreak():
    t = topo({"A": 5, "B": 5, "C": 5}, {"A": (3, 0), "B": (1, 0), "C": (1, 0)})
    assert route("r", RoutingPolicy(), t) == "B"


def test_least_loaded_picks_shallow_queue():
    load = LoadSnapshot(depth={"A": 10.0, "B": 2.0})
    assert route("r", RoutingPolicy(RoutingKind.LEAST_LOADED), topo({"A": 5, "B": 5}), load) == "B"


def test_predictive_uses_forecast():
    load = LoadSnapshot(forecast={"A": 1.0, "B": 4.0})
    assert route("r", RoutingPolicy(RoutingKind.PREDICTIVE), topo({"A": 9, "B": 5}), load) == "A"


def test_unhealthy_nodes_skipped_and_none_when_all_down():
    t = topo({"A": 5, "B": 20})
    assert route("r", RoutingPolicy(), t, healthy={"A": False, "B": True}) == "B"
    assert route("r", RoutingPolicy(), t, healthy={"A": False, "B": False}) is None


def test_ewma_depth_decays_toward_depth():
    e = EwmaDepth(ms(50))
    assert e.update(10, ms(50)) == pytest.approx(5.0)
    assert e.update(10, ms(100)) == pytest.approx(7.5)


def test_moving_average_forecaster():
    f = MovingAverageForecaster(3)
    assert f.forecast() is None
    for x in (1, 2, 3, 10):
        f.observe(x)
    assert f.forecast() == pytest.approx(5.0)


def test_cache_hit_within_ttl_and_miss_just_past():
    c = EdgeCache(4, ttl=ms(500))
    c.put("k", "v", 0)
    assert c.get("k", ms(500)) == "v"
    assert c.get("k", ms(500) + 1) is None
    assert c.hits == 1 and c.misses == 1


def test_cache_lru_eviction_order():
    c = EdgeCache(2, ttl=ms(1000))
    c.put("a", 1, 0)
    c.put("b", 2, 0)
    c.get("a", 1)
    assert c.put("c", 3, 2) == "b"
    assert set(c.entries) == {"a", "c"}


@given(st.lists(st.tuples(st.sampled_from("abcdef"), st.integers(0, 50)), max_size=80),
       st.integers(1, 4))
def test_cache_never_serves_expired_or_overflows(ops, cap):
    c = EdgeCache(cap, ttl=10)
    inserted = {}
    now = 0
    for key, dt in ops:
        now += dt
        if dt % 2:
            c.put(key, now, now)
            inserted[key] = now
        else:
            v = c.get(key, now)
            if v is not None:
                assert now - v <= 10
        assert len(c.entries) <= cap


def test_desired_instances_examples():
    cfg = AutoscalerConfig(target_utilization=0.6, min_instances=1, max_instances=16)
    assert desired_instances(2, 0.9, cfg) == 3
    assert desired_instances(4, 0.6, cfg) == 4
    assert desired_instances(3, 0.0, cfg) == 1
    assert desired_instances(10, 1.0, AutoscalerConfig(0.5, 1, 12)) == 12


@pytest.mark.parametrize("kw", [dict(target_utilization=1.0), dict(target_utilization=0.0),
                                dict(min_instances=5, max_instances=2),
                                dict(evaluation_period=0)])
def test_autoscaler_config_invariants(kw):
    with pytest.raises(ValueError):
        AutoscalerConfig(**kw)


def test_stage_autoscaler_scales_up_after_actuation_delay():
    eng = Engine()
    stage = Stage(eng, "e", StageKind.ANALYSIS, ServiceTime.fixed(1))
    cfg = AutoscalerConfig(0.5, 1, 8, evaluation_period=ms(100), actuation_delay=ms(50))
    a = StageAutoscaler(eng, stage, cfg)
    a.start()

    class Job:
        def record_hop(self, *args):
            pass

    # keep one server fully busy
    def feed():
        stage.arrive(Job())
        eng.schedule(ms(1), feed)
    feed()
    eng.run_until(ms(120))
    assert stage.instances == 1
    eng.run_until(ms(151))
    assert stage.instances == 2 and a.series[-1] == (ms(150), 2)
