import math

import pytest

from edgesim.engine import Engine, RngStream, ms
from edgesim.network import ConfigError, LinkClass, Message, Network, Site, Topology, transit_delay


def fixed(latency_ms, bandwidth, loss=0.0, kind="LAN"):
    return LinkClass("L", kind, ms(latency_ms), ms(latency_ms), bandwidth, loss)


def two_node_topology(link):
    topo = Topology({"r": Site("r")}, {"e": Site("e", region="r")}, Site("cloud"))
    topo.add_link("r", "e", link)
    return topo


def test_pure_serialization():
    assert transit_delay(fixed(0, 1_000_000), 1_000_000, RngStream(0, "t")) == 1_000_000


def test_pure_propagation():
    # 1 B at 1e9 B/s is 1 ns, rounded up to a whole microsecond
    assert transit_delay(fixed(50, 1e9, kind="WAN"), 1, RngStream(0, "t")) == 50_001


def test_uniform_latency_range_and_mean():
    link = LinkClass("U", "CELLULAR", ms(10), ms(20), 1e12)
    rng = RngStream(3, "t")
    samples = [link.sample_latency(rng) for _ in range(100_000)]
    assert min(samples) >= ms(10) and max(samples) <= ms(20)
    assert abs(sum(samples) / len(samples) - ms(15)) <= ms(0.5)


@pytest.mark.parametrize("kw", [
    dict(kind="FIBER"), dict(lo=-1), dict(bw=0), dict(loss=1.0), dict(loss=-0.1)])
def test_link_class_invariants(kw):
    with pytest.raises(ConfigError):
        LinkClass("x", kw.get("kind", "LAN"), kw.get("lo", 0), 10, kw.get("bw", 1.0),
                  kw.get("loss", 0.0))


def test_zero_loss_delivers_everything():
    eng = Engine(1)
    net = Network(eng, two_node_topology(fixed(2, 1e9)))
    got = []
    for _ in range(1000):
        net.deliver(Message("r", "e", 100, None), got.append)
    eng.run()
    assert len(got) == 1000 and net.dropped == 0


def test_binomial_loss_within_three_sigma():
    eng = Engine(5)
    net = Network(eng, two_node_topology(fixed(2, 1e9, loss=0.5)))
    drops = []
    for _ in range(10_000):
        net.deliver(Message("r", "e", 100, None), lambda m: None, drops.append)
    sigma = math.sqrt(10_000 * 0.25)
    assert abs(len(drops) - 5000) <= 3 * sigma


def test_arrival_not_before_send():
    eng = Engine(1)
    net = Network(eng, two_node_topology(fixed(0, 1e9)))
    eng.run_until(77)
    times = []
    net.deliver(Message("r", "e", 1, None), lambda m: times.append((m.send_time, eng.now)))
    eng.run()
    sent, arrived = times[0]
    assert arrived >= sent and arrived - sent == 1


def test_missing_link_is_configuration_error():
    eng = Engine(1)
    net = Network(eng, two_node_topology(fixed(2, 1e9)))
    with pytest.raises(ConfigError):
        net.deliver(Message("r", "cloud", 10, None), lambda m: None)


def test_message_size_positive():
    with pytest.raises(ValueError):
        Message("a", "b", 0, None)


def test_unhealthy_destination_drops():
    eng = Engine(1)
    net = Network(eng, two_node_topology(fixed(2, 1e9)))
    net.healthy["e"] = False
    dropped = []
    assert net.deliver(Message("r", "e", 10, None), lambda m: None, dropped.append) is None
    assert len(dropped) == 1


def test_link_map_symmetric():
    topo = two_node_topology(fixed(2, 1e9))
    assert topo.link("r", "e") is topo.link("e", "r")


def test_diagnostics_flag_unreachable_region_and_edge_favorable():
    topo = Topology({"r": Site("r"), "s": Site("s")}, {"e": Site("e", region="r")}, Site("cloud"))
    topo.add_link("r", "e", fixed(50, 1e9))
    topo.add_link("r", "cloud", fixed(20, 1e9))
    topo.add_link("s", "cloud", fixed(20, 1e9))
    topo.add_link("e", "cloud", fixed(20, 1e9))
    diags = topo.diagnostics("EDGE", edge_favorable=True)
    assert any("network.regions.s" in d and "no reachable edge" in d for d in diags)
    assert any("network.regions.r" in d and "not closer" in d for d in diags)
