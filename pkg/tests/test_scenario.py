import pytest

from edgesim.audit import audit_lines, audit_trace
from edgesim.config import load_config, parse_config, scenario_path
from edgesim.scenario import Simulation, run_scenario
from conftest import small_raw


@pytest.mark.parametrize("arch", ["EDGE", "CENTRALIZED"])
def test_small_run_holds_invariants(arch, tmp_path):
    cfg = parse_config(small_raw())
    trace = tmp_path / "t.csv"
    report, violations = run_scenario(cfg, arch, trace)
    assert violations == []
    assert report.conservation_ok() and report.percentiles_ok()
    assert report.generated > 0 and report.completed > 0
    result = audit_trace(trace)
    assert result.ok, result.violations
    assert result.ingested == report.generated - report.failed


def test_same_seed_same_bytes(tmp_path):
    cfg = parse_config(small_raw())
    texts, traces = [], []
    for i in range(2):
        p = tmp_path / f"t{i}.csv"
        rep, _ = run_scenario(cfg, "EDGE", p)
        texts.append(rep.to_text())
        traces.append(p.read_bytes())
    assert texts[0] == texts[1] and traces[0] == traces[1]


def test_different_seed_differs():
    a, _ = run_scenario(parse_config(small_raw(seed=1)), "EDGE")
    b, _ = run_scenario(parse_config(small_raw(seed=2)), "EDGE")
    assert a.to_text() != b.to_text()


def test_edge_is_faster_for_availability_checks():
    cfg = parse_config(small_raw())
    base, _ = run_scenario(cfg, "CENTRALIZED")
    edge, _ = run_scenario(cfg, "EDGE")
    assert edge.latency["AVAILABILITY_CHECK"].mean < base.latency["AVAILABILITY_CHECK"].mean


def test_failed_node_requests_counted_and_routed_elsewhere():
    raw = small_raw(**{"orchestration.failures": [{"node": "e0", "down_at_s": 0.5,
                                                   "up_at_s": 2.0}]})
    raw["network"]["links"].append(["r0", "e1", "BACKBONE"])
    sim = Simulation(parse_config(raw), "EDGE")
    report = sim.run()
    assert report.conservation_ok()
    assert sim.nodes["e1"].routed > sim.nodes["e2"].routed


def test_unroutable_region_counts_failures():
    raw = small_raw(**{"orchestration.failures": [{"node": "e0", "down_at_s": 0}]})
    report, violations = run_scenario(parse_config(raw), "EDGE")
    ex = report.extra
    # r0's users are unroutable; strong ops on e0-owned flights time out elsewhere
    assert ex["failed.no_healthy_node"] > 0 and ex["failed.timeout"] > 0
    assert report.failed == ex["failed.no_healthy_node"] + ex["failed.timeout"]
    assert report.conservation_ok() and violations == []


@pytest.mark.parametrize("policy", ["LEAST_LOADED", "PREDICTIVE"])
def test_other_routing_policies_run(policy):
    raw = small_raw(**{"orchestration.routing": {"policy": policy, "period_ms": 200}})
    for i in range(4):
        for j in range(4):
            if i != j:
                raw["network"]["links"].append([f"r{i}", f"e{j}", "BACKBONE"])
    report, violations = run_scenario(parse_config(raw), "EDGE")
    assert violations == [] and report.completed > 0
    counts = [int(report.extra[f"routing.e{i}.requests"]) for i in range(4)]
    assert sum(counts) == report.generated


def test_cache_hits_and_staleness_bound():
    raw = small_raw(**{"orchestration.cache": {"capacity": 16, "ttl_ms": 500}})
    sim = Simulation(parse_config(raw), "EDGE")
    report = sim.run()
    hits = sum(int(v) for k, v in report.extra.items() if k.endswith(".hits"))
    assert hits > 0
    assert sim.staleness_violations == 0 and sim.max_staleness <= sim.staleness_bound


def test_lossy_links_still_conserve_requests():
    raw = small_raw()
    raw["network"]["link_classes"]["BACKBONE"]["loss_rate"] = 0.2
    raw["network"]["link_classes"]["ACCESS"]["loss_rate"] = 0.05
    report, violations = run_scenario(parse_config(raw), "EDGE")
    assert report.conservation_ok()
    assert report.extra.get("failed.network", 0) > 0
    assert report.extra["inventory.double_booked_seats"] == 0


def test_auditor_catches_broken_traces():
    good = ["0,0,e,ingest r1", "5,3,e,respond r1 INGESTION:0:5"]
    assert audit_lines(good).ok
    assert not audit_lines(["5,3,e,respond r1 INGESTION:0:5"]).ok
    assert not audit_lines(["0,0,e,ingest r1", "9,3,e,respond r1 FILTERING:0:5"]).ok
    assert not audit_lines(["0,0,e,ingest r1", "9,3,e,shed r1 INGESTION:4:2"]).ok
    assert not audit_lines(["0,0,e,ingest r1", "9,3,e,respond r1 INGESTION:0:1",
                            "9,4,e,respond r1 INGESTION:0:1"]).ok
    assert not audit_lines(["5,0,e,x", "4,1,e,y"]).ok
    two = ["1,1,e0,ticket q1 BOOK 0:1 CONFIRMED", "2,2,e0,ticket q2 BOOK 0:1 CONFIRMED"]
    assert not audit_lines(two).ok
    ok = [two[0], "2,2,e0,ticket q3 CANCEL 0:1 CONFIRMED", "3,3,e0,ticket q2 BOOK 0:1 CONFIRMED"]
    assert audit_lines(ok).ok
