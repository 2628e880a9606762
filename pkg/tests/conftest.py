import copy

import pytest

from edgesim.config import parse_config, read_yaml, scenario_path


def small_raw(**over):
    """A four-edge scenario small enough for unit tests."""
    raw = {
        "name": "small",
        "seed": 11,
        "architecture": "BOTH",
        "edge_favorable": True,
        "network": {
            "link_classes": {
                "ACCESS": {"kind": "LAN", "latency_ms": [1, 5], "bandwidth_Bps": 1e9},
                "USER_WAN": {"kind": "WAN", "latency_ms": 80, "bandwidth_Bps": 1e8},
                "BACKBONE": {"kind": "WAN", "latency_ms": [20, 40], "bandwidth_Bps": 1e8},
            },
            "cloud": {"id": "cloud"},
            "regions": [{"id": f"r{i}", "x": i, "y": 0} for i in range(4)],
            "edges": [{"id": f"e{i}", "region": f"r{i}", "x": i, "y": 0} for i in range(4)],
            "links": ([[f"r{i}", f"e{i}", "ACCESS"] for i in range(4)]
                      + [[f"r{i}", "cloud", "USER_WAN"] for i in range(4)]
                      + [[f"e{i}", f"e{j}", "BACKBONE"] for i in range(4) for j in range(i + 1, 4)]
                      + [[f"e{i}", "cloud", "BACKBONE"] for i in range(4)]),
        },
        "inventory": {"flights": 8, "seats_per_flight": 30},
        "workload": {
            "base_rate": 200, "duration_s": 3,
            "mix": {"AVAILABILITY_CHECK": 0.5, "BOOKING": 0.3, "CONFIRMATION": 0.1,
                    "CANCELLATION": 0.1},
            "locality": 0.5,
        },
        "metrics": {"drain_s": 3},
    }
    for path, value in over.items():
        node = raw
        keys = path.split(".")
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = value
    return raw


@pytest.fixture
def small_config():
    return parse_config(small_raw())


@pytest.fixture(scope="session")
def reference_raw():
    return read_yaml(scenario_path("reference"))


@pytest.fixture
def raw_copy(reference_raw):
    return copy.deepcopy(reference_raw)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
