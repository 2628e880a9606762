"""Metric collection, the satisfaction proxy, report files and comparisons."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .engine import US_PER_MS, US_PER_S
from .workload import KINDS

PERCENTILES = (50, 95, 99)
BASE_KEYS = frozenset((
    "scenario", "architecture", "seed", "config_hash", "workload_hash", "horizon_s",
    "generated", "completed", "shed", "failed", "filtered", "in_flight", "throughput_rps",
    "response_time_mean_ms", "response_time_p95_ms", "satisfaction_proxy", "resource_seconds",
))


class ComparisonError(ValueError):
    """The two reports do not come from the same experiment."""


def percentile(sorted_values: list, p: float):
    """Nearest-rank percentile of an ascending list."""
    if not sorted_values:
        return None
    k = max(1, math.ceil(p / 100 * len(sorted_values)))
    return sorted_values[k - 1]


def satisfaction(response_times: list, generated: int, slo: int,
                 w_slo: float = 0.7, w_completion: float = 0.3) -> Optional[float]:
    """Weighted blend of the SLO-hit fraction and the completion rate.

    A proxy score: ``w_slo * P(response <= slo | completed) + w_completion * completed/generated``.
    None when nothing was generated.
    """
    if slo <= 0:
        raise ValueError("slo must be positive")
    if generated == 0:
        return None
    completed = len(response_times)
    within = sum(1 for r in response_times if r <= slo)
    hit = within / completed if completed else 0.0
    return w_slo * hit + w_completion * completed / generated


@dataclass
class LatencyStats:
    count: int
    mean: float
    p50: float
    p95: float
    p99: float
    max: float

    @classmethod
    def of(cls, values_us: list) -> "LatencyStats":
        if not values_us:
            return cls(0, 0.0, 0.0, 0.0, 0.0, 0.0)
        v = sorted(values_us)
        to_ms = 1 / US_PER_MS
        return cls(len(v), sum(v) / len(v) * to_ms,
                   percentile(v, 50) * to_ms, percentile(v, 95) * to_ms,
                   percentile(v, 99) * to_ms, v[-1] * to_ms)


class Collector:
    """Per-run outcome counters and latency samples (µs)."""

    def __init__(self):
        self.generated = 0
        self.completed = 0
        self.shed = 0
        self.failed = 0
        self.filtered = 0
        self.latency = {k: [] for k in KINDS}
        self.response = {k: [] for k in KINDS}
        self.failures: dict[str, int] = {}

    def on_generated(self) -> None:
        self.generated += 1

    def on_completed(self, kind, created: int, processed: int, received: int) -> None:
        self.completed += 1
        self.latency[kind].append(processed - created)
        self.response[kind].append(received - created)

    def on_failed(self, reason: str) -> None:
        self.failed += 1
        self.failures[reason] = self.failures.get(reason, 0) + 1

    def on_shed(self) -> None:
        self.shed += 1

    def on_filtered(self) -> None:
        self.filtered += 1

    def all_latency(self) -> list:
        return [x for k in KINDS for x in self.latency[k]]

    def all_response(self) -> list:
        return [x for k in KINDS for x in self.response[k]]


@dataclass
class ScenarioReport:
    scenario: str
    architecture: str
    seed: int
    config_hash: str
    workload_hash: str
    horizon_us: int
    generated: int
    completed: int
    shed: int
    failed: int
    filtered: int
    in_flight: int
    latency: dict                    # kind name or "ALL" -> LatencyStats
    throughput: float                # completed / s over the horizon
    response_time_mean: float        # ms, end to end
    response_p95: float
    satisfaction: Optional[float]
    resource_seconds: float
    extra: dict = field(default_factory=dict)

    def conservation_ok(self) -> bool:
        return (self.completed + self.shed + self.failed + self.filtered + self.in_flight
                == self.generated and self.in_flight >= 0)

    def percentiles_ok(self) -> bool:
        return all(s.p50 <= s.p95 <= s.p99 <= s.max for s in self.latency.values())

    def to_text(self) -> str:
        lines = [
            "# edgesim scenario report",
            "# satisfaction is a proxy: 0.7*slo_hit_fraction + 0.3*completion_rate by default",
        ]
        for k, v in self.items():
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    def items(self) -> list[tuple[str, str]]:
        f = _fmt
        out = [
            ("scenario", self.scenario), ("architecture", self.architecture),
            ("seed", str(self.seed)), ("config_hash", self.config_hash),
            ("workload_hash", self.workload_hash),
            ("horizon_s", f(self.horizon_us / US_PER_S)),
            ("generated", str(self.generated)), ("completed", str(self.completed)),
            ("shed", str(self.shed)), ("failed", str(self.failed)),
            ("filtered", str(self.filtered)), ("in_flight", str(self.in_flight)),
            ("throughput_rps", f(self.throughput)),
            ("response_time_mean_ms", f(self.response_time_mean)),
            ("response_time_p95_ms", f(self.response_p95)),
            ("satisfaction_proxy", "absent" if self.satisfaction is None else f(self.satisfaction)),
            ("resource_seconds", f(self.resource_seconds)),
        ]
        for kind, s in self.latency.items():
            out += [(f"latency.{kind}.count", str(s.count)), (f"latency.{kind}.mean_ms", f(s.mean)),
                    (f"latency.{kind}.p50_ms", f(s.p50)), (f"latency.{kind}.p95_ms", f(s.p95)),
                    (f"latency.{kind}.p99_ms", f(s.p99)), (f"latency.{kind}.max_ms", f(s.max))]
        for k in sorted(self.extra):
            out.append((k, str(self.extra[k])))
        return out

    def csv_rows(self) -> list[tuple]:
        arch = self.architecture.lower()
        rows = []
        for kind, s in self.latency.items():
            for metric in ("count", "mean", "p50", "p95", "p99", "max"):
                name = metric if metric == "count" else f"latency_{metric}_ms"
                val = getattr(s, metric)
                rows.append((arch, kind, name, val if metric == "count" else _fmt(val)))
        for name, val in (("generated", self.generated), ("completed", self.completed),
                          ("shed", self.shed), ("failed", self.failed),
                          ("filtered", self.filtered), ("in_flight", self.in_flight),
                          ("throughput_rps", _fmt(self.throughput)),
                          ("response_time_mean_ms", _fmt(self.response_time_mean)),
                          ("satisfaction_proxy", "" if self.satisfaction is None else _fmt(self.satisfaction)),
                          ("resource_seconds", _fmt(self.resource_seconds))):
            rows.append((arch, "ALL", name, val))
        return rows

    @classmethod
    def from_text(cls, text: str) -> "ScenarioReport":
        kv = {}
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            key, _, val = line.partition(" = ")
            kv[key.strip()] = val.strip()
        latency = {}
        kinds = dict.fromkeys(k.split(".")[1] for k in kv if k.startswith("latency."))
        for kind in kinds:
            p = f"latency.{kind}."
            latency[kind] = LatencyStats(int(kv[p + "count"]), float(kv[p + "mean_ms"]),
                                         float(kv[p + "p50_ms"]), float(kv[p + "p95_ms"]),
                                         float(kv[p + "p99_ms"]), float(kv[p + "max_ms"]))
        sat = kv.get("satisfaction_proxy", "absent")
        return cls(
            scenario=kv["scenario"], architecture=kv["architecture"], seed=int(kv["seed"]),
            config_hash=kv["config_hash"], workload_hash=kv["workload_hash"],
            horizon_us=int(round(float(kv["horizon_s"]) * US_PER_S)),
            generated=int(kv["generated"]), completed=int(kv["completed"]),
            shed=int(kv["shed"]), failed=int(kv["failed"]), filtered=int(kv["filtered"]),
            in_flight=int(kv["in_flight"]), latency=latency,
            throughput=float(kv["throughput_rps"]),
            response_time_mean=float(kv["response_time_mean_ms"]),
            response_p95=float(kv["response_time_p95_ms"]),
            satisfaction=None if sat == "absent" else float(sat),
            resource_seconds=float(kv["resource_seconds"]),
            extra={k: v for k, v in kv.items() if k not in BASE_KEYS and not k.startswith("latency.")},
        )


def _fmt(x: float) -> str:
    return f"{x + 0.0:.6f}"  # folds -0.0 into 0.0


def build_report(collector: Collector, *, scenario: str, architecture: str, seed: int,
                 config_hash: str, workload_hash: str, horizon_us: int, slo: int,
                 w_slo: float = 0.7, w_completion: float = 0.3,
                 resource_seconds: float = 0.0, extra: Optional[dict] = None) -> ScenarioReport:
    c = collector
    latency = {"ALL": LatencyStats.of(c.all_latency())}
    for k in KINDS:
        latency[k.value] = LatencyStats.of(c.latency[k])
    resp = sorted(c.all_response())
    in_flight = c.generated - c.completed - c.shed - c.failed - c.filtered
    return ScenarioReport(
        scenario=scenario, architecture=architecture, seed=seed, config_hash=config_hash,
        workload_hash=workload_hash, horizon_us=horizon_us, generated=c.generated,
        completed=c.completed, shed=c.shed, failed=c.failed, filtered=c.filtered,
        in_flight=in_flight, latency=latency,
        throughput=c.completed / (horizon_us / US_PER_S) if horizon_us else 0.0,
        response_time_mean=(sum(resp) / len(resp) / US_PER_MS) if resp else 0.0,
        response_p95=(percentile(resp, 95) / US_PER_MS) if resp else 0.0,
        satisfaction=satisfaction(resp, c.generated, slo, w_slo, w_completion),
        resource_seconds=resource_seconds, extra=dict(extra or {}),
    )


@dataclass
class Comparison:
    scenario: str
    seed: int
    latency_reduction: float      # percent
    throughput_gain: float
    satisfaction_gain: Optional[float]
    response_time_reduction: float
    baseline_hash: str = ""
    edge_hash: str = ""

    def to_text(self) -> str:
        f = _fmt
        sat = "absent" if self.satisfaction_gain is None else f(self.satisfaction_gain)
        return "\n".join([
            "# edgesim comparison: edge vs centralized baseline (percent)",
            "# satisfaction_gain uses the satisfaction proxy score",
            f"scenario = {self.scenario}",
            f"seed = {self.seed}",
            f"baseline_config_hash = {self.baseline_hash}",
            f"edge_config_hash = {self.edge_hash}",
            f"latency_reduction_pct = {f(self.latency_reduction)}",
            f"throughput_gain_pct = {f(self.throughput_gain)}",
            f"satisfaction_gain_pct = {sat}",
            f"response_time_reduction_pct = {f(self.response_time_reduction)}",
        ]) + "\n"

    def csv_rows(self) -> list[tuple]:
        sat = "" if self.satisfaction_gain is None else _fmt(self.satisfaction_gain)
        return [("comparison", "ALL", "latency_reduction_pct", _fmt(self.latency_reduction)),
                ("comparison", "ALL", "throughput_gain_pct", _fmt(self.throughput_gain)),
                ("comparison", "ALL", "satisfaction_gain_pct", sat),
                ("comparison", "ALL", "response_time_reduction_pct",
                 _fmt(self.response_time_reduction))]


def _rel(new: float, old: float) -> float:
    if old == 0:
        return 0.0 if new == 0 else math.copysign(math.inf, new)
    return (new - old) / old * 100.0


def compare(baseline: ScenarioReport, edge: ScenarioReport) -> Comparison:
    if baseline.seed != edge.seed:
        raise ComparisonError(f"seeds differ: {baseline.seed} vs {edge.seed}")
    if baseline.workload_hash != edge.workload_hash:
        raise ComparisonError("workload profiles differ; not a matched experiment")
    b, e = baseline.latency["ALL"].mean, edge.latency["ALL"].mean
    sat = None
    if baseline.satisfaction is not None and edge.satisfaction is not None:
        sat = _rel(edge.satisfaction, baseline.satisfaction)
    return Comparison(
        scenario=edge.scenario, seed=edge.seed,
        latency_reduction=-_rel(e, b) if b else 0.0,
        throughput_gain=_rel(edge.throughput, baseline.throughput),
        satisfaction_gain=sat,
        response_time_reduction=-_rel(edge.response_time_mean, baseline.response_time_mean)
        if baseline.response_time_mean else 0.0,
        baseline_hash=baseline.config_hash, edge_hash=edge.config_hash,
    )
