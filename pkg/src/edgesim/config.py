"""Scenario files: YAML in, a validated :class:`ScenarioConfig` out.

Every diagnostic names the dotted path of the offending entry. The schema is
documented in ``docs/config_schema.md``.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .engine import ms, seconds
from .inventory import InventoryParams
from .network import LINK_KINDS, ConfigError, LinkClass, Site, Topology
from .orchestration import AutoscalerConfig, RoutingKind, RoutingPolicy
from .pipeline import PipelineParams, ServiceTime, StageKind, StageParams
from .workload import Peak, RequestKind, WorkloadProfile

ARCHITECTURES = ("EDGE", "CENTRALIZED", "BOTH")
DEFAULT_SERVICE_MS = {
    StageKind.INGESTION: 0.2, StageKind.FILTERING: 0.1, StageKind.AGGREGATION: 0.5,
    StageKind.ANALYSIS: 2.0, StageKind.TEMP_STORAGE: 0.3, StageKind.CLOUD_SYNC: 0.5,
}
DEFAULT_LINK_CLASSES = {
    "LAN": dict(kind="LAN", latency_ms=2, bandwidth_Bps=1e9),
    "WAN": dict(kind="WAN", latency_ms=80, bandwidth_Bps=1e8),
    "CELLULAR": dict(kind="CELLULAR", latency_ms=[20, 50], bandwidth_Bps=5e7),
}


class ConfigInvalid(ConfigError):
    def __init__(self, diagnostics: list[str]):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = diagnostics


@dataclass
class CloudSyncParams:
    interval: int = ms(100)
    retry_limit: int = 3
    backoff: int = ms(200)


@dataclass
class ScenarioConfig:
    name: str
    seed: int
    architecture: str
    topology: Topology
    edge_pipeline: PipelineParams
    cloud_pipeline: PipelineParams
    decision: str
    cloud_sync: CloudSyncParams
    flights: int
    seats_per_flight: int
    inventory: InventoryParams
    seed_foreign: bool
    owners: dict               # region -> owning edge
    routing: RoutingPolicy
    cache_capacity: int
    cache_ttl: int
    autoscaler: Optional[AutoscalerConfig]
    autoscaled_stages: tuple
    failures: list             # (node, down_at, up_at)
    workload: WorkloadProfile
    slo: int
    w_slo: float
    w_completion: float
    drain: int
    verify_log: bool
    edge_favorable: bool
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.workload.duration + self.drain

    def config_hash(self) -> str:
        return _digest(self.raw)

    def workload_hash(self) -> str:
        return _digest({"workload": self.raw.get("workload", {}),
                        "inventory": {k: self.raw.get("inventory", {}).get(k)
                                      for k in ("flights", "seats_per_flight")},
                        "regions": self.raw.get("network", {}).get("regions")})

    def home_flights(self) -> dict:
        regions = list(self.topology.regions)
        out = {r: [] for r in regions}
        for f in range(self.flights):
            out[regions[f % len(regions)]].append(f)
        return out

    def catalog(self) -> dict:
        return {f: self.seats_per_flight for f in range(self.flights)}

    def with_overrides(self, **dotted) -> "ScenarioConfig":
        raw = copy.deepcopy(self.raw)
        for path, value in dotted.items():
            set_path(raw, path, value)
        return parse_config(raw)


def _digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def set_path(raw: dict, path: str, value: Any) -> None:
    keys = path.split(".")
    node = raw
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def read_yaml(path) -> dict:
    """Parse a scenario file; errors carry the line number."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigInvalid([f"{path}: {line}parse error: {getattr(exc, 'problem', exc)}"]) from None
    if not isinstance(raw, dict):
        raise ConfigInvalid([f"{path}: top level must be a mapping"])
    return raw


def load_config(path, seed: Optional[int] = None, architecture: Optional[str] = None) -> ScenarioConfig:
    raw = read_yaml(path)
    if seed is not None:
        raw["seed"] = int(seed)
    if architecture is not None:
        raw["architecture"] = architecture.upper()
    return parse_config(raw)


def validate(path) -> list[str]:
    """Empty list when the file is a valid scenario, else diagnostics."""
    try:
        load_config(path)
    except ConfigInvalid as exc:
        return exc.diagnostics
    return []


class _Reader:
    def __init__(self):
        self.diags: list[str] = []

    def get(self, d: dict, key: str, path: str, default=None, kind=None, required=False):
        if not isinstance(d, dict):
            self.diags.append(f"{path}: expected a mapping")
            return default
        if key not in d:
            if required:
                self.diags.append(f"{path}.{key}: required")
            return default
        val = d[key]
        if kind is not None and val is not None:
            try:
                if kind is int and isinstance(val, bool):
                    raise TypeError
                val = kind(val)
            except (TypeError, ValueError):
                self.diags.append(f"{path}.{key}: expected {kind.__name__}, got {d[key]!r}")
                return default
        return val

    def duration(self, d: dict, key: str, path: str, default_ms: float) -> int:
        v = self.get(d, key, path, default_ms, float)
        if v is not None and v < 0:
            self.diags.append(f"{path}.{key}: negative duration")
            return ms(default_ms)
        return ms(v)


def _latency_range(spec, path: str, r: _Reader) -> tuple[int, int]:
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return ms(spec), ms(spec)
    if isinstance(spec, (list, tuple)) and len(spec) == 2:
        lo, hi = spec
        return ms(lo), ms(hi)
    r.diags.append(f"{path}: latency_ms must be a number or [lo, hi]")
    return 0, 0


def _service(spec: dict, path: str, kind: StageKind, r: _Reader) -> ServiceTime:
    dist = str(spec.get("dist", "fixed")) if isinstance(spec, dict) else "fixed"
    val = spec.get("service_ms", DEFAULT_SERVICE_MS[kind]) if isinstance(spec, dict) else DEFAULT_SERVICE_MS[kind]
    try:
        if dist == "fixed":
            st = ServiceTime.fixed(float(val))
        elif dist == "uniform":
            st = ServiceTime.uniform(float(val[0]), float(val[1]))
        elif dist == "exponential":
            st = ServiceTime.exponential(float(val))
        else:
            r.diags.append(f"{path}.dist: unknown distribution {dist!r}")
            return ServiceTime.fixed(DEFAULT_SERVICE_MS[kind])
    except (TypeError, ValueError, IndexError):
        r.diags.append(f"{path}.service_ms: bad value {val!r} for {dist}")
        return ServiceTime.fixed(DEFAULT_SERVICE_MS[kind])
    if st.a < 0 or st.b < st.a or (dist == "exponential" and st.a <= 0):
        r.diags.append(f"{path}.service_ms: negative or empty duration")
    return st


def _enum(cls, value, path: str, r: _Reader):
    try:
        return cls[str(value).upper()]
    except KeyError:
        r.diags.append(f"{path}: unknown value {value!r}")
        return None


def parse_config(raw: dict) -> ScenarioConfig:
    r = _Reader()
    raw = copy.deepcopy(raw)
    name = str(r.get(raw, "name", "", "scenario"))
    seed = r.get(raw, "seed", "", 0, int)
    arch = str(r.get(raw, "architecture", "", "BOTH")).upper()
    if arch not in ARCHITECTURES:
        r.diags.append(f"architecture: must be one of {', '.join(ARCHITECTURES)}")
        arch = "BOTH"
    edge_favorable = bool(r.get(raw, "edge_favorable", "", False))

    # -- network --------------------------------------------------------
    net = r.get(raw, "network", "", {}, required=True) or {}
    classes = {}
    class_specs = dict(DEFAULT_LINK_CLASSES)
    class_specs.update(r.get(net, "link_classes", "network", {}) or {})
    for cname, spec in class_specs.items():
        p = f"network.link_classes.{cname}"
        if not isinstance(spec, dict):
            r.diags.append(f"{p}: expected a mapping")
            continue
        kind = str(spec.get("kind", "")).upper()
        if kind not in LINK_KINDS:
            r.diags.append(f"{p}.kind: must be one of {', '.join(LINK_KINDS)}")
            continue
        lo, hi = _latency_range(spec.get("latency_ms", 0), f"{p}.latency_ms", r)
        bw = r.get(spec, "bandwidth_Bps", p, 1e9, float)
        loss = r.get(spec, "loss_rate", p, 0.0, float)
        try:
            classes[cname] = LinkClass(cname, kind, lo, hi, bw, loss)
        except ConfigError as exc:
            r.diags.append(f"{p}: {exc}")
    cloud_spec = r.get(net, "cloud", "network", {"id": "cloud"}) or {"id": "cloud"}
    cloud = Site(str(cloud_spec.get("id", "cloud")), float(cloud_spec.get("x", 0)),
                 float(cloud_spec.get("y", 0)))
    regions, edges = {}, {}
    for i, spec in enumerate(r.get(net, "regions", "network", [], required=True) or []):
        if not isinstance(spec, dict) or "id" not in spec:
            r.diags.append(f"network.regions[{i}]: needs an id")
            continue
        regions[str(spec["id"])] = Site(str(spec["id"]), float(spec.get("x", 0)), float(spec.get("y", 0)))
    for i, spec in enumerate(r.get(net, "edges", "network", []) or []):
        if not isinstance(spec, dict) or "id" not in spec:
            r.diags.append(f"network.edges[{i}]: needs an id")
            continue
        edges[str(spec["id"])] = Site(str(spec["id"]), float(spec.get("x", 0)), float(spec.get("y", 0)),
                                      str(spec.get("region", "")))
    topo = Topology(regions, edges, cloud)
    known = set(regions) | set(edges) | {cloud.id}
    for i, spec in enumerate(r.get(net, "links", "network", []) or []):
        p = f"network.links[{i}]"
        if not (isinstance(spec, (list, tuple)) and len(spec) == 3):
            r.diags.append(f"{p}: expected [endpoint, endpoint, link_class]")
            continue
        a, b, cname = (str(x) for x in spec)
        if a not in known or b not in known:
            r.diags.append(f"{p}: unknown endpoint in {a} <-> {b}")
            continue
        if cname not in classes:
            r.diags.append(f"{p}: unknown link class {cname!r}")
            continue
        topo.add_link(a, b, classes[cname])
    if not regions:
        r.diags.append("network.regions: at least one region is required")
    if arch in ("EDGE", "BOTH") and not edges:
        r.diags.append("network.edges: EDGE architecture needs at least one edge node")
    if regions:
        r.diags.extend(topo.diagnostics(arch, edge_favorable))

    # -- pipeline -------------------------------------------------------
    pl = r.get(raw, "pipeline", "", {}) or {}
    stage_specs = r.get(pl, "stages", "pipeline", {}) or {}
    for key in stage_specs:
        if str(key).upper() not in StageKind.__members__:
            r.diags.append(f"pipeline.stages.{key}: unknown stage")
    edge_stages, cloud_stages = {}, {}
    for kind in StageKind:
        spec = stage_specs.get(kind.name, stage_specs.get(kind.name.lower(), {})) or {}
        p = f"pipeline.stages.{kind.name}"
        service = _service(spec, p, kind, r)
        cap = r.get(spec, "capacity", p, None, int)
        placement = []
        for role in ("edge", "cloud"):
            n = r.get(spec, f"{role}_instances", p, 1, int)
            c = r.get(spec, f"{role}_capacity", p, cap, int)
            if n is not None and n < 1:
                r.diags.append(f"{p}.{role}_instances: must be >= 1")
                n = 1
            if c is not None and c < 0:
                r.diags.append(f"{p}.{role}_capacity: must be >= 0")
                c = None
            placement.append(StageParams(service, n, c))
        edge_stages[kind], cloud_stages[kind] = placement
    wcount = r.get(pl, "window_count", "pipeline", 8, int)
    if wcount is not None and wcount < 1:
        r.diags.append("pipeline.window_count: must be >= 1")
        wcount = 1
    wtimeout = r.duration(pl, "window_timeout_ms", "pipeline", 20)
    compression = r.get(pl, "compression", "pipeline", 1.0, float)
    if compression is not None and not 0 < compression <= 1:
        r.diags.append("pipeline.compression: must be in (0, 1]")
    edge_pp = PipelineParams(edge_stages, wcount, wtimeout, compression)
    cloud_pp = PipelineParams(cloud_stages, wcount, wtimeout, compression)
    decision = str(r.get(pl, "decision", "pipeline", "default"))
    if decision not in ("default", "all_local", "all_cloud"):
        r.diags.append("pipeline.decision: must be default, all_local or all_cloud")
    cs = r.get(pl, "cloud_sync", "pipeline", {}) or {}
    cloud_sync = CloudSyncParams(r.duration(cs, "interval_ms", "pipeline.cloud_sync", 100),
                                 r.get(cs, "retry_limit", "pipeline.cloud_sync", 3, int),
                                 r.duration(cs, "backoff_ms", "pipeline.cloud_sync", 200))
    if cloud_sync.interval <= 0:
        r.diags.append("pipeline.cloud_sync.interval_ms: must be > 0")

    # -- inventory ------------------------------------------------------
    inv = r.get(raw, "inventory", "", {}) or {}
    flights = r.get(inv, "flights", "inventory", 8, int)
    seats = r.get(inv, "seats_per_flight", "inventory", 100, int)
    if flights is not None and flights < 1:
        r.diags.append("inventory.flights: must be >= 1")
    if seats is not None and seats < 1:
        r.diags.append("inventory.seats_per_flight: must be >= 1")
    inv_params = InventoryParams(
        sync_interval=r.duration(inv, "sync_interval_ms", "inventory", 100),
        hold_ttl=r.duration(inv, "hold_ttl_ms", "inventory", 5000),
        commit_time=r.duration(inv, "commit_ms", "inventory", 0.1),
        retry_limit=r.get(inv, "retry_limit", "inventory", 3, int),
        request_timeout=r.duration(inv, "request_timeout_ms", "inventory", 1000),
    )
    if inv_params.sync_interval <= 0:
        r.diags.append("inventory.sync_interval_ms: must be > 0")
    if inv_params.commit_time >= inv_params.hold_ttl:
        r.diags.append("inventory.commit_ms: must be shorter than hold_ttl_ms")
    owners = {}
    explicit = r.get(inv, "owners", "inventory", {}) or {}
    for region in regions:
        if region in explicit:
            e = str(explicit[region])
            if e not in edges:
                r.diags.append(f"inventory.owners.{region}: unknown edge {e!r}")
            owners[region] = e
            continue
        local = [e for e, s in edges.items() if s.region == region]
        if local:
            owners[region] = local[0]
        else:
            reach = topo.reachable_edges(region)
            if reach:
                owners[region] = min(reach, key=lambda e: (topo.link(region, e).mean_latency, e))

    # -- orchestration --------------------------------------------------
    orch = r.get(raw, "orchestration", "", {}) or {}
    rt = r.get(orch, "routing", "orchestration", {}) or {}
    rkind = _enum(RoutingKind, rt.get("policy", "NEAREST"), "orchestration.routing.policy", r)
    routing = RoutingPolicy(rkind or RoutingKind.NEAREST,
                            r.duration(rt, "ewma_half_life_ms", "orchestration.routing", 50),
                            r.get(rt, "forecast_window", "orchestration.routing", 5, int),
                            r.duration(rt, "period_ms", "orchestration.routing", 1000))
    cache = r.get(orch, "cache", "orchestration", {}) or {}
    cache_cap = r.get(cache, "capacity", "orchestration.cache", 0, int)
    cache_ttl = r.duration(cache, "ttl_ms", "orchestration.cache", 500)
    if cache_cap is not None and cache_cap < 0:
        r.diags.append("orchestration.cache.capacity: must be >= 0")
    auto = r.get(orch, "autoscaler", "orchestration", {}) or {}
    autoscaler, scaled = None, ()
    if auto.get("enabled", False):
        p = "orchestration.autoscaler"
        mn = r.get(auto, "min_instances", p, 1, int)
        mx = r.get(auto, "max_instances", p, 16, int)
        tgt = r.get(auto, "target_utilization", p, 0.6, float)
        if mn is not None and mx is not None and mn > mx:
            r.diags.append(f"{p}: min_instances > max_instances")
        elif tgt is not None and not 0 < tgt < 1:
            r.diags.append(f"{p}.target_utilization: must be in (0, 1)")
        else:
            try:
                autoscaler = AutoscalerConfig(
                    tgt, mn, mx, r.duration(auto, "evaluation_period_ms", p, 1000),
                    r.get(auto, "forecast_window", p, 0, int),
                    r.duration(auto, "actuation_delay_ms", p, 1000),
                    r.get(auto, "tolerance", p, 0.1, float))
            except ValueError as exc:
                r.diags.append(f"{p}: {exc}")
        names = auto.get("stages", ["ANALYSIS"])
        scaled = tuple(k for k in (_enum(StageKind, s, f"{p}.stages", r) for s in names) if k)
    failures = []
    for i, spec in enumerate(r.get(orch, "failures", "orchestration", []) or []):
        p = f"orchestration.failures[{i}]"
        node = str(spec.get("node", "")) if isinstance(spec, dict) else ""
        if node not in edges and node != cloud.id:
            r.diags.append(f"{p}.node: unknown node {node!r}")
            continue
        down = r.duration(spec, "down_at_s", p, 0) * 1000
        up = r.duration(spec, "up_at_s", p, 1e12) * 1000
        failures.append((node, down, up))

    # -- workload -------------------------------------------------------
    wl = r.get(raw, "workload", "", {}, required=True) or {}
    mix = {}
    for k, v in (r.get(wl, "mix", "workload", {"AVAILABILITY_CHECK": 1.0}) or {}).items():
        kind = _enum(RequestKind, k, f"workload.mix.{k}", r)
        if kind is not None:
            try:
                mix[kind] = float(v)
            except (TypeError, ValueError):
                r.diags.append(f"workload.mix.{k}: expected a number")
    weights = r.get(wl, "region_weights", "workload", None)
    if weights is None:
        weights = {reg: 1.0 / len(regions) for reg in regions} if regions else {}
    else:
        for reg in weights:
            if reg not in regions:
                r.diags.append(f"workload.region_weights.{reg}: unknown region")
        weights = {str(k): float(v) for k, v in weights.items()}
    peaks = []
    for i, spec in enumerate(r.get(wl, "peaks", "workload", []) or []):
        p = f"workload.peaks[{i}]"
        peaks.append(Peak(seconds(r.get(spec, "start_s", p, 0.0, float)),
                          seconds(r.get(spec, "end_s", p, 0.0, float)),
                          r.get(spec, "multiplier", p, 1.0, float)))
    duration_s = r.get(wl, "duration_s", "workload", 10.0, float)
    if duration_s is not None and duration_s < 0:
        r.diags.append("workload.duration_s: negative duration")
    profile = WorkloadProfile(
        base_rate=r.get(wl, "base_rate", "workload", 100.0, float),
        duration=seconds(duration_s or 0),
        mix=mix, region_weights=weights, peaks=peaks,
        locality=r.get(wl, "locality", "workload", 1.0, float),
        irrelevant_fraction=r.get(wl, "irrelevant_fraction", "workload", 0.0, float),
        record_bytes=r.get(wl, "record_bytes", "workload", 1024, int),
        response_bytes=r.get(wl, "response_bytes", "workload", 2048, int),
    )
    r.diags.extend(profile.problems())

    # -- metrics --------------------------------------------------------
    mt = r.get(raw, "metrics", "", {}) or {}
    slo = r.duration(mt, "slo_ms", "metrics", 500)
    if slo <= 0:
        r.diags.append("metrics.slo_ms: must be > 0")
    sw = r.get(mt, "satisfaction_weights", "metrics", {}) or {}
    w_slo = r.get(sw, "slo", "metrics.satisfaction_weights", 0.7, float)
    w_comp = r.get(sw, "completion", "metrics.satisfaction_weights", 0.3, float)
    if abs(w_slo + w_comp - 1.0) > 1e-9:
        r.diags.append("metrics.satisfaction_weights: weights must sum to 1")
    drain = seconds(r.get(mt, "drain_s", "metrics", 5.0, float))
    if drain < 0:
        r.diags.append("metrics.drain_s: negative duration")
    verify_log = bool(r.get(mt, "verify_log_replay", "metrics", True))

    if r.diags:
        raise ConfigInvalid(r.diags)
    return ScenarioConfig(
        name=name, seed=seed, architecture=arch, topology=topo,
        edge_pipeline=edge_pp, cloud_pipeline=cloud_pp, decision=decision,
        cloud_sync=cloud_sync, flights=flights, seats_per_flight=seats,
        inventory=inv_params, seed_foreign=bool(inv.get("seed_foreign", True)), owners=owners,
        routing=routing, cache_capacity=cache_cap, cache_ttl=cache_ttl,
        autoscaler=autoscaler, autoscaled_stages=scaled, failures=failures,
        workload=profile, slo=slo, w_slo=w_slo, w_completion=w_comp, drain=drain,
        verify_log=verify_log, edge_favorable=edge_favorable, raw=raw,
    )


def scenario_path(name: str) -> Path:
    """Path of a scenario shipped with the package."""
    return Path(__file__).parent / "scenarios" / f"{name}.yaml"
