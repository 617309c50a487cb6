"""Deterministic discrete-event simulation of the compute continuum.

Robots drive across rectangular edge zones and emit location telemetry
every ``telemetry_period`` ticks. Each sample is one request that travels

    robot -> gateway -> semantic -> twin -> predictor -> orchestrator

where every service instance processes one message at a time for a fixed
number of ticks. The robot uplink goes straight to its zone gateway; every
later hop is relayed by the backbone broker (a shared FIFO server at the
``backbone`` placement). Crossing a link costs that link's latency. Link
time, broker handling and queue waits are communication (coordination
cost); service work is processing. One tick reads as one millisecond.

Placement location ``edge`` means one replica per zone, serving requests
from that zone. Any zone id, ``core`` or ``cloud`` is a single instance.
"""

from __future__ import annotations

import bisect
import heapq
import itertools
import json
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .backbone import Backbone
from .errors import ConfigError, InsufficientHistory, InvalidPlacement
from .gateway import GatewayManager, GreenfieldRecord, ingest
from .geometry import Zone, grid_zones, zone_at, zone_changes
from .observability import Manifest, SpanKind, TraceContext, TraceSpan, TraceStore
from .orchestration import LinearPredictor, MigrationPlanner, RobotTrack
from .semantic import SemanticContextService, load_model, observations_from_payload
from .trust import AuditLog, PolicyEngine, TrustAuthority, load_policies, verify_audit_chain
from .twin import ArchiveSink, AssetType, Outcome, PropertySpec, TwinHub

STAGES = ("gateway", "semantic", "twin", "predictor", "orchestrator")
SPECIAL_LOCATIONS = ("edge", "core", "cloud")
DEFAULT_FLEETS = (1, 10, 50, 100, 150)

DEFAULT_PLACEMENTS = {
    "gateway": "edge",
    "semantic": "core",
    "twin": "core",
    "predictor": "edge",
    "orchestrator": "core",
    "backbone": "core",
}
DEFAULT_PROCESSING = {stage: 1 for stage in STAGES}

# Link classes; pairs not listed are filled with shortest path sums.
LINK_PROFILES = {
    "default": {"intra": 1, "edge_core": 2, "core_cloud": 10},
    "symmetric": {"intra": 3, "edge_core": 3, "core_cloud": 3, "edge_edge": 3, "edge_cloud": 3},
    "zero": {"intra": 0, "edge_core": 0, "core_cloud": 0, "edge_edge": 0, "edge_cloud": 0},
}

DEFAULT_POLICIES = [
    {"id": "ops-read-twin", "effect": "permit", "roles": ["operational-intelligence"],
     "resource": "twin.*", "action": "read"},
    {"id": "restricted-twin", "effect": "deny", "roles": ["*"],
     "resource": "twin.restricted.*", "action": "read"},
    {"id": "orch-migrate", "effect": "permit", "roles": ["orchestrator"],
     "resource": "services.*", "action": "migrate", "obligations": ["audit"]},
    {"id": "engineer-ot-write", "effect": "permit", "roles": ["ot-engineer"],
     "resource": "ot.*", "action": "write", "obligations": ["audit"]},
    {"id": "partner-export", "effect": "permit", "roles": ["data-steward"],
     "resource": "dataspace.*", "action": "export", "obligations": ["audit"]},
]


# ---------------------------------------------------------------- topology

@dataclass
class Topology:
    zones: list
    links: dict

    @property
    def locations(self) -> list[str]:
        return [z.zone_id for z in self.zones] + ["core", "cloud"]

    def latency(self, a: str, b: str):
        try:
            return self.links[(a, b)]
        except KeyError:
            raise InvalidPlacement(f"no link between {a} and {b}") from None

    def to_dict(self) -> dict:
        return {"zones": [vars(z) for z in self.zones],
                "links": [[a, b, lat] for (a, b), lat in sorted(self.links.items())]}


def build_topology(zones: list[Zone], profile) -> Topology:
    if isinstance(profile, str):
        if profile not in LINK_PROFILES:
            raise ConfigError(f"unknown link profile {profile!r}")
        profile = LINK_PROFILES[profile]
    zone_ids = [z.zone_id for z in zones]
    locs = zone_ids + ["core", "cloud"]
    inf = math.inf
    dist = {(a, b): inf for a in locs for b in locs}

    def put(a, b, v):
        if v < 0:
            raise ConfigError("link latencies must be non-negative")
        dist[(a, b)] = min(dist[(a, b)], v)
        dist[(b, a)] = min(dist[(b, a)], v)

    for loc in locs:
        put(loc, loc, profile["intra"])
    for z in zone_ids:
        put(z, "core", profile["edge_core"])
        if "edge_cloud" in profile:
            put(z, "cloud", profile["edge_cloud"])
        if "edge_edge" in profile:
            for other in zone_ids:
                if other != z:
                    put(z, other, profile["edge_edge"])
    put("core", "cloud", profile["core_cloud"])
    for k in locs:
        for a in locs:
            for b in locs:
                if a != b and dist[(a, k)] + dist[(k, b)] < dist[(a, b)]:
                    dist[(a, b)] = dist[(a, k)] + dist[(k, b)]
    return Topology(list(zones), dist)


# ------------------------------------------------------------------ config

@dataclass
class ScenarioConfig:
    seed: int = 42
    fleet_sizes: list = field(default_factory=lambda: [1])
    duration: int = 20000
    telemetry_period: int = 200
    placement: Manifest = field(default_factory=lambda: Manifest(1, dict(DEFAULT_PLACEMENTS)))
    predictor_enabled: bool = True
    prewarm_duration: int = 200
    safety_margin: int = 5
    link_profile: str = "default"
    mobility: str = "waypoint"
    noise_std: float = 0.0
    horizon: int = 1000
    speed: float = 0.0015
    floor: tuple = (10.0, 10.0)
    grid: tuple = (2, 2)
    processing_ticks: dict = field(default_factory=lambda: dict(DEFAULT_PROCESSING))
    broker_ticks: float = 0.328125
    telemetry_jitter: int = 200
    policies: list | None = None

    def validate(self) -> None:
        if not self.fleet_sizes:
            raise ConfigError("fleet_sizes must be non-empty")
        if any(int(n) < 0 for n in self.fleet_sizes):
            raise ConfigError("fleet sizes must be non-negative")
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if self.telemetry_period <= 0:
            raise ConfigError("telemetry_period must be positive")
        if self.mobility not in ("waypoint", "linear"):
            raise ConfigError(f"unknown mobility model {self.mobility!r}")
        if self.speed <= 0 or self.horizon <= 0:
            raise ConfigError("speed and horizon must be positive")
        if not 0 <= self.telemetry_jitter <= self.telemetry_period:
            raise ConfigError("telemetry_jitter must lie in [0, telemetry_period]")
        if self.broker_ticks < 0:
            raise ConfigError("broker_ticks must be >= 0")
        if self.prewarm_duration < 0 or self.safety_margin < 0 or self.noise_std < 0:
            raise ConfigError("prewarm_duration, safety_margin and noise_std must be >= 0")
        if self.policies is not None:
            try:
                load_policies(self.policies)
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"bad policy document: {exc}") from exc
        missing = set(STAGES) - set(self.processing_ticks)
        if missing:
            raise ConfigError(f"processing_ticks lacks {sorted(missing)}")
        extra = set(self.processing_ticks) - set(STAGES)
        if extra:
            raise ConfigError(f"processing_ticks names unknown stages {sorted(extra)}")
        if any(v < 0 for v in self.processing_ticks.values()):
            raise ConfigError("processing_ticks must be >= 0")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "fleet_sizes": list(self.fleet_sizes), "duration": self.duration,
            "telemetry_period": self.telemetry_period, "placement": self.placement.to_dict(),
            "predictor_enabled": self.predictor_enabled,
            "prewarm_duration": self.prewarm_duration, "safety_margin": self.safety_margin,
            "link_profile": self.link_profile, "mobility": self.mobility,
            "noise_std": self.noise_std, "horizon": self.horizon, "speed": self.speed,
            "floor": list(self.floor), "grid": list(self.grid),
            "processing_ticks": dict(self.processing_ticks),
            "broker_ticks": self.broker_ticks,
            "telemetry_jitter": self.telemetry_jitter,
            "policies": self.policies,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(doc)
        try:
            if "placement" in kwargs:
                p = kwargs["placement"]
                if "placements" not in p:
                    p = {"version": 1, "placements": p}
                kwargs["placement"] = Manifest.from_dict(p)
            if "processing_ticks" in kwargs:
                kwargs["processing_ticks"] = {**DEFAULT_PROCESSING, **kwargs["processing_ticks"]}
            for key in ("floor", "grid"):
                if key in kwargs:
                    kwargs[key] = tuple(kwargs[key])
            if "fleet_sizes" in kwargs:
                kwargs["fleet_sizes"] = [int(n) for n in kwargs["fleet_sizes"]]
            cfg = cls(**kwargs)
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg


def load_config(path) -> ScenarioConfig:
    """Read a JSON config; a string ``policies`` entry names a policy file
    relative to the config's directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        if isinstance(doc, dict) and isinstance(doc.get("policies"), str):
            doc = dict(doc, policies=json.loads((path.parent / doc["policies"]).read_text()))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return ScenarioConfig.from_dict(doc)


def topology_for(cfg: ScenarioConfig) -> Topology:
    cols, rows = cfg.grid
    zones = grid_zones(int(cols), int(rows), float(cfg.floor[0]), float(cfg.floor[1]))
    return build_topology(zones, cfg.link_profile)


def validate_placement(manifest: Manifest, topology: Topology) -> None:
    valid = set(topology.locations) | {"edge"}
    for stage in STAGES + ("backbone",):
        if stage not in manifest.placements:
            raise InvalidPlacement(f"no placement for {stage}")
    for svc, loc in manifest.placements.items():
        if loc not in valid:
            raise InvalidPlacement(f"{svc} placed at unknown location {loc!r}")


# ---------------------------------------------------------------- mobility

@dataclass
class Trajectory:
    """Piecewise-linear motion: segment i starts at ``starts[i]``."""

    starts: list
    points: list
    velocities: list

    def position(self, t: float) -> tuple:
        i = bisect.bisect_right(self.starts, t) - 1
        (x, y), (vx, vy) = self.points[i], self.velocities[i]
        dt = t - self.starts[i]
        return (x + vx * dt, y + vy * dt)

    def segments(self, until: float):
        for i, t0 in enumerate(self.starts):
            if t0 >= until:
                break
            t1 = self.starts[i + 1] if i + 1 < len(self.starts) else until
            yield t0, min(t1, until), self.points[i], self.velocities[i]


def make_trajectory(rng: random.Random, cfg: ScenarioConfig) -> Trajectory:
    w, h = cfg.floor
    x, y = rng.uniform(0, w), rng.uniform(0, h)
    starts, points, vels = [], [], []
    if cfg.mobility == "linear":
        theta = rng.uniform(0, 2 * math.pi)
        vx, vy = cfg.speed * math.cos(theta), cfg.speed * math.sin(theta)
        limits = []
        if vx > 0:
            limits.append((w - x) / vx)
        elif vx < 0:
            limits.append(-x / vx)
        if vy > 0:
            limits.append((h - y) / vy)
        elif vy < 0:
            limits.append(-y / vy)
        t_edge = min(limits) if limits else math.inf
        starts += [0.0, t_edge]
        points += [(x, y), (min(max(x + vx * t_edge, 0.0), w), min(max(y + vy * t_edge, 0.0), h))]
        vels += [(vx, vy), (0.0, 0.0)]
        return Trajectory(starts, points, vels)
    t = 0.0
    while t < cfg.duration:
        tx, ty = rng.uniform(0, w), rng.uniform(0, h)
        dist = math.hypot(tx - x, ty - y)
        if dist == 0:
            continue
        dur = dist / cfg.speed
        starts.append(t)
        points.append((x, y))
        vels.append(((tx - x) / dur, (ty - y) / dur))
        t += dur
        x, y = tx, ty
    starts.append(t)
    points.append((x, y))
    vels.append((0.0, 0.0))
    return Trajectory(starts, points, vels)


def ground_truth_crossings(traj: Trajectory, zones, until: float) -> list[tuple[float, str]]:
    current = zone_at(zones, *traj.points[0])
    out = []
    for t0, t1, p, v in traj.segments(until):
        start_zone = zone_at(zones, *p)
        if start_zone is not None and start_zone != current:
            out.append((t0, start_zone))
            current = start_zone
        if v == (0.0, 0.0):
            continue
        for dt, zone in zone_changes(zones, p, v, t1 - t0):
            if zone is None or zone == current:
                continue
            if t0 + dt >= until:
                break
            out.append((t0 + dt, zone))
            current = zone
    return out


# ------------------------------------------------------------------ report

@dataclass(frozen=True)
class HandoverRecord:
    robot_id: str
    at: float
    from_zone: str
    to_zone: str
    gap: float
    lead_time: float
    proactive: bool


@dataclass
class FleetReport:
    fleet: int
    requests: int = 0
    latency_min: float = math.nan
    latency_mean: float = math.nan
    latency_p95: float = math.nan
    latency_max: float = math.nan
    proc_ticks: float = math.nan
    comm_ticks: float = math.nan
    comm_share: float = 0.0
    unattributed: float = 0.0
    min_coverage: float = 1.0
    mean_gap: float = math.nan
    max_gap: float = math.nan
    migrations: int = 0
    proactive_migrations: int = 0
    audit_records: int = 0
    denies: int = 0
    observations: int = 0
    applied: int = 0
    rejected_stale: int = 0
    rejected_schema: int = 0
    quarantined: int = 0
    backbone_messages: int = 0
    invariant_violations: list = field(default_factory=list)
    latencies: dict = field(default_factory=dict, repr=False)
    breakdowns: dict = field(default_factory=dict, repr=False)
    handovers: list = field(default_factory=list, repr=False)
    artifacts: dict = field(default_factory=dict, repr=False)


CSV_COLUMNS = ("fleet", "requests", "mean", "p95", "max", "proc_ticks", "comm_ticks",
               "comm_share", "mean_gap", "migrations")


def _fmt(x) -> str:
    if isinstance(x, int):
        return str(x)
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.6f}"


@dataclass
class ScenarioReport:
    config: ScenarioConfig
    fleets: list

    def to_csv(self) -> str:
        lines = [",".join(CSV_COLUMNS)]
        for f in self.fleets:
            row = [f.fleet, f.requests, f.latency_mean, f.latency_p95, f.latency_max,
                   f.proc_ticks, f.comm_ticks, f.comm_share, f.mean_gap, f.migrations]
            lines.append(",".join(_fmt(v) for v in row))
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        cfg = self.config
        out = [f"craci scenario  seed={cfg.seed} profile={cfg.link_profile} "
               f"mobility={cfg.mobility} predictor={'on' if cfg.predictor_enabled else 'off'}",
               f"duration={cfg.duration} ticks (1 tick = 1 ms)  telemetry_period={cfg.telemetry_period}"
               f"  prewarm={cfg.prewarm_duration}  margin={cfg.safety_margin}", ""]
        for f in self.fleets:
            out.append(f"fleet {f.fleet:>4}: {f.requests} requests")
            if f.requests:
                out.append(f"  latency ticks  min {f.latency_min:.1f}  mean {f.latency_mean:.2f}"
                           f"  p95 {f.latency_p95:.2f}  max {f.latency_max:.1f}")
                out.append(f"  per request    processing {f.proc_ticks:.3f}  communication "
                           f"{f.comm_ticks:.3f}  share {f.comm_share:.2%}")
            out.append(f"  migrations     {f.migrations} ({f.proactive_migrations} proactive)"
                       f"  mean gap {_fmt(f.mean_gap) or '-'}  max gap {_fmt(f.max_gap) or '-'}")
            out.append(f"  observations   {f.observations}: applied {f.applied}, stale "
                       f"{f.rejected_stale}, schema {f.rejected_schema}, quarantined {f.quarantined}")
            out.append(f"  audit records  {f.audit_records} ({f.denies} denies)")
            if f.invariant_violations:
                out.append("  INVARIANT VIOLATIONS:")
                out.extend(f"    - {v}" for v in f.invariant_violations)
        return "\n".join(out) + "\n"

    @property
    def invariant_violations(self) -> list:
        return [f"fleet {f.fleet}: {v}" for f in self.fleets for v in f.invariant_violations]


# --------------------------------------------------------------- simulation

@dataclass
class _Request:
    key: tuple
    robot: int
    zone: str
    emitted_at: int
    record: GreenfieldRecord
    trace_id: str
    spans: list = field(default_factory=list)
    envelope: object = None
    predicted: bool = False
    prediction: object = None


class _Server:
    __slots__ = ("free_at",)

    def __init__(self):
        self.free_at = -math.inf


def _information_model(fleet: int, cfg: ScenarioConfig) -> dict:
    w, h = cfg.floor
    return {
        "types": [{"type_id": "amr", "properties": [
            {"name": "pos_x", "unit": "m", "range": [0.0, w], "label": "position.x"},
            {"name": "pos_y", "unit": "m", "range": [0.0, h], "label": "position.y"}]}],
        "assets": [{"asset_id": f"amr-{i}", "type_id": "amr"} for i in range(1, fleet + 1)],
        "relations": [{"kind": "part-of", "source": f"amr-{i}", "target": "fleet"}
                      for i in range(1, fleet + 1)],
    }


class _Simulation:
    def __init__(self, cfg: ScenarioConfig, topology: Topology, fleet: int):
        self.cfg = cfg
        self.topo = topology
        self.fleet = fleet
        self.zones = topology.zones
        self.zone_ids = [z.zone_id for z in topology.zones]
        self.placement = cfg.placement
        validate_placement(self.placement, topology)
        token_ttl = 10 * (cfg.duration + cfg.telemetry_period) + 100_000

        self.authority = TrustAuthority()
        self.audit = AuditLog()
        self.engine = PolicyEngine(self.authority, load_policies(cfg.policies or DEFAULT_POLICIES),
                                   self.audit)
        self.backbone = Backbone(self.authority)
        tok = self.authority.issue_token
        self.tokens = {
            "semantic": tok("semantic-context", {"context-service"}, token_ttl, 0),
            "twin": tok("twin-hub", {"asset-representation"}, token_ttl, 0),
            "predictor": tok("predictor", {"operational-intelligence"}, token_ttl, 0),
            "orchestrator": tok("orchestrator", {"orchestrator"}, token_ttl, 0),
        }
        self.gateways = GatewayManager()
        for z in self.zone_ids:
            self.gateways.register(f"gw-{z}", z, tok(f"gw-{z}", {"edge-gateway"}, token_ttl, 0), 0)

        self.model = load_model(_information_model(fleet, cfg))
        self.semantic = SemanticContextService(self.model, self.backbone, self.tokens["semantic"])
        self.twin = TwinHub(self.backbone, self.tokens["twin"], guard=self.engine)
        self.twin.register_type(AssetType("amr", 1, (PropertySpec("position.x", "m"),
                                                     PropertySpec("position.y", "m"))))

        self.sem_subs = {z: self.backbone.subscribe("semantic-context", f"telemetry.{z}.*")
                         for z in self.zone_ids}
        self.twin_subs = {z: self.backbone.subscribe("twin-hub", f"context.{z}.*")
                          for z in self.zone_ids}
        self.archive = ArchiveSink(self.backbone, [f"context.{z}.*" for z in self.zone_ids])
        self.quarantine_subs = [self.backbone.subscribe("quarantine-monitor", f"quarantine.{z}.*")
                                for z in self.zone_ids]
        self.change_sub = self.backbone.subscribe("predictor", "twin.changes.*")
        self.migration_sub = self.backbone.subscribe("migration-monitor", "orchestration.migration.*")

        self.predictor = LinearPredictor()
        self.tracks: dict[int, RobotTrack] = {}
        self.servers: dict[tuple, _Server] = {}
        self.traces = TraceStore()
        self.heap: list = []
        self._seq = itertools.count()
        self.changes: dict[str, list[int]] = {}
        self.handovers: list[HandoverRecord] = []
        self.completed: dict[tuple, float] = {}
        self.breakdowns: dict[tuple, object] = {}
        self.counts = {"observations": 0, Outcome.APPLIED: 0, Outcome.REJECTED_STALE: 0,
                       Outcome.REJECTED_SCHEMA: 0, "quarantined": 0, "twin_received": 0}

        placements = dict(self.placement.placements)
        self.trajectories = {}
        self.noise = {}
        self.jitter = {}
        self.phases = {}
        for i in range(1, fleet + 1):
            rng = random.Random(f"{cfg.seed}:robot:{i}")
            self.phases[i] = rng.randrange(cfg.telemetry_period)
            self.trajectories[i] = make_trajectory(rng, cfg)
            self.noise[i] = random.Random(f"{cfg.seed}:noise:{i}")
            self.jitter[i] = random.Random(f"{cfg.seed}:jitter:{i}")
            start_zone = zone_at(self.zones, *self.trajectories[i].points[0])
            placements[f"session.amr-{i}"] = start_zone
            self.twin.instantiate(("amr", 1), f"amr-{i}", start_zone)
        self.planner = MigrationPlanner(
            Manifest(self.placement.version, placements), cfg.prewarm_duration, cfg.safety_margin,
            backbone=self.backbone, identity=self.tokens["orchestrator"], guard=self.engine)

    # -- event plumbing
    def _push(self, t, prio, fn, *args):
        heapq.heappush(self.heap, (t, prio, next(self._seq), fn, args))

    def _location(self, stage: str, req: _Request) -> str:
        loc = self.placement.placements[stage]
        return req.zone if loc == "edge" else loc

    def _span(self, req, kind, start, end, component):
        if end > start:
            req.spans.append((kind, start, end, component))

    # -- stages
    def _slot_time(self, robot: int, k: int):
        cfg = self.cfg
        t = self.phases[robot] + k * cfg.telemetry_period
        if cfg.telemetry_jitter:
            t += self.jitter[robot].randrange(cfg.telemetry_jitter)
        return t

    def _emit(self, robot: int, k: int):
        cfg = self.cfg
        t = self._now
        if self.phases[robot] + (k + 1) * cfg.telemetry_period < cfg.duration:
            self._push(self._slot_time(robot, k + 1), 2, self._emit, robot, k + 1)
        x, y = self.trajectories[robot].position(t)
        zone = zone_at(self.zones, x, y)
        if cfg.noise_std:
            rng = self.noise[robot]
            x += rng.gauss(0.0, cfg.noise_std)
            y += rng.gauss(0.0, cfg.noise_std)
        device = f"amr-{robot}"
        record = GreenfieldRecord(device, {"pos_x": (x * 1000.0, "mm"), "pos_y": (y * 1000.0, "mm")}, t)
        req = _Request((robot, k), robot, zone, t, record, f"t-{robot}-{k}")
        self.counts["observations"] += len(record.named_values)
        self._hop(req, "robot", zone, "gateway", t)

    def _hop(self, req: _Request, src_name: str, src_loc: str, stage: str, t):
        """Send ``req`` to ``stage``. Robot uplinks go straight to the gateway;
        every other hop is relayed by the backbone broker."""
        dst = self._location(stage, req)
        if src_name == "robot":
            self._link(req, src_name, src_loc, stage, dst, t, self._arrive)
            return
        broker = self.placement.placements["backbone"]
        self._link(req, src_name, src_loc, "backbone", broker, t, self._relay, stage)

    def _link(self, req, src_name, src_loc, dst_name, dst_loc, t, then, *extra):
        lat = self.topo.latency(src_loc, dst_loc)
        self._span(req, SpanKind.COMMUNICATION, t, t + lat, f"link:{src_name}->{dst_name}")
        self._push(t + lat, 1, then, req, dst_name if not extra else extra[0], dst_loc)

    def _relay(self, req: _Request, stage: str, broker: str):
        t = self._now
        server = self.servers.setdefault(("backbone", broker), _Server())
        start = max(t, server.free_at)
        done = start + self.cfg.broker_ticks
        server.free_at = done
        self._span(req, SpanKind.COMMUNICATION, t, start, f"queue:backbone@{broker}")
        self._span(req, SpanKind.COMMUNICATION, start, done, f"backbone@{broker}")
        self._push(done, 0, self._forward, req, stage, broker)

    def _forward(self, req: _Request, stage: str, broker: str):
        dst = self._location(stage, req)
        self._link(req, "backbone", broker, stage, dst, self._now, self._arrive)

    def _arrive(self, req: _Request, stage: str, loc: str):
        t = self._now
        server = self.servers.setdefault((stage, loc), _Server())
        start = max(t, server.free_at)
        done = start + self.cfg.processing_ticks[stage]
        server.free_at = done
        self._span(req, SpanKind.COMMUNICATION, t, start, f"queue:{stage}@{loc}")
        self._span(req, SpanKind.PROCESSING, start, done, f"{stage}@{loc}")
        self._push(done, 0, self._done, req, stage, loc)

    def _done(self, req: _Request, stage: str, loc: str):
        now = self._now
        getattr(self, f"_work_{stage}")(req, now)
        idx = STAGES.index(stage)
        if idx + 1 < len(STAGES):
            self._hop(req, stage, loc, STAGES[idx + 1], now)
        else:
            self._complete(req, now)

    def _work_gateway(self, req: _Request, now):
        gw_id = f"gw-{req.zone}"
        reg = self.gateways.heartbeat(gw_id, now)
        env = ingest(req.record, reg, self.backbone, now=now,
                     trace=TraceContext(req.trace_id, "root"))
        got = self.backbone.poll(self.sem_subs[reg.zone], max=1)
        assert got and got[0].id == env.id
        req.envelope = got[0]

    def _work_semantic(self, req: _Request, now):
        good, bad = self.semantic.handle(req.envelope, req.record, now=now)
        zone = req.envelope.topic.split(".")[1]
        if bad is not None:
            self.counts["quarantined"] += len(json.loads(bad.payload))
        req.envelope = None
        if good is not None:
            got = self.backbone.poll(self.twin_subs[zone], max=1)
            assert got and got[0].id == good.id
            req.envelope = got[0]

    def _work_twin(self, req: _Request, now):
        if req.envelope is None:
            return
        for obs in observations_from_payload(req.envelope.payload):
            self.counts["twin_received"] += 1
            result = self.twin.apply_observation(obs.asset_id, obs, now=now)
            self.counts[result.outcome] += 1
            if result.change is not None:
                self.changes.setdefault(obs.asset_id, []).append(result.change.state_version)

    def _work_predictor(self, req: _Request, now):
        while self.backbone.poll(self.change_sub, max=1024):
            pass
        instance = f"amr-{req.robot}"
        snap = self.twin.query_state(instance, self.tokens["predictor"], now=now)
        if "position.x" not in snap.state or "position.y" not in snap.state:
            return
        (x, tx), (y, ty) = snap.state["position.x"], snap.state["position.y"]
        at = min(tx, ty)
        track = self.tracks.get(req.robot)
        if track is None:
            track = self.tracks[req.robot] = RobotTrack(instance, (x, y), at)
            track.observe((x, y), at, self.zones)
        elif at > track.at:
            track.observe((x, y), at, self.zones)
        else:
            return
        try:
            req.prediction = self.predictor.predict(track, self.zones, self.cfg.horizon)
        except InsufficientHistory:
            return
        req.predicted = True

    def _work_orchestrator(self, req: _Request, now):
        if self.cfg.predictor_enabled and req.predicted:
            self.planner.update(f"amr-{req.robot}", f"session.amr-{req.robot}", req.prediction, now)

    def _complete(self, req: _Request, now):
        root = TraceSpan(req.trace_id, "root", None, SpanKind.COMMUNICATION, req.emitted_at, now,
                         "request")
        self.traces.record_span(root)
        for i, (kind, start, end, comp) in enumerate(req.spans):
            self.traces.record_span(TraceSpan(req.trace_id, f"s{i}", "root", kind, start, end, comp))
        self.completed[req.key] = now - req.emitted_at
        self.breakdowns[req.key] = self.traces.decompose_latency(req.trace_id)

    def _cross(self, robot: int, zone: str):
        now = self._now
        robot_id, svc = f"amr-{robot}", f"session.amr-{robot}"
        source = self.planner.manifest.placements[svc]
        if source == zone:
            return
        plan = self.planner.active_plan(robot_id, svc) if self.cfg.predictor_enabled else None
        if plan is not None and plan.to_zone == zone and plan.from_zone == source:
            plan = self.planner.execute_handover(plan, now)
            proactive = True
        else:
            plan = self.planner.cold_handover(robot_id, svc, source, zone, now)
            proactive = False
        self.twin.relocate(robot_id, zone)
        self.handovers.append(HandoverRecord(robot_id, now, source, zone, plan.gap,
                                             now - plan.created_at, proactive))

    # -- main loop
    def run(self) -> FleetReport:
        cfg = self.cfg
        for i in range(1, self.fleet + 1):
            if self.phases[i] < cfg.duration:
                self._push(self._slot_time(i, 0), 2, self._emit, i, 0)
            for t, zone in ground_truth_crossings(self.trajectories[i], self.zones, cfg.duration):
                self._push(t, 3, self._cross, i, zone)
        while self.heap:
            t, _, _, fn, args = heapq.heappop(self.heap)
            self._now = t
            fn(*args)
        self.archive.drain()
        return self._report()

    def _report(self) -> FleetReport:
        rep = FleetReport(self.fleet)
        keys = sorted(self.completed)
        rep.requests = len(keys)
        rep.latencies = {k: self.completed[k] for k in keys}
        rep.breakdowns = {k: self.breakdowns[k] for k in keys}
        if keys:
            lat = np.array([self.completed[k] for k in keys], dtype=float)
            rep.latency_min, rep.latency_max = float(lat.min()), float(lat.max())
            rep.latency_mean = float(lat.mean())
            rep.latency_p95 = float(np.percentile(lat, 95))
            proc = sum(self.breakdowns[k].processing for k in keys)
            comm = sum(self.breakdowns[k].communication for k in keys)
            rep.proc_ticks = proc / len(keys)
            rep.comm_ticks = comm / len(keys)
            rep.comm_share = comm / (proc + comm) if proc + comm else 0.0
            rep.unattributed = sum(self.breakdowns[k].unattributed for k in keys) / len(keys)
            rep.min_coverage = min(self.breakdowns[k].coverage for k in keys)
        rep.handovers = list(self.handovers)
        rep.migrations = len(self.handovers)
        rep.proactive_migrations = sum(h.proactive for h in self.handovers)
        if self.handovers:
            gaps = [h.gap for h in self.handovers]
            rep.mean_gap = sum(gaps) / len(gaps)
            rep.max_gap = max(gaps)
        rep.audit_records = len(self.audit)
        rep.denies = sum(1 for r in self.audit.records if r.decision == "deny")
        rep.observations = self.counts["observations"]
        rep.applied = self.counts[Outcome.APPLIED]
        rep.rejected_stale = self.counts[Outcome.REJECTED_STALE]
        rep.rejected_schema = self.counts[Outcome.REJECTED_SCHEMA]
        rep.quarantined = self.counts["quarantined"]
        rep.backbone_messages = self.backbone.message_count()
        rep.invariant_violations = self._check_invariants(rep)
        rep.artifacts = {"audit": self.audit, "twin": self.twin, "traces": self.traces,
                         "manifest": self.planner.manifest, "backbone": self.backbone,
                         "archive": self.archive, "planner": self.planner}
        return rep

    def _check_invariants(self, rep: FleetReport) -> list[str]:
        bad = []
        accounted = rep.applied + rep.rejected_stale + rep.rejected_schema + rep.quarantined
        if accounted != rep.observations:
            bad.append(f"conservation: {rep.observations} observations, {accounted} accounted")
        if self.twin.history_size() != self.counts["twin_received"]:
            bad.append("history size differs from observations received by the twin hub")
        for iid, versions in self.changes.items():
            if versions != list(range(1, len(versions) + 1)):
                bad.append(f"change events for {iid} are not gap-free")
                break
        for key, b in self.breakdowns.items():
            if b.coverage < 0.95 or b.processing + b.communication > b.total:
                bad.append(f"trace accounting failed for request {key}")
                break
        if not verify_audit_chain(self.audit.records).intact:
            bad.append("audit chain broken")
        if self.backbone.rejected_identity:
            bad.append(f"{self.backbone.rejected_identity} publishes without identity")
        expected = sum(
            max(0, math.ceil((self.cfg.duration - self.phases[i]) / self.cfg.telemetry_period))
            for i in range(1, self.fleet + 1))
        if rep.requests != expected:
            bad.append(f"request count {rep.requests} != {expected}")
        return bad


def run_fleet(cfg: ScenarioConfig, topology: Topology, fleet: int) -> FleetReport:
    return _Simulation(cfg, topology, fleet).run()


def run_scenario(cfg: ScenarioConfig, topology: Topology | None = None) -> ScenarioReport:
    cfg.validate()
    topology = topology or topology_for(cfg)
    validate_placement(cfg.placement, topology)
    return ScenarioReport(cfg, [run_fleet(cfg, topology, int(n)) for n in cfg.fleet_sizes])


def sweep_fleet(cfg: ScenarioConfig, topology: Topology | None = None,
                fleet_sizes=DEFAULT_FLEETS) -> ScenarioReport:
    return run_scenario(replace(cfg, fleet_sizes=list(fleet_sizes)), topology)


@dataclass
class PlacementComparison:
    fleet: int
    edge_latencies: dict
    cloud_latencies: dict

    @property
    def deltas(self) -> dict:
        return {k: self.cloud_latencies[k] - self.edge_latencies[k] for k in self.edge_latencies}

    @property
    def edge_always_faster(self) -> bool:
        return all(d > 0 for d in self.deltas.values())

    @property
    def mean_delta(self) -> float:
        d = list(self.deltas.values())
        return sum(d) / len(d) if d else 0.0


@dataclass
class ComparisonReport:
    config: ScenarioConfig
    fleets: list

    def to_csv(self) -> str:
        lines = ["fleet,requests,edge_mean,cloud_mean,mean_delta,min_delta,max_delta,edge_always_faster"]
        for c in self.fleets:
            d = list(c.deltas.values())
            edge = list(c.edge_latencies.values())
            cloud = list(c.cloud_latencies.values())
            row = [c.fleet, len(d),
                   sum(edge) / len(edge) if edge else math.nan,
                   sum(cloud) / len(cloud) if cloud else math.nan,
                   c.mean_delta if d else math.nan,
                   float(min(d)) if d else math.nan, float(max(d)) if d else math.nan]
            lines.append(",".join(_fmt(v) for v in row) + f",{str(c.edge_always_faster).lower()}")
        return "\n".join(lines) + "\n"


def compare_placements(cfg: ScenarioConfig, topology: Topology | None = None,
                       placements: dict | None = None) -> ComparisonReport:
    """Run the same seeded scenario with the predictor at the edge and in the cloud."""
    topology = topology or topology_for(cfg)
    if placements is None:
        placements = {
            "edge": cfg.placement.with_placement("predictor", "edge"),
            "cloud": cfg.placement.with_placement("predictor", "cloud"),
        }
    for manifest in placements.values():
        validate_placement(manifest, topology)
    out = []
    for n in cfg.fleet_sizes:
        edge = run_fleet(replace(cfg, placement=placements["edge"]), topology, int(n))
        cloud = run_fleet(replace(cfg, placement=placements["cloud"]), topology, int(n))
        out.append(PlacementComparison(int(n), edge.latencies, cloud.latencies))
    return ComparisonReport(cfg, out)
