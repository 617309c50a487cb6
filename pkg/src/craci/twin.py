"""Digital twin hub: Type/Instance registry, live state and full history.

Conflict rule per property: last write wins by observation timestamp; an
equal timestamp is accepted, so the later publish wins the tie. History keeps
every observation the hub received, applied or not.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType

from .errors import (AccessDenied, DuplicateInstance, DuplicateTypeVersion, UnknownInstance,
                     UnknownType, UnknownVersion)

HISTORY_COLUMNS = ("instance_id", "property", "value", "unit", "timestamp",
                   "state_version_after", "verdict")


class PropertyKind(str, Enum):
    MEASUREMENT = "measurement"
    SETPOINT = "setpoint"
    STATUS = "status"


@dataclass(frozen=True)
class PropertySpec:
    name: str
    unit: str
    kind: PropertyKind = PropertyKind.MEASUREMENT


@dataclass(frozen=True)
class AssetType:
    type_id: str
    version: int
    property_schema: tuple

    def __post_init__(self):
        names = [p.name for p in self.property_schema]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate property names in {self.type_id} v{self.version}")

    def spec(self, name: str) -> PropertySpec | None:
        for p in self.property_schema:
            if p.name == name:
                return p
        return None


@dataclass
class AssetInstance:
    instance_id: str
    type_ref: tuple
    zone: str
    state: dict = field(default_factory=dict)
    state_version: int = 0


@dataclass(frozen=True)
class TwinSnapshot:
    instance_id: str
    type_ref: tuple
    state_version: int
    state: MappingProxyType

    def digest(self) -> str:
        body = json.dumps([self.instance_id, list(self.type_ref), self.state_version,
                           sorted((k, list(v)) for k, v in self.state.items())])
        return hashlib.sha256(body.encode()).hexdigest()

    def to_dict(self) -> dict:
        return {"instance_id": self.instance_id, "type_ref": list(self.type_ref),
                "state_version": self.state_version,
                "state": {k: {"value": v, "timestamp": t} for k, (v, t) in sorted(self.state.items())}}


@dataclass(frozen=True)
class ChangeEvent:
    instance_id: str
    property: str
    old_value: float | None
    new_value: float
    state_version: int


class Outcome(str, Enum):
    APPLIED = "applied"
    REJECTED_STALE = "rejected-stale"
    REJECTED_SCHEMA = "rejected-schema"


@dataclass(frozen=True)
class ApplyResult:
    outcome: Outcome
    change: ChangeEvent | None = None


@dataclass(frozen=True)
class HistoryRecord:
    instance_id: str
    observation: object
    state_version_after: int
    verdict: Outcome


class TwinHub:
    """Single source of truth for asset state.

    ``guard`` is a ``PolicyEngine``; when set, reads require a Permit for
    action ``read`` on resource ``twin.<instance>``. ``backbone`` and
    ``identity`` enable change-event publication on ``twin.changes.<instance>``.
    """

    def __init__(self, backbone=None, identity=None, guard=None):
        self.backbone = backbone
        self.identity = identity
        self.guard = guard
        self._types: dict[tuple, AssetType] = {}
        self._instances: dict[str, AssetInstance] = {}
        self._history: dict[str, list[HistoryRecord]] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()

    # -- types and instances
    def register_type(self, t: AssetType) -> tuple:
        key = (t.type_id, t.version)
        with self._registry_lock:
            if key in self._types:
                raise DuplicateTypeVersion(f"{t.type_id} v{t.version}")
            self._types[key] = t
        return key

    def get_type(self, type_id: str, version: int) -> AssetType:
        try:
            return self._types[(type_id, version)]
        except KeyError:
            raise UnknownType(f"{type_id} v{version}") from None

    def type_count(self) -> int:
        return len(self._types)

    def instantiate(self, type_ref: tuple, instance_id: str, zone: str) -> AssetInstance:
        with self._registry_lock:
            if tuple(type_ref) not in self._types:
                raise UnknownType(f"{type_ref[0]} v{type_ref[1]}")
            if instance_id in self._instances:
                raise DuplicateInstance(instance_id)
            inst = AssetInstance(instance_id, tuple(type_ref), zone)
            self._instances[instance_id] = inst
            self._history[instance_id] = []
            self._locks[instance_id] = threading.Lock()
            return inst

    def instance_ids(self) -> list[str]:
        return list(self._instances)

    def _instance(self, instance_id: str) -> AssetInstance:
        try:
            return self._instances[instance_id]
        except KeyError:
            raise UnknownInstance(instance_id) from None

    def relocate(self, instance_id: str, zone: str) -> None:
        inst = self._instance(instance_id)
        with self._locks[instance_id]:
            inst.zone = zone

    # -- live path
    def apply_observation(self, instance_id: str, obs, *, now=None) -> ApplyResult:
        inst = self._instance(instance_id)
        atype = self._types[inst.type_ref]
        with self._locks[instance_id]:
            spec = atype.spec(obs.property)
            current = inst.state.get(obs.property)
            if spec is None or spec.unit != obs.unit:
                result = ApplyResult(Outcome.REJECTED_SCHEMA)
            elif current is not None and obs.timestamp < current[1]:
                result = ApplyResult(Outcome.REJECTED_STALE)
            else:
                inst.state_version += 1
                inst.state[obs.property] = (obs.value, obs.timestamp)
                change = ChangeEvent(instance_id, obs.property,
                                     None if current is None else current[0],
                                     obs.value, inst.state_version)
                result = ApplyResult(Outcome.APPLIED, change)
            self._history[instance_id].append(
                HistoryRecord(instance_id, obs, inst.state_version, result.outcome))
        if result.change is not None and self.backbone is not None:
            c = result.change
            payload = json.dumps({"instance_id": c.instance_id, "property": c.property,
                                  "old_value": c.old_value, "new_value": c.new_value,
                                  "state_version": c.state_version},
                                 separators=(",", ":")).encode()
            self.backbone.publish(f"twin.changes.{instance_id}", payload,
                                  identity=self.identity, at=now)
        return result

    # -- reads
    def _authorize(self, token, instance_id, now):
        if self.guard is None:
            return
        decision = self.guard.authorize(token, "read", f"twin.{instance_id}", now)
        if not decision.permitted:
            raise AccessDenied(f"read twin.{instance_id}")

    def query_state(self, instance_id: str, token=None, *, at_version: int | None = None,
                    now=0) -> TwinSnapshot:
        inst = self._instance(instance_id)
        self._authorize(token, instance_id, now)
        with self._locks[instance_id]:
            if at_version is None:
                return TwinSnapshot(instance_id, inst.type_ref, inst.state_version,
                                    MappingProxyType(dict(inst.state)))
            if not 0 <= at_version <= inst.state_version:
                raise UnknownVersion(f"{instance_id}@{at_version}")
            history = list(self._history[instance_id])
        state = {}
        for rec in history:
            if rec.state_version_after > at_version:
                break
            if rec.verdict is Outcome.APPLIED:
                state[rec.observation.property] = (rec.observation.value, rec.observation.timestamp)
        return TwinSnapshot(instance_id, inst.type_ref, at_version, MappingProxyType(state))

    def state_hash(self) -> str:
        h = hashlib.sha256()
        for iid in sorted(self._instances):
            inst = self._instances[iid]
            h.update(json.dumps([iid, inst.state_version, sorted(
                (k, list(v)) for k, v in inst.state.items())]).encode())
        return h.hexdigest()

    # -- analytical path
    def history(self, instance_id: str | None = None) -> list[HistoryRecord]:
        if instance_id is not None:
            self._instance(instance_id)
            return list(self._history[instance_id])
        out = []
        for iid in sorted(self._history):
            out.extend(self._history[iid])
        return out

    def history_size(self) -> int:
        return sum(len(h) for h in self._history.values())

    def scan(self, predicate=None):
        """Read-only OLAP scan over the full history."""
        for rec in self.history():
            if predicate is None or predicate(rec):
                yield rec

    def export_history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for rec in self.history():
            o = rec.observation
            w.writerow([rec.instance_id, o.property, repr(float(o.value)), o.unit, o.timestamp,
                        rec.state_version_after, rec.verdict.value])
        return buf.getvalue()

    def export_snapshots(self) -> str:
        docs = []
        for iid in sorted(self._instances):
            inst = self._instances[iid]
            with self._locks[iid]:
                snap = TwinSnapshot(iid, inst.type_ref, inst.state_version,
                                    MappingProxyType(dict(inst.state)))
            docs.append(dict(snap.to_dict(), zone=inst.zone))
        return json.dumps(docs, indent=2, sort_keys=True) + "\n"


class ArchiveSink:
    """Second consumer of the context stream, feeding the analytical store
    without touching live twin state."""

    def __init__(self, backbone, patterns):
        self.backbone = backbone
        self.subscriptions = [backbone.subscribe("archive-sink", p) for p in patterns]
        self.rows: list = []

    def drain(self) -> int:
        n = 0
        for sub in self.subscriptions:
            while True:
                batch = self.backbone.poll(sub, max=256)
                if not batch:
                    break
                for env in batch:
                    self.rows.append((env.id, env.topic, env.published_at, env.payload))
                n += len(batch)
        return n
