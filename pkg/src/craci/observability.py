"""Observability and lifecycle pillars.

Trace spans use logical ticks. Leaf spans are classified as processing or
communication; queue waiting at a shared service is recorded as
communication because it is coordination cost, not service work.

Manifests describe desired service placement. ``reconcile`` turns a pair of
manifests into the minimal action list that moves one into the other, and
``ManifestRepository`` keeps versioned manifest files in a directory that
acts as the source of truth.
"""

from __future__ import annotations

import hashlib
import json
import threading
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

from .errors import MalformedSpan, UnknownTrace, VersionRegression


class SpanKind(str, Enum):
    PROCESSING = "processing"
    COMMUNICATION = "communication"


@dataclass(frozen=True)
class TraceContext:
    trace_id: str
    parent_span_id: str | None = None


@dataclass(frozen=True)
class TraceSpan:
    trace_id: str
    span_id: str
    parent_span_id: str | None
    kind: SpanKind
    start: int | float
    end: int | float
    component: str = ""

    @property
    def duration(self):
        return self.end - self.start

    def to_dict(self) -> dict:
        return {"trace_id": self.trace_id, "span_id": self.span_id,
                "parent_span_id": self.parent_span_id, "kind": self.kind.value,
                "start": self.start, "end": self.end, "component": self.component}


@dataclass(frozen=True)
class LatencyBreakdown:
    total: float
    processing: float
    communication: float
    unattributed: float

    @property
    def communication_share(self) -> float:
        busy = self.processing + self.communication
        return self.communication / busy if busy else 0.0

    @property
    def coverage(self) -> float:
        if self.total == 0:
            return 1.0
        return (self.processing + self.communication) / self.total


class TraceStore:
    """Thread-safe span store.

    Parents must be recorded before their children. Children must lie inside
    the parent interval and must not overlap their siblings, which keeps the
    leaf sum bounded by the root duration.
    """

    def __init__(self):
        self._spans: dict[str, dict[str, TraceSpan]] = defaultdict(dict)
        self._children: dict[tuple[str, str], list[TraceSpan]] = defaultdict(list)
        self._roots: dict[str, TraceSpan] = {}
        self._lock = threading.Lock()

    def record_span(self, span: TraceSpan) -> None:
        if not isinstance(span.kind, SpanKind):
            raise MalformedSpan(f"unknown span kind {span.kind!r}")
        if span.end < span.start:
            raise MalformedSpan(f"span {span.span_id} ends before it starts")
        with self._lock:
            spans = self._spans[span.trace_id]
            if span.span_id in spans:
                raise MalformedSpan(f"duplicate span id {span.span_id}")
            if span.parent_span_id is None:
                if span.trace_id in self._roots:
                    raise MalformedSpan(f"trace {span.trace_id} already has a root")
                self._roots[span.trace_id] = span
            else:
                parent = spans.get(span.parent_span_id)
                if parent is None:
                    raise MalformedSpan(f"unknown parent {span.parent_span_id}")
                if span.start < parent.start or span.end > parent.end:
                    raise MalformedSpan(f"span {span.span_id} escapes its parent")
                for sib in self._children[(span.trace_id, parent.span_id)]:
                    if span.start < sib.end and sib.start < span.end:
                        raise MalformedSpan(f"span {span.span_id} overlaps {sib.span_id}")
                self._children[(span.trace_id, parent.span_id)].append(span)
            spans[span.span_id] = span

    def spans(self, trace_id: str) -> list[TraceSpan]:
        with self._lock:
            if trace_id not in self._spans:
                raise UnknownTrace(trace_id)
            return list(self._spans[trace_id].values())

    def trace_ids(self) -> list[str]:
        with self._lock:
            return list(self._spans)

    def parent_links(self, trace_id: str) -> dict[str, str | None]:
        return {s.span_id: s.parent_span_id for s in self.spans(trace_id)}

    def decompose_latency(self, trace_id: str) -> LatencyBreakdown:
        with self._lock:
            root = self._roots.get(trace_id)
            if root is None:
                raise UnknownTrace(trace_id)
            spans = list(self._spans[trace_id].values())
            parents = {s.parent_span_id for s in spans if s.parent_span_id is not None}
        sums = {SpanKind.PROCESSING: 0, SpanKind.COMMUNICATION: 0}
        for s in spans:
            if s.span_id not in parents:
                sums[s.kind] += s.duration
        proc, comm = sums[SpanKind.PROCESSING], sums[SpanKind.COMMUNICATION]
        return LatencyBreakdown(root.duration, proc, comm, root.duration - proc - comm)

    def export_jsonl(self) -> str:
        lines = []
        for tid in self.trace_ids():
            for s in self.spans(tid):
                lines.append(json.dumps(s.to_dict(), sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")


class Metrics:
    """Named monotone counters."""

    def __init__(self):
        self._counts = Counter()
        self._lock = threading.Lock()

    def inc(self, name: str, by: int = 1) -> None:
        with self._lock:
            self._counts[name] += by

    def get(self, name: str) -> int:
        return self._counts[name]

    def snapshot(self) -> dict:
        with self._lock:
            return dict(self._counts)


# -------------------------------------------------------------- lifecycle

def _config_hash(placements: dict) -> str:
    body = json.dumps(placements, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(body.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Manifest:
    version: int
    placements: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return _config_hash(self.placements)

    def with_placement(self, service: str, location: str | None) -> "Manifest":
        placements = dict(self.placements)
        if location is None:
            placements.pop(service, None)
        else:
            placements[service] = location
        return Manifest(self.version + 1, placements)

    def to_dict(self) -> dict:
        return {"version": self.version, "placements": dict(sorted(self.placements.items()))}

    @classmethod
    def from_dict(cls, doc: dict) -> "Manifest":
        return cls(int(doc["version"]), dict(doc.get("placements", {})))


@dataclass(frozen=True)
class Deploy:
    service: str
    to: str


@dataclass(frozen=True)
class Remove:
    service: str
    source: str


@dataclass(frozen=True)
class Move:
    service: str
    source: str
    to: str


def reconcile(current: Manifest, desired: Manifest) -> list:
    """Actions that turn ``current`` into ``desired``, one per changed service,
    ordered by service id."""
    if desired.version <= current.version:
        raise VersionRegression(
            f"desired version {desired.version} is not newer than {current.version}")
    actions = []
    for svc in sorted(set(current.placements) | set(desired.placements)):
        old = current.placements.get(svc)
        new = desired.placements.get(svc)
        if old == new:
            continue
        if old is None:
            actions.append(Deploy(svc, new))
        elif new is None:
            actions.append(Remove(svc, old))
        else:
            actions.append(Move(svc, old, new))
    return actions


def apply_actions(manifest: Manifest, actions: Iterable, version: int) -> Manifest:
    placements = dict(manifest.placements)
    for act in actions:
        if isinstance(act, Deploy):
            placements[act.service] = act.to
        elif isinstance(act, Remove):
            placements.pop(act.service, None)
        elif isinstance(act, Move):
            placements[act.service] = act.to
        else:
            raise TypeError(f"unknown action {act!r}")
    return Manifest(version, placements)


def action_to_dict(act) -> dict:
    if isinstance(act, Deploy):
        return {"op": "deploy", "service": act.service, "to": act.to}
    if isinstance(act, Remove):
        return {"op": "remove", "service": act.service, "from": act.source}
    return {"op": "move", "service": act.service, "from": act.source, "to": act.to}


class ManifestRepository:
    """Directory of ``manifest-vNNNN.json`` files plus ``deployed.json``."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, version: int) -> Path:
        return self.root / f"manifest-v{version:04d}.json"

    def versions(self) -> list[int]:
        out = []
        for p in self.root.glob("manifest-v*.json"):
            out.append(int(p.stem.split("-v")[1]))
        return sorted(out)

    def commit(self, manifest: Manifest) -> Path:
        versions = self.versions()
        if versions and manifest.version <= versions[-1]:
            raise VersionRegression(f"version {manifest.version} already superseded")
        path = self._path(manifest.version)
        path.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    def load(self, version: int) -> Manifest:
        return Manifest.from_dict(json.loads(self._path(version).read_text()))

    def latest(self) -> Manifest | None:
        versions = self.versions()
        return self.load(versions[-1]) if versions else None

    def deployed(self) -> Manifest:
        path = self.root / "deployed.json"
        if not path.exists():
            return Manifest(0, {})
        return Manifest.from_dict(json.loads(path.read_text()))

    def reconcile(self) -> list:
        """Bring ``deployed.json`` to the latest committed manifest."""
        desired = self.latest()
        current = self.deployed()
        if desired is None or desired.version == current.version:
            return []
        actions = reconcile(current, desired)
        applied = apply_actions(current, actions, desired.version)
        (self.root / "deployed.json").write_text(
            json.dumps(applied.to_dict(), indent=2, sort_keys=True) + "\n")
        return actions
