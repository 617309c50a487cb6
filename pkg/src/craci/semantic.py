"""Semantic enrichment against an information model.

Model document (JSON)::

    {
      "conversions": [{"from": "F", "to": "C", "scale": 0.5555555555555556,
                       "offset": -17.77777777777778}],
      "types": [{"type_id": "oven", "properties": [
          {"name": "temp", "unit": "C", "range": [0, 300], "label": "temperature"}]}],
      "assets": [{"asset_id": "oven-1", "type_id": "oven"}],
      "relations": [{"kind": "part-of", "source": "oven-1", "target": "line-1"}]
    }

Conversions are linear (``to = from * scale + offset``); inverses are derived.
A built-in table covers common sensor units and is merged under the
document's own entries.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

from .errors import CyclicStructure, DuplicateProperty, ModelFormatError

RELATION_KINDS = ("part-of", "located-in", "feeds")

BUILTIN_CONVERSIONS = {
    ("F", "C"): (5 / 9, -160 / 9),
    ("K", "C"): (1.0, -273.15),
    ("mm", "m"): (0.001, 0.0),
    ("cm", "m"): (0.01, 0.0),
    ("bar", "kPa"): (100.0, 0.0),
    ("psi", "kPa"): (6.894757293168361, 0.0),
    ("ms", "s"): (0.001, 0.0),
    ("rpm", "hz"): (1 / 60, 0.0),
}


@dataclass(frozen=True)
class PropertyDef:
    name: str
    expected_unit: str
    value_range: tuple
    semantic_label: str


@dataclass(frozen=True)
class InformationModel:
    types: dict
    assets: dict
    relations: tuple
    conversions: dict
    content_hash: str

    def property_def(self, asset_id: str, name: str) -> PropertyDef | None:
        type_id = self.assets.get(asset_id)
        if type_id is None:
            return None
        return self.types.get(type_id, {}).get(name)

    def label_def(self, asset_id: str, label: str) -> PropertyDef | None:
        type_id = self.assets.get(asset_id)
        for pd in self.types.get(type_id, {}).values():
            if pd.semantic_label == label:
                return pd
        return None

    def convert(self, value: float, unit: str, to: str) -> float | None:
        if unit == to:
            return value
        factors = self.conversions.get((unit, to))
        if factors is None:
            return None
        scale, offset = factors
        return value * scale + offset


def _find_cycle(edges) -> list | None:
    graph = {}
    for src, dst in edges:
        graph.setdefault(src, []).append(dst)
        graph.setdefault(dst, [])
    WHITE, GREY, BLACK = 0, 1, 2
    colour = dict.fromkeys(graph, WHITE)
    for start in sorted(graph):
        if colour[start] != WHITE:
            continue
        stack = [(start, iter(graph[start]))]
        colour[start] = GREY
        path = [start]
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                colour[node] = BLACK
                stack.pop()
                path.pop()
            elif colour[nxt] == GREY:
                return path[path.index(nxt):] + [nxt]
            elif colour[nxt] == WHITE:
                colour[nxt] = GREY
                stack.append((nxt, iter(graph[nxt])))
                path.append(nxt)
    return None


def load_model(document) -> InformationModel:
    """Build and check a model from a parsed document, JSON text or path."""
    if isinstance(document, Path) or (isinstance(document, str) and not document.lstrip().startswith("{")):
        document = json.loads(Path(document).read_text())
    elif isinstance(document, str):
        document = json.loads(document)
    if not isinstance(document, dict):
        raise ModelFormatError("model document must be an object")
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))

    conversions = {}
    for (a, b), (s, o) in BUILTIN_CONVERSIONS.items():
        conversions[(a, b)] = (s, o)
    for doc in document.get("conversions", ()):
        conversions[(doc["from"], doc["to"])] = (float(doc["scale"]), float(doc.get("offset", 0.0)))
    for (a, b), (s, o) in list(conversions.items()):
        if (b, a) not in conversions and s != 0:
            conversions[(b, a)] = (1 / s, -o / s)

    types = {}
    for tdoc in document.get("types", ()):
        props = {}
        labels = set()
        for pdoc in tdoc.get("properties", ()):
            name = pdoc["name"]
            label = pdoc.get("label", name)
            if name in props or label in labels:
                raise DuplicateProperty(f"{tdoc['type_id']}.{name}")
            unit = pdoc.get("unit")
            if not isinstance(unit, str):
                raise ModelFormatError(f"{tdoc['type_id']}.{name} must name exactly one unit")
            lo, hi = pdoc.get("range", (float("-inf"), float("inf")))
            props[name] = PropertyDef(name, unit, (float(lo), float(hi)), label)
            labels.add(label)
        types[tdoc["type_id"]] = props

    assets = {}
    for adoc in document.get("assets", ()):
        if adoc["type_id"] not in types:
            raise ModelFormatError(f"asset {adoc['asset_id']} has unknown type {adoc['type_id']}")
        assets[adoc["asset_id"]] = adoc["type_id"]

    relations = []
    for rdoc in document.get("relations", ()):
        if rdoc["kind"] not in RELATION_KINDS:
            raise ModelFormatError(f"unknown relation kind {rdoc['kind']!r}")
        relations.append((rdoc["kind"], rdoc["source"], rdoc["target"]))
    cycle = _find_cycle((s, t) for k, s, t in relations if k == "part-of")
    if cycle:
        raise CyclicStructure(" -> ".join(cycle))

    return InformationModel(types, assets, tuple(relations), conversions,
                            hashlib.sha256(canonical.encode()).hexdigest())


class Verdict(str, Enum):
    ACCEPTED = "accepted"
    QUARANTINED = "quarantined"


@dataclass(frozen=True)
class ValidationVerdict:
    status: Verdict
    reasons: tuple = ()

    @classmethod
    def of(cls, reasons) -> "ValidationVerdict":
        reasons = tuple(reasons)
        return cls(Verdict.QUARANTINED if reasons else Verdict.ACCEPTED, reasons)

    @property
    def accepted(self) -> bool:
        return self.status is Verdict.ACCEPTED


@dataclass(frozen=True)
class CanonicalObservation:
    asset_id: str
    property: str
    value: float
    unit: str
    timestamp: int | float
    provenance: tuple = ()

    def to_dict(self) -> dict:
        return {"asset_id": self.asset_id, "property": self.property, "value": self.value,
                "unit": self.unit, "timestamp": self.timestamp, "provenance": list(self.provenance)}

    @classmethod
    def from_dict(cls, doc: dict) -> "CanonicalObservation":
        return cls(doc["asset_id"], doc["property"], doc["value"], doc["unit"],
                   doc["timestamp"], tuple(doc.get("provenance", ())))


def _check(obs: CanonicalObservation, pd: PropertyDef, reasons: list) -> None:
    lo, hi = pd.value_range
    if not lo <= obs.value <= hi:
        reasons.append("out-of-range")


def enrich(record, model: InformationModel, *, gateway_id: str = "", zone: str = ""):
    """Return one ``(CanonicalObservation, ValidationVerdict)`` per property."""
    out = []
    known = record.device_id in model.assets
    for name, (value, unit) in sorted(record.named_values.items()):
        provenance = (gateway_id, zone, unit)
        pd = model.property_def(record.device_id, name) if known else None
        if pd is None:
            reason = "unknown-property" if known else "unknown-asset"
            obs = CanonicalObservation(record.device_id, name, float(value), unit,
                                       record.captured_at, provenance)
            out.append((obs, ValidationVerdict.of([reason])))
            continue
        converted = model.convert(float(value), unit, pd.expected_unit)
        if converted is None:
            obs = CanonicalObservation(record.device_id, pd.semantic_label, float(value), unit,
                                       record.captured_at, provenance)
            out.append((obs, ValidationVerdict.of(["unit-unconvertible"])))
            continue
        obs = CanonicalObservation(record.device_id, pd.semantic_label, converted,
                                   pd.expected_unit, record.captured_at, provenance)
        reasons = []
        _check(obs, pd, reasons)
        out.append((obs, ValidationVerdict.of(reasons)))
    return out


def enrich_observation(obs: CanonicalObservation, model: InformationModel):
    """Re-normalize an observation; a canonical one comes back unchanged."""
    pd = model.label_def(obs.asset_id, obs.property)
    if pd is None:
        return obs, ValidationVerdict.of(["unknown-property"])
    converted = model.convert(obs.value, obs.unit, pd.expected_unit)
    if converted is None:
        return obs, ValidationVerdict.of(["unit-unconvertible"])
    if obs.unit != pd.expected_unit:
        obs = replace(obs, value=converted, unit=pd.expected_unit)
    reasons = []
    _check(obs, pd, reasons)
    return obs, ValidationVerdict.of(reasons)


class SemanticContextService:
    """Consumes telemetry envelopes and republishes enriched observations.

    Accepted observations go to ``context.<zone>.<device>``, quarantined ones
    to ``quarantine.<zone>.<device>``. The model can be swapped atomically.
    """

    def __init__(self, model: InformationModel, backbone, identity):
        self._model = model
        self._swap = threading.Lock()
        self.backbone = backbone
        self.identity = identity
        self.quarantined = 0
        self.accepted = 0

    @property
    def model(self) -> InformationModel:
        return self._model

    def swap_model(self, model: InformationModel) -> None:
        with self._swap:
            self._model = model

    def handle(self, envelope, record=None, *, now=None, trace=None):
        """Enrich one telemetry envelope; returns ``(accepted, quarantined)`` envelopes."""
        from .gateway import GreenfieldRecord

        model = self._model
        if record is None:
            record = GreenfieldRecord.from_payload(envelope.payload)
        _, zone, device = envelope.topic.split(".")
        gateway_id = next((t.split(":", 1)[1] for t in sorted(envelope.policy_tags)
                           if t.startswith("gateway:")), "")
        results = enrich(record, model, gateway_id=gateway_id, zone=zone)
        good = [o.to_dict() for o, v in results if v.accepted]
        bad = [dict(o.to_dict(), reasons=list(v.reasons)) for o, v in results if not v.accepted]
        self.accepted += len(good)
        self.quarantined += len(bad)
        tags = set(envelope.policy_tags)
        at = envelope.published_at if now is None else now
        trace = trace if trace is not None else envelope.trace
        sent_good = sent_bad = None
        if good:
            sent_good = self.backbone.publish(
                f"context.{zone}.{device}", json.dumps(good, separators=(",", ":")).encode(),
                identity=self.identity, trace=trace, policy_tags=tags, at=at).envelope
        if bad:
            sent_bad = self.backbone.publish(
                f"quarantine.{zone}.{device}", json.dumps(bad, separators=(",", ":")).encode(),
                identity=self.identity, trace=trace, policy_tags=tags, at=at).envelope
        return sent_good, sent_bad


def observations_from_payload(payload: bytes) -> list[CanonicalObservation]:
    return [CanonicalObservation.from_dict(d) for d in json.loads(payload)]
