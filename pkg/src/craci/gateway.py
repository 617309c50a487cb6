"""Adaptation and edge platform services.

Brownfield devices are modelled as Modbus-like register maps. The register
mapping file is a JSON list of ``{register, property, scale, offset, unit}``
objects. Gateways forward OT telemetry to the backbone (always permitted)
and refuse IT-to-OT writes unless a valid approval is attached.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import GatewayOffline, UnknownGateway, UnmappedRegister

log = logging.getLogger(__name__)

DEFAULT_APPROVAL_TTL = 300
DEFAULT_HEARTBEAT_TIMEOUT = 50


@dataclass(frozen=True)
class RawBrownfieldFrame:
    device_id: str
    register_map: tuple
    captured_at: int

    def __post_init__(self):
        addresses = [addr for addr, _ in self.register_map]
        if len(set(addresses)) != len(addresses):
            raise ValueError("register addresses must be unique within a frame")
        for _, raw in self.register_map:
            if not 0 <= raw <= 0xFFFF:
                raise ValueError(f"register value {raw} is not a 16-bit word")


@dataclass(frozen=True)
class GreenfieldRecord:
    device_id: str
    named_values: dict
    captured_at: int | float
    skipped: tuple = ()

    def __post_init__(self):
        if any(not name for name in self.named_values):
            raise ValueError("property names must be non-empty")

    def to_payload(self) -> bytes:
        doc = {"device_id": self.device_id, "captured_at": self.captured_at,
               "values": {k: [v, u] for k, (v, u) in sorted(self.named_values.items())}}
        return json.dumps(doc, separators=(",", ":")).encode()

    @classmethod
    def from_payload(cls, payload: bytes) -> "GreenfieldRecord":
        doc = json.loads(payload)
        values = {k: (v, u) for k, (v, u) in doc["values"].items()}
        return cls(doc["device_id"], values, doc["captured_at"])


@dataclass(frozen=True)
class RegisterMapping:
    register: int
    property: str
    scale: float = 1.0
    offset: float = 0.0
    unit: str = ""


def load_register_map(source) -> dict[int, RegisterMapping]:
    if isinstance(source, (str, Path)):
        source = json.loads(Path(source).read_text())
    mapping = {}
    for doc in source:
        m = RegisterMapping(int(doc["register"]), doc["property"], float(doc.get("scale", 1.0)),
                            float(doc.get("offset", 0.0)), doc.get("unit", ""))
        mapping[m.register] = m
    return mapping


def adapt_frame(frame: RawBrownfieldFrame, mapping: dict, strict: bool = True) -> GreenfieldRecord:
    """Translate raw registers into named engineering values.

    In lenient mode unmapped registers are logged and listed in
    ``record.skipped`` instead of raising.
    """
    values = {}
    skipped = []
    for addr, raw in frame.register_map:
        m = mapping.get(addr)
        if m is None:
            if strict:
                raise UnmappedRegister(f"{frame.device_id}: register {addr} has no mapping")
            log.warning("%s: skipping unmapped register %d", frame.device_id, addr)
            skipped.append(addr)
            continue
        values[m.property] = (raw * m.scale + m.offset, m.unit)
    return GreenfieldRecord(frame.device_id, values, frame.captured_at, tuple(skipped))


def invert_value(value: float, m: RegisterMapping) -> int:
    return int(round((value - m.offset) / m.scale))


class GatewayStatus(str, Enum):
    HEALTHY = "healthy"
    DEGRADED = "degraded"
    OFFLINE = "offline"


@dataclass
class GatewayRegistration:
    gateway_id: str
    zone: str
    status: GatewayStatus
    last_heartbeat: int | float
    identity: object = None


def status_for(now, last_heartbeat, timeout) -> GatewayStatus:
    silence = now - last_heartbeat
    if silence > timeout:
        return GatewayStatus.OFFLINE
    if silence > timeout / 2:
        return GatewayStatus.DEGRADED
    return GatewayStatus.HEALTHY


class GatewayManager:
    """Registry of edge gateways with heartbeat-driven health."""

    def __init__(self, heartbeat_timeout=DEFAULT_HEARTBEAT_TIMEOUT):
        self.heartbeat_timeout = heartbeat_timeout
        self._gateways: dict[str, GatewayRegistration] = {}
        self._lock = threading.Lock()

    def register(self, gateway_id: str, zone: str, identity, now) -> GatewayRegistration:
        with self._lock:
            reg = GatewayRegistration(gateway_id, zone, GatewayStatus.HEALTHY, now, identity)
            self._gateways[gateway_id] = reg
            return reg

    def heartbeat(self, gateway_id: str, now) -> GatewayRegistration:
        with self._lock:
            reg = self._get(gateway_id)
            reg.last_heartbeat = max(reg.last_heartbeat, now)
            reg.status = status_for(now, reg.last_heartbeat, self.heartbeat_timeout)
            return reg

    def refresh(self, gateway_id: str, now) -> GatewayRegistration:
        with self._lock:
            reg = self._get(gateway_id)
            reg.status = status_for(now, reg.last_heartbeat, self.heartbeat_timeout)
            return reg

    def get(self, gateway_id: str) -> GatewayRegistration:
        with self._lock:
            return self._get(gateway_id)

    def _get(self, gateway_id):
        try:
            return self._gateways[gateway_id]
        except KeyError:
            raise UnknownGateway(gateway_id) from None

    def gateways(self) -> list[GatewayRegistration]:
        with self._lock:
            return list(self._gateways.values())


def ingest(record: GreenfieldRecord, gateway: GatewayRegistration, backbone, *, now=None,
           trace=None):
    """Publish a record on ``telemetry.<zone>.<device>`` as the gateway."""
    if gateway.status is GatewayStatus.OFFLINE:
        raise GatewayOffline(gateway.gateway_id)
    topic = f"telemetry.{gateway.zone}.{record.device_id}"
    receipt = backbone.publish(topic, record.to_payload(), identity=gateway.identity,
                               trace=trace, policy_tags={"origin:ot", f"gateway:{gateway.gateway_id}"},
                               at=now)
    return receipt.envelope


# --------------------------------------------------------------- OT writes

@dataclass(frozen=True)
class ApprovalRecord:
    approver: object
    approved_at: int | float
    ttl: int | float = DEFAULT_APPROVAL_TTL


@dataclass(frozen=True)
class OTWriteRequest:
    request_id: str
    target_device: str
    setpoint: tuple
    requester: object
    approval: ApprovalRecord | None = None


@dataclass(frozen=True)
class WriteOutcome:
    executed: bool
    reason: str = ""


class OTWriteGuard:
    """Deny-by-default verification of IT-to-OT write requests.

    Each attempt yields exactly one audit record, whatever the outcome.
    """

    def __init__(self, engine, approval_ttl=DEFAULT_APPROVAL_TTL):
        self.engine = engine
        self.approval_ttl = approval_ttl
        self.executed: list[OTWriteRequest] = []
        self._lock = threading.Lock()

    def _verdict(self, req: OTWriteRequest, now) -> str:
        approval = req.approval
        if approval is None:
            return "unapproved"
        ttl = approval.ttl if approval.ttl is not None else self.approval_ttl
        if approval.approved_at + ttl < now:
            return "expired"
        decision = self.engine.decide(approval.approver, "write", f"ot.{req.target_device}", now)
        if not decision.permitted:
            return "unauthorized-approver"
        return ""

    def request_ot_write(self, req: OTWriteRequest, now) -> WriteOutcome:
        with self._lock:
            reason = self._verdict(req, now)
            who = getattr(req.requester, "subject_id", "<anonymous>")
            resource = f"ot.{req.target_device}"
            if reason:
                self.engine.audit.append(who, "write", resource, f"rejected:{reason}", now)
                return WriteOutcome(False, reason)
            self.engine.audit.append(who, "write", resource, "executed", now)
            self.executed.append(req)
            return WriteOutcome(True)
