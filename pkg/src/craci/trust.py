"""Trust and governance: identity tokens, attribute-based access decisions,
the hash-chained audit log and the data-space export boundary.

Policy resource patterns are dot-separated like topics. A trailing ``*``
matches one or more remaining segments, so ``twin.*`` covers
``twin.changes.r1``. Specificity is the number of literal segments.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import re
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

DEFAULT_SECRET = b"craci-desk-kit"
GENESIS_HASH = "0" * 64
ACTIONS = frozenset({"read", "write", "publish", "subscribe", "migrate", "export"})

_SEGMENT = re.compile(r"^[a-z0-9_-]+$")


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class IdentityToken:
    subject_id: str
    roles: frozenset
    issued_at: int
    ttl: int
    signature: str

    def expires_at(self) -> int:
        return self.issued_at + self.ttl


def _token_digest(secret: bytes, subject_id, roles, issued_at, ttl) -> str:
    body = _canonical([subject_id, sorted(roles), issued_at, ttl])
    return hmac.new(secret, body.encode(), hashlib.sha256).hexdigest()


class TrustAuthority:
    """Issues and verifies keyed-hash identity tokens for one trust domain."""

    def __init__(self, secret: bytes = DEFAULT_SECRET):
        self._secret = secret

    def issue_token(self, subject: str, roles: Iterable[str], ttl: int, now: int) -> IdentityToken:
        if not subject:
            raise ValueError("subject must be non-empty")
        roles = frozenset(roles)
        sig = _token_digest(self._secret, subject, roles, now, ttl)
        return IdentityToken(subject, roles, now, ttl, sig)

    def verify(self, token: IdentityToken | None, now: int) -> bool:
        if token is None:
            return False
        expected = _token_digest(
            self._secret, token.subject_id, token.roles, token.issued_at, token.ttl
        )
        if not hmac.compare_digest(expected, token.signature):
            return False
        return token.issued_at + token.ttl >= now


class Effect(str, Enum):
    PERMIT = "permit"
    DENY = "deny"


def validate_resource_pattern(pattern: str) -> None:
    if not pattern:
        raise ValueError("empty resource pattern")
    segments = pattern.split(".")
    for i, seg in enumerate(segments):
        if seg == "*" and i == len(segments) - 1:
            continue
        if not _SEGMENT.match(seg):
            raise ValueError(f"invalid resource pattern {pattern!r}")


def resource_matches(pattern: str, resource: str) -> bool:
    p = pattern.split(".")
    r = resource.split(".")
    if p[-1] == "*":
        prefix = p[:-1]
        return len(r) > len(prefix) and r[: len(prefix)] == prefix
    return p == r


def specificity(pattern: str) -> int:
    return sum(1 for seg in pattern.split(".") if seg != "*")


@dataclass(frozen=True)
class Policy:
    policy_id: str
    effect: Effect
    roles: frozenset
    resource: str
    action: str
    obligations: frozenset = frozenset()

    def __post_init__(self):
        validate_resource_pattern(self.resource)
        if self.action != "*" and self.action not in ACTIONS:
            raise ValueError(f"unknown action {self.action!r}")

    def applies(self, roles: frozenset, action: str, resource: str) -> bool:
        if self.action != "*" and self.action != action:
            return False
        if "*" not in self.roles and not (self.roles & roles):
            return False
        return resource_matches(self.resource, resource)


@dataclass(frozen=True)
class Decision:
    effect: Effect
    matched_policy: str | None
    obligations: frozenset = frozenset()
    reason: str = ""

    @property
    def permitted(self) -> bool:
        return self.effect is Effect.PERMIT


def evaluate(roles: Iterable[str], action: str, resource: str,
             policies: Iterable[Policy]) -> Decision:
    """Pure decision: deny by default, most specific match wins, Deny wins ties.

    The result does not depend on the order of ``policies``.
    """
    roles = frozenset(roles)
    matches = [p for p in policies if p.applies(roles, action, resource)]
    if not matches:
        return Decision(Effect.DENY, None, frozenset(), "no-match")
    top = max(specificity(p.resource) for p in matches)
    best = [p for p in matches if specificity(p.resource) == top]
    denies = [p for p in best if p.effect is Effect.DENY]
    winners = denies or best
    effect = Effect.DENY if denies else Effect.PERMIT
    obligations = frozenset().union(*(p.obligations for p in winners))
    chosen = min(p.policy_id for p in winners)
    return Decision(effect, chosen, obligations, "policy")


def policy_from_dict(doc: dict, default_id: str) -> Policy:
    roles = doc.get("roles", ["*"])
    if isinstance(roles, str):
        roles = [roles]
    return Policy(
        policy_id=doc.get("id", default_id),
        effect=Effect(doc["effect"].lower()),
        roles=frozenset(roles),
        resource=doc["resource"],
        action=doc["action"],
        obligations=frozenset(doc.get("obligations", ())),
    )


def load_policies(source) -> list[Policy]:
    """Load policies from a JSON file path or an already-parsed list."""
    if isinstance(source, (str, Path)):
        source = json.loads(Path(source).read_text())
    return [policy_from_dict(doc, f"p{i}") for i, doc in enumerate(source)]


# ---------------------------------------------------------------- audit log

_AUDIT_FIELDS = ("seq", "who", "action", "resource", "decision", "at")


@dataclass(frozen=True)
class AuditRecord:
    seq: int
    who: str
    action: str
    resource: str
    decision: str
    at: int | float
    chain_hash: str

    def body(self) -> dict:
        return {k: getattr(self, k) for k in _AUDIT_FIELDS}

    def to_line(self) -> bytes:
        doc = self.body()
        doc["chain_hash"] = self.chain_hash
        return _canonical(doc).encode()


def chain_hash(prev_hash: str, body: dict) -> str:
    return hashlib.sha256((prev_hash + _canonical(body)).encode()).hexdigest()


@dataclass(frozen=True)
class ChainVerdict:
    """``broken_at`` is None for an intact chain, else the first bad seq."""

    broken_at: int | None = None

    @property
    def intact(self) -> bool:
        return self.broken_at is None


class AuditLog:
    """Append-only hash-chained audit log. Appends are serialized."""

    def __init__(self):
        self._records: list[AuditRecord] = []
        self._lock = threading.Lock()

    def append(self, who: str, action: str, resource: str, decision: str, at) -> AuditRecord:
        with self._lock:
            prev = self._records[-1].chain_hash if self._records else GENESIS_HASH
            body = {"seq": len(self._records) + 1, "who": who, "action": action,
                    "resource": resource, "decision": decision, "at": at}
            rec = AuditRecord(chain_hash=chain_hash(prev, body), **body)
            self._records.append(rec)
            return rec

    @property
    def records(self) -> list[AuditRecord]:
        return list(self._records)

    def __len__(self):
        return len(self._records)

    def export_jsonl(self) -> bytes:
        """One canonical JSON object per record plus a trailer line that pins
        the record count and head hash, so whole-line truncation is visible."""
        records = self.records
        head = records[-1].chain_hash if records else GENESIS_HASH
        lines = [r.to_line() for r in records]
        lines.append(_canonical({"end": len(records), "head": head}).encode())
        return b"\n".join(lines) + b"\n"

    def write(self, path) -> None:
        Path(path).write_bytes(self.export_jsonl())


def verify_audit_chain(records: Sequence[AuditRecord]) -> ChainVerdict:
    prev = GENESIS_HASH
    for i, rec in enumerate(records):
        seq = i + 1
        if rec.seq != seq or chain_hash(prev, rec.body()) != rec.chain_hash:
            return ChainVerdict(seq)
        prev = rec.chain_hash
    return ChainVerdict()


def verify_audit_export(data: bytes) -> ChainVerdict:
    """Verify an exported log byte-for-byte.

    Line ``k`` (1-based) holds record ``k``; the trailer is line ``n + 1``.
    Any line that is not the canonical encoding of its record, or whose hash
    does not chain, is reported by its line number.
    """
    pieces = data.split(b"\n")
    if pieces and pieces[-1] == b"":
        pieces.pop()
        terminated = True
    else:
        terminated = False
    prev = GENESIS_HASH
    for i, raw in enumerate(pieces):
        lineno = i + 1
        last = i == len(pieces) - 1
        if last and not terminated:
            return ChainVerdict(lineno)
        try:
            doc = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, ValueError):
            return ChainVerdict(lineno)
        if not isinstance(doc, dict):
            return ChainVerdict(lineno)
        if set(doc) == {"end", "head"}:
            if (not last or doc["end"] != i or doc["head"] != prev
                    or _canonical(doc).encode() != raw):
                return ChainVerdict(lineno)
            return ChainVerdict()
        if set(doc) != set(_AUDIT_FIELDS) | {"chain_hash"}:
            return ChainVerdict(lineno)
        try:
            rec = AuditRecord(**doc)
        except TypeError:
            return ChainVerdict(lineno)
        if rec.to_line() != raw or rec.seq != lineno:
            return ChainVerdict(lineno)
        if chain_hash(prev, rec.body()) != rec.chain_hash:
            return ChainVerdict(lineno)
        prev = rec.chain_hash
    # trailer missing: the log was cut
    return ChainVerdict(len(pieces) + 1)


def load_audit_records(path) -> list[AuditRecord]:
    records = []
    for line in Path(path).read_bytes().splitlines():
        doc = json.loads(line)
        if "seq" in doc:
            records.append(AuditRecord(**doc))
    return records


# ----------------------------------------------------------- policy engine

@dataclass
class PolicyEngine:
    """Runs ``evaluate`` behind token verification and writes audit records.

    A record is appended for every Deny and for every decision carrying the
    ``audit`` obligation, exactly once per call.
    """

    authority: TrustAuthority
    policies: list = field(default_factory=list)
    audit: AuditLog = field(default_factory=AuditLog)

    def decide(self, token: IdentityToken | None, action: str, resource: str, now) -> Decision:
        if not self.authority.verify(token, now):
            return Decision(Effect.DENY, None, frozenset(), "invalid-token")
        return evaluate(token.roles, action, resource, self.policies)

    def authorize(self, token: IdentityToken | None, action: str, resource: str, now) -> Decision:
        decision = self.decide(token, action, resource, now)
        if not decision.permitted or "audit" in decision.obligations:
            who = token.subject_id if token is not None else "<anonymous>"
            self.audit.append(who, action, resource, decision.effect.value, now)
        return decision


class DataSpaceInterface:
    """Policy-enforcing stub for sovereign data exchange with partners.

    Envelopes tagged ``origin:ot`` only leave when the permitting decision
    carries the ``audit`` obligation.
    """

    def __init__(self, engine: PolicyEngine):
        self.engine = engine
        self.exported: list = []

    def export(self, envelope, token: IdentityToken, partner: str, now) -> Decision:
        resource = f"dataspace.{partner}.{envelope.topic}"
        decision = self.engine.decide(token, "export", resource, now)
        if decision.permitted and "origin:ot" in envelope.policy_tags \
                and "audit" not in decision.obligations:
            decision = Decision(Effect.DENY, decision.matched_policy,
                                decision.obligations, "ot-export-unaudited")
        who = token.subject_id if token is not None else "<anonymous>"
        if not decision.permitted or "audit" in decision.obligations:
            self.engine.audit.append(who, "export", resource, decision.effect.value, now)
        if decision.permitted:
            self.exported.append((partner, envelope))
        return decision
