"""In-process topic backbone with append-only per-topic logs.

Topics are dot-separated lower-case paths. A subscription pattern may end in
a single ``*`` that matches exactly one segment; there is no multi-level
wildcard. Every envelope must carry an identity token.
"""

from __future__ import annotations

import itertools
import re
import threading
from collections import deque
from dataclasses import dataclass, field

from .errors import ClockRegression, InvalidPattern, InvalidTopic, MissingIdentity, UnknownSubscription
from .observability import TraceContext

_SEGMENT = re.compile(r"^[a-z0-9_-]+$")


def validate_topic(topic: str) -> None:
    if not isinstance(topic, str) or not topic:
        raise InvalidTopic(f"invalid topic {topic!r}")
    for seg in topic.split("."):
        if not _SEGMENT.match(seg):
            raise InvalidTopic(f"invalid topic {topic!r}")


def validate_pattern(pattern: str) -> None:
    if not isinstance(pattern, str) or not pattern:
        raise InvalidPattern(f"invalid pattern {pattern!r}")
    segments = pattern.split(".")
    for i, seg in enumerate(segments):
        if seg == "*" and i == len(segments) - 1:
            continue
        if not _SEGMENT.match(seg):
            raise InvalidPattern(f"invalid pattern {pattern!r}")


def topic_matches(pattern: str, topic: str) -> bool:
    p = pattern.split(".")
    t = topic.split(".")
    if len(p) != len(t):
        return False
    if p[-1] == "*":
        return p[:-1] == t[:-1]
    return p == t


@dataclass(frozen=True)
class Envelope:
    id: str
    topic: str
    payload: bytes
    identity: object
    trace: TraceContext | None
    policy_tags: frozenset
    published_at: int | float


@dataclass(frozen=True)
class DeliveryReceipt:
    message_id: str
    matched_subscriptions: int
    envelope: Envelope


@dataclass(eq=False)
class Subscription:
    subscription_id: str
    subscriber_id: str
    pattern: str
    delivery_log: list = field(default_factory=list)
    _queue: deque = field(default_factory=deque, repr=False)
    live: bool = True


class Backbone:
    """Topic-based publish/subscribe broker.

    ``authority`` (a ``TrustAuthority``) is optional; when given, tokens are
    verified at publish time, not just checked for presence.
    """

    def __init__(self, authority=None):
        self.authority = authority
        self._lock = threading.RLock()
        self._ids = itertools.count(1)
        self._sub_ids = itertools.count(1)
        self._topic_logs: dict[str, list[Envelope]] = {}
        self._global_log: list[Envelope] = []
        self._subs: dict[str, Subscription] = {}
        self._clock = 0
        self.rejected_identity = 0

    @property
    def now(self):
        return self._clock

    def publish(self, topic: str, payload: bytes, *, identity, trace: TraceContext | None = None,
                policy_tags=(), at=None) -> DeliveryReceipt:
        validate_topic(topic)
        with self._lock:
            if identity is None or (
                    self.authority is not None
                    and not self.authority.verify(identity, self._clock if at is None else at)):
                self.rejected_identity += 1
                raise MissingIdentity(f"publish on {topic} without a valid identity")
            if at is None:
                at = self._clock
            elif at < self._clock:
                raise ClockRegression(f"publish at {at} after {self._clock}")
            self._clock = at
            env = Envelope(
                id=f"m{next(self._ids)}",
                topic=topic,
                payload=bytes(payload),
                identity=identity,
                trace=trace,
                policy_tags=frozenset(policy_tags),
                published_at=at,
            )
            self._topic_logs.setdefault(topic, []).append(env)
            self._global_log.append(env)
            matched = 0
            for sub in self._subs.values():
                if sub.live and topic_matches(sub.pattern, topic):
                    sub._queue.append(env)
                    matched += 1
            return DeliveryReceipt(env.id, matched, env)

    def subscribe(self, subscriber_id: str, pattern: str, *, from_beginning: bool = False) -> Subscription:
        validate_pattern(pattern)
        with self._lock:
            sub = Subscription(f"s{next(self._sub_ids)}", subscriber_id, pattern)
            if from_beginning:
                sub._queue.extend(e for e in self._global_log if topic_matches(pattern, e.topic))
            self._subs[sub.subscription_id] = sub
            return sub

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            if self._subs.pop(sub.subscription_id, None) is None:
                raise UnknownSubscription(sub.subscription_id)
            sub.live = False

    def poll(self, sub: Subscription, max: int = 1) -> list[Envelope]:
        with self._lock:
            if self._subs.get(sub.subscription_id) is not sub:
                raise UnknownSubscription(sub.subscription_id)
            out = []
            while sub._queue and len(out) < max:
                env = sub._queue.popleft()
                sub.delivery_log.append(env.id)
                out.append(env)
            return out

    def pending(self, sub: Subscription) -> int:
        return len(sub._queue)

    def topic_log(self, topic: str) -> list[Envelope]:
        with self._lock:
            return list(self._topic_logs.get(topic, ()))

    def topics(self) -> list[str]:
        with self._lock:
            return sorted(self._topic_logs)

    def message_count(self) -> int:
        return len(self._global_log)
