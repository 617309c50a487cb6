"""Orchestration services: a minimal sequential workflow engine and the
proactive service-migration planner for mobile robots.

Workflow documents are JSON::

    {"workflow_id": "restock",
     "steps": [{"id": "ask", "publish": {"topic": "orders.new", "payload": "..."}},
               {"id": "wait", "await": {"pattern": "orders.*", "timeout": 10}},
               {"id": "go", "invoke": "agv-dispatch"}]}
"""

from __future__ import annotations

import itertools
import json
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Protocol

from .backbone import topic_matches, validate_pattern, validate_topic
from .errors import (AccessDenied, ActivePlanExists, IllegalTransition, InsufficientHistory,
                     PlanAborted, ServiceNotPlaced, TerminalInstance)
from .geometry import zone_at, zone_changes
from .observability import Manifest, reconcile

DEFAULT_SAFETY_MARGIN = 5


# ---------------------------------------------------------------- workflows

@dataclass(frozen=True)
class PublishStep:
    step_id: str
    topic: str
    payload: bytes = b""


@dataclass(frozen=True)
class AwaitStep:
    step_id: str
    pattern: str
    timeout: int


@dataclass(frozen=True)
class InvokeStep:
    step_id: str
    service_id: str


@dataclass(frozen=True)
class WorkflowDef:
    workflow_id: str
    steps: tuple

    def __post_init__(self):
        if not self.steps:
            raise ValueError(f"workflow {self.workflow_id} has no steps")
        ids = [s.step_id for s in self.steps]
        if len(set(ids)) != len(ids):
            raise ValueError(f"workflow {self.workflow_id} repeats a step id")
        for s in self.steps:
            if isinstance(s, PublishStep):
                validate_topic(s.topic)
            elif isinstance(s, AwaitStep):
                validate_pattern(s.pattern)


def load_workflow(source) -> WorkflowDef:
    if isinstance(source, (str, Path)):
        source = json.loads(Path(source).read_text())
    steps = []
    for doc in source["steps"]:
        if "publish" in doc:
            payload = doc["publish"].get("payload", "")
            steps.append(PublishStep(doc["id"], doc["publish"]["topic"],
                                     payload.encode() if isinstance(payload, str) else payload))
        elif "await" in doc:
            steps.append(AwaitStep(doc["id"], doc["await"]["pattern"], int(doc["await"]["timeout"])))
        elif "invoke" in doc:
            steps.append(InvokeStep(doc["id"], doc["invoke"]))
        else:
            raise ValueError(f"step {doc.get('id')!r} has no action")
    return WorkflowDef(source["workflow_id"], tuple(steps))


class WorkflowStatus(str, Enum):
    RUNNING = "running"
    WAITING_EVENT = "waiting-event"
    COMPLETED = "completed"
    FAILED = "failed"


@dataclass
class WorkflowInstance:
    instance_id: str
    definition: WorkflowDef
    cursor: int = 0
    status: WorkflowStatus = WorkflowStatus.RUNNING
    waiting_since: int | None = None
    failure: str | None = None
    emitted: list = field(default_factory=list)

    @property
    def terminal(self) -> bool:
        return self.status in (WorkflowStatus.COMPLETED, WorkflowStatus.FAILED)


class WorkflowEngine:
    """Drives workflow instances one step at a time.

    ``services`` maps a service id to ``fn(instance, now)``; a missing or
    raising service fails the instance.
    """

    def __init__(self, backbone, identity, services: dict[str, Callable] | None = None):
        self.backbone = backbone
        self.identity = identity
        self.services = dict(services or {})
        self._ids = itertools.count(1)

    def start(self, definition: WorkflowDef, instance_id: str | None = None) -> WorkflowInstance:
        return WorkflowInstance(instance_id or f"wf{next(self._ids)}", definition)

    def advance_workflow(self, instance: WorkflowInstance, incoming=None, now=0) -> WorkflowInstance:
        if instance.terminal:
            raise TerminalInstance(instance.instance_id)
        steps = instance.definition.steps
        event = incoming
        while instance.cursor < len(steps):
            step = steps[instance.cursor]
            if isinstance(step, PublishStep):
                receipt = self.backbone.publish(step.topic, step.payload, identity=self.identity,
                                                at=now)
                instance.emitted.append(receipt.envelope)
                instance.cursor += 1
            elif isinstance(step, InvokeStep):
                fn = self.services.get(step.service_id)
                try:
                    if fn is None:
                        raise LookupError(step.service_id)
                    fn(instance, now)
                except Exception as exc:
                    instance.status = WorkflowStatus.FAILED
                    instance.failure = f"invoke:{step.service_id}:{exc}"
                    return instance
                instance.cursor += 1
            else:
                if instance.status is not WorkflowStatus.WAITING_EVENT:
                    instance.status = WorkflowStatus.WAITING_EVENT
                    instance.waiting_since = now
                if now - instance.waiting_since > step.timeout:
                    instance.status = WorkflowStatus.FAILED
                    instance.failure = "timeout"
                    return instance
                if event is None or not topic_matches(step.pattern, event.topic):
                    return instance
                event = None
                instance.status = WorkflowStatus.RUNNING
                instance.waiting_since = None
                instance.cursor += 1
        instance.status = WorkflowStatus.COMPLETED
        return instance


# --------------------------------------------------------------- prediction

@dataclass
class RobotTrack:
    robot_id: str
    position: tuple
    at: int | float
    zone: str | None = None
    velocity: tuple | None = None
    history: deque = field(default_factory=lambda: deque(maxlen=8))

    def observe(self, position: tuple, at, zones=None) -> None:
        self.history.append((at, tuple(position)))
        self.position = tuple(position)
        self.at = at
        if zones is not None:
            self.zone = zone_at(zones, *position)

    def estimated_velocity(self) -> tuple:
        if self.velocity is not None:
            return self.velocity
        if len(self.history) < 2:
            raise InsufficientHistory(self.robot_id)
        (t0, (x0, y0)), (t1, (x1, y1)) = self.history[-2], self.history[-1]
        if t1 == t0:
            raise InsufficientHistory(self.robot_id)
        return ((x1 - x0) / (t1 - t0), (y1 - y0) / (t1 - t0))


@dataclass(frozen=True)
class Prediction:
    robot_id: str
    from_zone: str
    to_zone: str
    predicted_arrival: float


class Predictor(Protocol):
    def predict(self, track: RobotTrack, zones, horizon) -> Prediction | None: ...


def predict_zone_transition(track: RobotTrack, zones, horizon) -> Prediction | None:
    """Linear dead reckoning: first zone crossing within ``horizon`` ticks of
    the track's last sample, if any."""
    vx, vy = track.estimated_velocity()
    if vx == 0 and vy == 0:
        return None
    current = track.zone if track.zone is not None else zone_at(zones, *track.position)
    if current is None:
        return None
    for t, zone in zone_changes(zones, track.position, (vx, vy), horizon):
        if zone is None:
            return None
        return Prediction(track.robot_id, current, zone, track.at + t)
    return None


class LinearPredictor:
    def predict(self, track, zones, horizon):
        return predict_zone_transition(track, zones, horizon)


# ---------------------------------------------------------------- migration

class MigrationState(str, Enum):
    IDLE = "idle"
    PREDICTED = "predicted"
    PREWARMING = "prewarming"
    READY = "ready"
    HANDING_OVER = "handing-over"
    COMPLETED = "completed"
    ABORTED = "aborted"


_NEXT = {
    MigrationState.IDLE: MigrationState.PREDICTED,
    MigrationState.PREDICTED: MigrationState.PREWARMING,
    MigrationState.PREWARMING: MigrationState.READY,
    MigrationState.READY: MigrationState.HANDING_OVER,
    MigrationState.HANDING_OVER: MigrationState.COMPLETED,
}
TERMINAL = frozenset({MigrationState.COMPLETED, MigrationState.ABORTED})


@dataclass
class MigrationPlan:
    plan_id: str
    robot_id: str
    service_id: str
    from_zone: str
    to_zone: str
    predicted_arrival: float
    prewarm_duration: float
    safety_margin: float
    created_at: float
    state: MigrationState = MigrationState.IDLE
    prewarm_start_at: float | None = None
    ready_at: float | None = None
    handover_at: float | None = None
    gap: float | None = None
    actions: list = field(default_factory=list)
    transitions: list = field(default_factory=list)

    @property
    def active(self) -> bool:
        return self.state not in TERMINAL

    def transition(self, to: MigrationState, at) -> None:
        """Move one legal step forward, or abort from any live state.
        Illegal requests raise and leave the state untouched."""
        if to is MigrationState.ABORTED:
            if self.state in TERMINAL:
                raise IllegalTransition(f"{self.state.value} -> aborted")
        elif _NEXT.get(self.state) is not to:
            raise IllegalTransition(f"{self.state.value} -> {to.value}")
        self.state = to
        self.transitions.append((to, at))

    def schedule(self, arrival: float, now: float) -> None:
        self.predicted_arrival = arrival
        if self.state in (MigrationState.IDLE, MigrationState.PREDICTED):
            self.prewarm_start_at = max(now, arrival - self.prewarm_duration - self.safety_margin)

    def advance(self, now) -> list:
        """Apply time-driven transitions due by ``now``; returns them."""
        fired = []
        if self.state is MigrationState.PREDICTED and now >= self.prewarm_start_at:
            self.transition(MigrationState.PREWARMING, self.prewarm_start_at)
            self.ready_at = self.prewarm_start_at + self.prewarm_duration
            fired.append((MigrationState.PREWARMING, self.prewarm_start_at))
        if self.state is MigrationState.PREWARMING and now >= self.ready_at:
            self.transition(MigrationState.READY, self.ready_at)
            fired.append((MigrationState.READY, self.ready_at))
        return fired


class MigrationPlanner:
    """Keeps at most one live plan per (robot, service) and owns the
    service placement manifest that handovers rewrite."""

    def __init__(self, manifest: Manifest, prewarm_duration: float,
                 safety_margin: float = DEFAULT_SAFETY_MARGIN, *, backbone=None, identity=None,
                 guard=None):
        self.manifest = manifest
        self.prewarm_duration = prewarm_duration
        self.safety_margin = safety_margin
        self.backbone = backbone
        self.identity = identity
        self.guard = guard
        self.plans: list[MigrationPlan] = []
        self._active: dict[tuple, MigrationPlan] = {}
        self._ids = itertools.count(1)

    def active_plan(self, robot_id: str, service_id: str) -> MigrationPlan | None:
        return self._active.get((robot_id, service_id))

    def _emit(self, plan: MigrationPlan, fired, now) -> None:
        if self.backbone is None or not fired:
            return
        for state, at in fired:
            payload = json.dumps({"plan_id": plan.plan_id, "service_id": plan.service_id,
                                  "state": state.value, "effective_at": at},
                                 separators=(",", ":")).encode()
            self.backbone.publish(f"orchestration.migration.{plan.robot_id}", payload,
                                  identity=self.identity, at=now)

    def plan_migration(self, prediction: Prediction, service_id: str, now,
                       prewarm_duration: float | None = None) -> MigrationPlan:
        key = (prediction.robot_id, service_id)
        if key in self._active:
            raise ActivePlanExists(f"{key}")
        if self.manifest.placements.get(service_id) != prediction.from_zone:
            raise ServiceNotPlaced(f"{service_id} is not placed in {prediction.from_zone}")
        plan = MigrationPlan(
            plan_id=f"plan{next(self._ids)}", robot_id=prediction.robot_id, service_id=service_id,
            from_zone=prediction.from_zone, to_zone=prediction.to_zone,
            predicted_arrival=prediction.predicted_arrival,
            prewarm_duration=self.prewarm_duration if prewarm_duration is None else prewarm_duration,
            safety_margin=self.safety_margin, created_at=now)
        plan.schedule(prediction.predicted_arrival, now)
        plan.transition(MigrationState.PREDICTED, now)
        self.plans.append(plan)
        self._active[key] = plan
        self._emit(plan, [(MigrationState.PREDICTED, now)], now)
        return plan

    def tick(self, plan: MigrationPlan, now) -> None:
        if plan.active:
            self._emit(plan, plan.advance(now), now)

    def abort(self, plan: MigrationPlan, now) -> None:
        if plan.active:
            plan.transition(MigrationState.ABORTED, now)
            self._active.pop((plan.robot_id, plan.service_id), None)
            self._emit(plan, [(MigrationState.ABORTED, now)], now)

    def update(self, robot_id: str, service_id: str, prediction: Prediction | None, now):
        """Fold a fresh prediction into the live plan for (robot, service).

        Returns the live plan afterwards, or None.
        """
        plan = self.active_plan(robot_id, service_id)
        if plan is not None:
            self.tick(plan, now)
        if prediction is None:
            if plan is not None:
                self.abort(plan, now)
            return None
        if plan is not None and plan.to_zone == prediction.to_zone \
                and plan.from_zone == prediction.from_zone:
            plan.schedule(prediction.predicted_arrival, now)
            self.tick(plan, now)
            return plan
        if plan is not None:
            self.abort(plan, now)
        try:
            plan = self.plan_migration(prediction, service_id, now)
        except ServiceNotPlaced:
            return None
        self.tick(plan, now)
        return plan

    def execute_handover(self, plan: MigrationPlan, now) -> MigrationPlan:
        """Rebind the service at ``plan.to_zone``.

        The gap is 0 when the destination was Ready in time; otherwise it is
        the prewarm time still outstanding at ``now``.
        """
        if not plan.active:
            raise PlanAborted(plan.plan_id)
        if self.guard is not None:
            decision = self.guard.authorize(self.identity, "migrate", f"services.{plan.service_id}", now)
            if not decision.permitted:
                self.abort(plan, now)
                raise AccessDenied(f"migrate {plan.service_id}")
        fired = plan.advance(now)
        if plan.state is MigrationState.PREDICTED:
            plan.prewarm_start_at = now
            fired += plan.advance(now)
        if plan.state is MigrationState.PREWARMING:
            plan.gap = plan.prewarm_duration - (now - plan.prewarm_start_at)
            plan.transition(MigrationState.READY, plan.ready_at)
            fired.append((MigrationState.READY, plan.ready_at))
        else:
            plan.gap = 0
        plan.handover_at = now
        plan.transition(MigrationState.HANDING_OVER, now)
        new = self.manifest.with_placement(plan.service_id, plan.to_zone)
        plan.actions = reconcile(self.manifest, new)
        self.manifest = new
        plan.transition(MigrationState.COMPLETED, now + plan.gap)
        fired += [(MigrationState.HANDING_OVER, now), (MigrationState.COMPLETED, now + plan.gap)]
        self._active.pop((plan.robot_id, plan.service_id), None)
        self._emit(plan, fired, now)
        return plan

    def cold_handover(self, robot_id: str, service_id: str, from_zone: str, to_zone: str, now):
        """Handover with no usable prediction: plan at arrival, full cold start."""
        live = self.active_plan(robot_id, service_id)
        if live is not None:
            self.abort(live, now)
        plan = self.plan_migration(Prediction(robot_id, from_zone, to_zone, now), service_id, now)
        return self.execute_handover(plan, now)


def lead_time(plan: MigrationPlan) -> float:
    return plan.handover_at - plan.created_at if plan.handover_at is not None else math.nan
