"""Twin hub: last-write-wins state, history replay, change events and reads."""

import csv
import io
import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from craci.backbone import Backbone
from craci.errors import (AccessDenied, DuplicateInstance, DuplicateTypeVersion, UnknownInstance,
                          UnknownType, UnknownVersion)
from craci.semantic import CanonicalObservation
from craci.trust import PolicyEngine, TrustAuthority, load_policies
from craci.twin import (ArchiveSink, AssetType, Outcome, PropertySpec, TwinHub)

AMR = AssetType("amr", 1, (PropertySpec("position.x", "m"), PropertySpec("position.y", "m")))


def _hub(n=3, **kw):
    hub = TwinHub(**kw)
    hub.register_type(AMR)
    for i in range(n):
        hub.instantiate(("amr", 1), f"r{i}", "z1")
    return hub


def obs(iid, prop, value, ts, unit="m"):
    return CanonicalObservation(iid, prop, value, unit, ts)


def sort_and_fold(observations):
    state = {}
    for o in sorted(observations, key=lambda o: o.timestamp):  # stable: later publish wins ties
        state[(o.asset_id, o.property)] = (o.value, o.timestamp)
    return state


class TestRegistry:
    def test_duplicates(self):
        hub = _hub(1)
        with pytest.raises(DuplicateTypeVersion):
            hub.register_type(AMR)
        with pytest.raises(DuplicateInstance):
            hub.instantiate(("amr", 1), "r0", "z1")
        with pytest.raises(UnknownType):
            hub.instantiate(("amr", 2), "x", "z1")
        with pytest.raises(UnknownInstance):
            hub.query_state("ghost")

    def test_duplicate_schema_names(self):
        with pytest.raises(ValueError):
            AssetType("t", 1, (PropertySpec("a", "m"), PropertySpec("a", "s")))

    def test_versions_coexist(self):
        hub = _hub(0)
        hub.register_type(AssetType("amr", 2, (PropertySpec("position.x", "mm"),)))
        assert hub.type_count() == 2


class TestApply:
    def test_outcomes(self):
        hub = _hub(1)
        assert hub.apply_observation("r0", obs("r0", "position.x", 1.0, 10)).outcome is Outcome.APPLIED
        assert hub.apply_observation("r0", obs("r0", "position.x", 2.0, 9)).outcome is Outcome.REJECTED_STALE
        assert hub.apply_observation("r0", obs("r0", "position.x", 3.0, 10)).outcome is Outcome.APPLIED
        assert hub.apply_observation("r0", obs("r0", "speed", 1.0, 11)).outcome is Outcome.REJECTED_SCHEMA
        assert hub.apply_observation("r0", obs("r0", "position.x", 1.0, 11, "mm")).outcome \
            is Outcome.REJECTED_SCHEMA
        snap = hub.query_state("r0")
        assert snap.state["position.x"] == (3.0, 10)
        assert snap.state_version == 2
        assert hub.history_size() == 5

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 2), st.sampled_from(["position.x", "position.y"]),
                              st.integers(0, 20), st.floats(-5, 5, allow_nan=False)), max_size=60))
    def test_sort_and_fold_oracle(self, stream):
        hub = _hub(3)
        sent = [obs(f"r{i}", p, v, ts) for i, p, ts, v in stream]
        for o in sent:
            hub.apply_observation(o.asset_id, o)
        oracle = sort_and_fold(sent)
        got = {(iid, p): v for iid in hub.instance_ids()
               for p, v in hub.query_state(iid).state.items()}
        assert got == oracle
        assert hub.history_size() == len(sent)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from(["position.x", "position.y"]), st.integers(0, 10)),
                    min_size=1, max_size=30), st.data())
    def test_replay_matches_live_state(self, stream, data):
        hub = _hub(1)
        snaps = [hub.query_state("r0")]
        for i, (p, ts) in enumerate(stream):
            r = hub.apply_observation("r0", obs("r0", p, float(i), ts))
            if r.outcome is Outcome.APPLIED:
                snaps.append(hub.query_state("r0"))
        v = data.draw(st.integers(0, len(snaps) - 1))
        assert hub.query_state("r0", at_version=v).state == snaps[v].state
        with pytest.raises(UnknownVersion):
            hub.query_state("r0", at_version=len(snaps))


class TestEvents:
    def test_change_events_gap_free(self, token):
        bb = Backbone()
        sub = bb.subscribe("p", "twin.changes.*")
        hub = _hub(2, backbone=bb, identity=token)
        rng = random.Random(3)
        for k in range(200):
            iid = f"r{rng.randrange(2)}"
            hub.apply_observation(iid, obs(iid, "position.x", 0.0, rng.randrange(50)))
        versions = {}
        for env in bb.poll(sub, max=1000):
            doc = json.loads(env.payload)
            versions.setdefault(doc["instance_id"], []).append(doc["state_version"])
        for iid, vs in versions.items():
            assert vs == list(range(1, len(vs) + 1))
            assert vs[-1] == hub.query_state(iid).state_version

    def test_archive_sink(self, token):
        bb = Backbone()
        sink = ArchiveSink(bb, ["context.z1.*"])
        for i in range(5):
            bb.publish("context.z1.r0", b"{}", identity=token)
        bb.publish("context.z2.r0", b"{}", identity=token)
        assert sink.drain() == 5 and len(sink.rows) == 5


class TestReads:
    def test_guarded_reads(self):
        auth = TrustAuthority()
        engine = PolicyEngine(auth, load_policies([
            {"effect": "permit", "roles": ["ops"], "resource": "twin.*", "action": "read"},
            {"effect": "deny", "roles": ["*"], "resource": "twin.restricted.*", "action": "read"}]))
        hub = TwinHub(guard=engine)
        hub.register_type(AMR)
        hub.instantiate(("amr", 1), "r0", "z1")
        ops = auth.issue_token("ops", {"ops"}, 100, 0)
        hub.query_state("r0", ops, now=1)
        with pytest.raises(AccessDenied):
            hub.query_state("r0", auth.issue_token("x", {"x"}, 100, 0), now=1)
        with pytest.raises(AccessDenied):
            hub.query_state("r0", ops, now=101)
        assert [r.decision for r in engine.audit.records] == ["deny", "deny"]


class TestExport:
    def test_history_csv_rows(self):
        hub = _hub(2)
        for k in range(7):
            hub.apply_observation("r1", obs("r1", "position.y", k / 3, 7 - k))
        rows = list(csv.DictReader(io.StringIO(hub.export_history_csv())))
        assert len(rows) == hub.history_size() == 7
        assert rows[0]["verdict"] == "applied" and rows[1]["verdict"] == "rejected-stale"
        assert float(rows[3]["value"]) == 1.0

    def test_snapshots(self):
        hub = _hub(2)
        hub.apply_observation("r0", obs("r0", "position.x", 1.5, 1))
        hub.relocate("r0", "z2")
        docs = json.loads(hub.export_snapshots())
        assert docs[0]["zone"] == "z2"
        assert docs[0]["state"]["position.x"] == {"value": 1.5, "timestamp": 1}
        assert hub.query_state("r0").digest() != hub.query_state("r1").digest()
