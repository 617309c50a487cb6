"""Tracing, latency decomposition, manifests and reconciliation."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from craci.errors import MalformedSpan, UnknownTrace, VersionRegression
from craci.observability import (Deploy, LatencyBreakdown, Manifest, ManifestRepository, Metrics,
                                 Move, Remove, SpanKind, TraceSpan, TraceStore, apply_actions,
                                 reconcile)

from spans import random_tree

PROC, COMM = SpanKind.PROCESSING, SpanKind.COMMUNICATION


class TestTraceStore:
    def test_rejections(self):
        ts = TraceStore()
        ts.record_span(TraceSpan("t", "root", None, COMM, 0, 10))
        bad = [TraceSpan("t", "x", "nope", PROC, 1, 2),
               TraceSpan("t", "x", "root", PROC, 5, 11),
               TraceSpan("t", "x", "root", PROC, 5, 4),
               TraceSpan("t", "root2", None, PROC, 0, 1),
               TraceSpan("t", "root", "root", PROC, 0, 1)]
        for span in bad:
            with pytest.raises(MalformedSpan):
                ts.record_span(span)
        ts.record_span(TraceSpan("t", "a", "root", PROC, 0, 4))
        with pytest.raises(MalformedSpan):
            ts.record_span(TraceSpan("t", "b", "root", PROC, 3, 5))
        ts.record_span(TraceSpan("t", "b", "root", COMM, 4, 5))
        with pytest.raises(UnknownTrace):
            ts.decompose_latency("ghost")

    def test_breakdown_example(self):
        ts = TraceStore()
        ts.record_span(TraceSpan("t", "r", None, COMM, 0, 20))
        ts.record_span(TraceSpan("t", "a", "r", COMM, 0, 3))
        ts.record_span(TraceSpan("t", "b", "r", PROC, 3, 8))
        ts.record_span(TraceSpan("t", "c", "r", COMM, 8, 19))
        b = ts.decompose_latency("t")
        assert b == LatencyBreakdown(20, 5, 14, 1)
        assert b.coverage == pytest.approx(0.95)
        assert b.communication_share == pytest.approx(14 / 19)

    def test_degenerate(self):
        assert LatencyBreakdown(0, 0, 0, 0).communication_share == 0.0
        assert LatencyBreakdown(0, 0, 0, 0).coverage == 1.0

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32))
    def test_leaf_sum_and_rebuild(self, seed):
        spans, proc, comm = random_tree(random.Random(seed), "t")
        ts = TraceStore()
        for s in spans:
            ts.record_span(s)
        assert ts.parent_links("t") == {s.span_id: s.parent_span_id for s in spans}
        b = ts.decompose_latency("t")
        assert (b.processing, b.communication) == (proc, comm)
        assert b.total == spans[0].duration
        assert b.unattributed == b.total - proc - comm >= 0

    def test_export(self):
        ts = TraceStore()
        ts.record_span(TraceSpan("t", "r", None, COMM, 0, 1))
        assert '"span_id": "r"' in ts.export_jsonl()

    def test_metrics(self):
        m = Metrics()
        m.inc("a")
        m.inc("a", 2)
        assert m.get("a") == 3 and m.snapshot() == {"a": 3}


services = st.sampled_from(["gateway", "semantic", "twin", "predictor", "orchestrator"])
locations = st.sampled_from(["z1", "z2", "core", "cloud"])
placements = st.dictionaries(services, locations, max_size=5)


class TestReconcile:
    def test_actions(self):
        cur = Manifest(1, {"a": "z1", "b": "core", "c": "cloud"})
        new = Manifest(2, {"a": "z2", "c": "cloud", "d": "edge"})
        assert reconcile(cur, new) == [Move("a", "z1", "z2"), Remove("b", "core"), Deploy("d", "edge")]

    def test_version_regression(self):
        with pytest.raises(VersionRegression):
            reconcile(Manifest(2, {}), Manifest(2, {}))

    @settings(max_examples=200, deadline=None)
    @given(placements, placements, st.integers(0, 100), st.integers(1, 100))
    def test_apply_yields_desired(self, a, b, v, dv):
        cur, desired = Manifest(v, a), Manifest(v + dv, b)
        actions = reconcile(cur, desired)
        assert apply_actions(cur, actions, desired.version) == desired
        assert len(actions) == sum(a.get(k) != b.get(k) for k in set(a) | set(b))
        assert reconcile(desired, Manifest(desired.version + 1, b)) == []

    def test_with_placement_bumps_version(self):
        m = Manifest(3, {"a": "z1"})
        assert m.with_placement("a", None) == Manifest(4, {})
        assert m.config_hash == Manifest(9, {"a": "z1"}).config_hash


class TestRepository:
    def test_commit_and_reconcile(self, tmp_path):
        repo = ManifestRepository(tmp_path)
        assert repo.reconcile() == []
        repo.commit(Manifest(1, {"a": "z1"}))
        repo.commit(Manifest(2, {"a": "z2", "b": "core"}))
        with pytest.raises(VersionRegression):
            repo.commit(Manifest(2, {}))
        assert repo.reconcile() == [Deploy("a", "z2"), Deploy("b", "core")]
        assert repo.deployed() == Manifest(2, {"a": "z2", "b": "core"})
        assert repo.reconcile() == []
