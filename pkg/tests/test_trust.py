"""Trust and governance: tokens, ABAC decisions, audit chain, data-space export."""

import dataclasses
import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from craci.backbone import Envelope
from craci.trust import (AuditLog, DataSpaceInterface, Effect, Policy, PolicyEngine,
                         TrustAuthority, evaluate, load_audit_records, load_policies,
                         resource_matches, specificity, verify_audit_chain, verify_audit_export)


def P(pid, effect, resource, action="read", roles=("*",), obligations=()):
    return Policy(pid, Effect(effect), frozenset(roles), resource, action, frozenset(obligations))


class TestTokens:
    def test_valid_until_expiry(self, authority):
        tok = authority.issue_token("s", {"r"}, 10, 5)
        assert authority.verify(tok, 15)
        assert not authority.verify(tok, 16)
        assert not authority.verify(None, 0)

    @given(st.integers(0, 63), st.integers(0, 3))
    def test_signature_bit_flip(self, pos, bit):
        auth = TrustAuthority()
        tok = auth.issue_token("s", {"r"}, 100, 0)
        sig = bytearray(tok.signature.encode())
        sig[pos] ^= 1 << bit
        try:
            forged = dataclasses.replace(tok, signature=sig.decode())
        except UnicodeDecodeError:
            return
        assert not auth.verify(forged, 0)

    def test_tampered_roles(self, authority):
        tok = authority.issue_token("s", {"r"}, 100, 0)
        assert not authority.verify(dataclasses.replace(tok, roles=frozenset({"admin"})), 0)
        assert not authority.verify(dataclasses.replace(tok, ttl=10**9), 0)


class TestPatterns:
    def test_trailing_star_spans_segments(self):
        assert resource_matches("twin.*", "twin.r1")
        assert resource_matches("twin.*", "twin.changes.r1")
        assert not resource_matches("twin.*", "twin")
        assert resource_matches("*", "anything.at.all")
        assert specificity("twin.restricted.*") == 2
        assert specificity("*") == 0

    def test_bad_policy(self):
        with pytest.raises(ValueError):
            P("p", "permit", "twin.*", action="fly")
        with pytest.raises(ValueError):
            P("p", "permit", "twin.*.x")


class TestEvaluate:
    def test_default_deny(self):
        d = evaluate({"r"}, "read", "twin.r1", [])
        assert d.effect is Effect.DENY and d.matched_policy is None

    def test_most_specific_wins(self):
        pols = [P("a", "permit", "twin.*"), P("b", "deny", "twin.restricted.*")]
        assert evaluate({"x"}, "read", "twin.r1", pols).permitted
        assert not evaluate({"x"}, "read", "twin.restricted.r1", pols).permitted
        pols.append(P("c", "permit", "twin.restricted.r1"))
        assert evaluate({"x"}, "read", "twin.restricted.r1", pols).matched_policy == "c"

    def test_deny_wins_tie(self):
        pols = [P("a", "permit", "twin.*"), P("b", "deny", "twin.*")]
        d = evaluate({"x"}, "read", "twin.r1", pols)
        assert d.effect is Effect.DENY and d.matched_policy == "b"

    def test_roles_must_intersect(self):
        pols = [P("a", "permit", "twin.*", roles=("ops",))]
        assert evaluate({"ops", "x"}, "read", "twin.r", pols).permitted
        assert not evaluate({"x"}, "read", "twin.r", pols).permitted

    def test_obligations_union(self):
        pols = [P("a", "permit", "s.*", "migrate", obligations=("audit",)),
                P("b", "permit", "s.*", "migrate", obligations=("notify",))]
        assert evaluate({"o"}, "migrate", "s.x", pols).obligations == {"audit", "notify"}

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32))
    def test_order_independent(self, seed):
        rng = random.Random(seed)
        res = ["twin.*", "twin.r1", "twin.restricted.*", "*", "services.*", "twin.restricted.r1"]
        pols = [P(f"p{i}", rng.choice(["permit", "deny"]), rng.choice(res),
                  rng.choice(["read", "write", "*"]), rng.sample(["a", "b", "*"], 1))
                for i in range(rng.randint(0, 6))]
        queries = [(r, a, res_) for r in ({"a"}, {"b"}, {"a", "b"}) for a in ("read", "write")
                   for res_ in ("twin.r1", "twin.restricted.r1", "services.s", "other")]
        base = [evaluate(r, a, x, pols) for r, a, x in queries]
        for perm in itertools.islice(itertools.permutations(pols), 24):
            assert [evaluate(r, a, x, list(perm)) for r, a, x in queries] == base


def _log(n, rng=None):
    log = AuditLog()
    for i in range(n):
        log.append(f"u{i % 7}", "read", f"twin.r{i}", "deny" if i % 3 else "permit", i)
    return log


class TestAudit:
    def test_intact(self):
        log = _log(120)
        assert verify_audit_chain(log.records).intact
        assert verify_audit_export(log.export_jsonl()).intact
        assert verify_audit_export(AuditLog().export_jsonl()).intact

    @pytest.mark.parametrize("field,value", [("decision", "permit"), ("who", "mallory"),
                                             ("at", 10**6), ("resource", "twin.x")])
    def test_mutation_at_57(self, field, value):
        recs = _log(120).records
        recs[56] = dataclasses.replace(recs[56], **{field: value})
        assert verify_audit_chain(recs).broken_at == 57

    def test_deleted_record(self):
        recs = _log(120).records
        del recs[56]
        assert verify_audit_chain(recs).broken_at == 57

    def test_truncation(self):
        data = _log(20).export_jsonl()
        lines = data.split(b"\n")
        assert verify_audit_export(b"\n".join(lines[:10]) + b"\n").broken_at == 11
        assert not verify_audit_export(data[:-1]).intact
        assert not verify_audit_export(data[:-5]).intact

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32))
    def test_single_byte_corruption_oracle(self, seed):
        rng = random.Random(seed)
        data = _log(60).export_jsonl()
        pos = rng.randrange(len(data))
        new = rng.choice([b for b in range(256) if b != data[pos]])
        bad = data[:pos] + bytes([new]) + data[pos + 1:]
        a, b = data.split(b"\n"), bad.split(b"\n")
        oracle = next(i + 1 for i, (x, y) in enumerate(itertools.zip_longest(a, b)) if x != y)
        assert verify_audit_export(bad).broken_at == oracle

    def test_write_and_load(self, tmp_path):
        log = _log(5)
        log.write(tmp_path / "a.jsonl")
        assert load_audit_records(tmp_path / "a.jsonl") == log.records


class TestEngine:
    def test_one_record_per_deny(self):
        auth = TrustAuthority()
        engine = PolicyEngine(auth, load_policies([
            {"effect": "permit", "roles": ["ops"], "resource": "twin.*", "action": "read"},
            {"effect": "permit", "roles": ["orch"], "resource": "services.*", "action": "migrate",
             "obligations": ["audit"]}]))
        rng = random.Random(9)
        toks = [auth.issue_token(r, {r}, 50, 0) for r in ("ops", "orch", "x")] + [None]
        denies = audited = 0
        for i in range(500):
            d = engine.authorize(rng.choice(toks), rng.choice(["read", "migrate"]),
                                 rng.choice(["twin.r1", "services.s"]), rng.randrange(100))
            denies += not d.permitted
            audited += (not d.permitted) or "audit" in d.obligations
        recs = engine.audit.records
        assert len(recs) == audited
        assert sum(r.decision == "deny" for r in recs) == denies

    def test_decide_does_not_audit(self, authority):
        engine = PolicyEngine(authority, [])
        assert engine.decide(None, "read", "x", 0).reason == "invalid-token"
        assert len(engine.audit) == 0


class TestDataSpace:
    def _env(self, tags):
        return Envelope("m1", "context.z1.oven-1", b"", None, None, frozenset(tags), 0)

    def test_ot_export_needs_audit_obligation(self, authority):
        steward = authority.issue_token("st", {"steward"}, 100, 0)
        loose = PolicyEngine(authority, load_policies([
            {"effect": "permit", "roles": ["steward"], "resource": "dataspace.*",
             "action": "export"}]))
        ds = DataSpaceInterface(loose)
        assert not ds.export(self._env({"origin:ot"}), steward, "partner", 1).permitted
        assert ds.export(self._env(set()), steward, "partner", 1).permitted
        strict = PolicyEngine(authority, load_policies([
            {"effect": "permit", "roles": ["steward"], "resource": "dataspace.*",
             "action": "export", "obligations": ["audit"]}]))
        ds = DataSpaceInterface(strict)
        assert ds.export(self._env({"origin:ot"}), steward, "partner", 1).permitted
        assert [r.resource for r in strict.audit.records] == ["dataspace.partner.context.z1.oven-1"]
