"""Continuum simulator: config handling, accounting invariants, placement comparison."""

import json
import math
from dataclasses import replace

import pytest

from craci.errors import ConfigError, InvalidPlacement
from craci.harness import (LINK_PROFILES, ScenarioConfig, build_topology, compare_placements,
                           ground_truth_crossings, load_config, make_trajectory, run_fleet,
                           run_scenario, topology_for)
from craci.observability import Manifest

SHORT = ScenarioConfig(duration=3000)


class TestConfig:
    def test_round_trip(self):
        cfg = ScenarioConfig(seed=7, fleet_sizes=[2, 3], mobility="linear")
        assert ScenarioConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    @pytest.mark.parametrize("doc", [
        {"bogus": 1}, {"duration": 0}, {"mobility": "teleport"}, {"fleet_sizes": []},
        {"telemetry_jitter": 500}, {"link_profile": "nope"}, {"processing_ticks": {"x": 1}},
        {"policies": [{"effect": "maybe"}]}, [],
    ])
    def test_rejects(self, doc):
        with pytest.raises(ConfigError):
            cfg = ScenarioConfig.from_dict(doc)
            topology_for(cfg)

    def test_flat_placement_and_policy_file(self, tmp_path):
        (tmp_path / "pol.json").write_text(json.dumps(
            [{"effect": "permit", "resource": "*", "action": "*"}]))
        (tmp_path / "c.json").write_text(json.dumps(
            {"placement": {"gateway": "edge", "semantic": "core", "twin": "core",
                           "predictor": "cloud", "orchestrator": "core", "backbone": "core"},
             "policies": "pol.json"}))
        cfg = load_config(tmp_path / "c.json")
        assert cfg.placement.placements["predictor"] == "cloud"
        assert cfg.policies[0]["action"] == "*"

    def test_unreadable(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.json")

    def test_bad_placement(self):
        cfg = replace(SHORT, placement=Manifest(1, {"gateway": "mars"}))
        with pytest.raises(InvalidPlacement):
            run_scenario(cfg)


class TestTopology:
    def test_default_paths(self):
        topo = topology_for(ScenarioConfig())
        assert topo.latency("z1", "z1") == 1
        assert topo.latency("z1", "core") == 2
        assert topo.latency("z1", "z2") == 4
        assert topo.latency("z1", "cloud") == 12

    def test_symmetric(self):
        topo = topology_for(ScenarioConfig(link_profile="symmetric"))
        assert {topo.latency(a, b) for a in topo.locations for b in topo.locations} == {3}


class TestMobility:
    def test_linear_stops_at_edge(self):
        import random
        cfg = ScenarioConfig(mobility="linear", speed=0.01)
        traj = make_trajectory(random.Random(1), cfg)
        x, y = traj.position(10**6)
        assert 0 <= x <= 10 and 0 <= y <= 10

    def test_crossings_alternate_zones(self):
        import random
        cfg = ScenarioConfig()
        traj = make_trajectory(random.Random(5), cfg)
        zones = topology_for(cfg).zones
        out = ground_truth_crossings(traj, zones, cfg.duration)
        assert out and all(a[1] != b[1] for a, b in zip(out, out[1:]))
        assert all(0 < t < cfg.duration for t, _ in out)


class TestRun:
    def test_empty_fleet(self):
        rep = run_fleet(SHORT, topology_for(SHORT), 0)
        assert rep.requests == 0 and rep.comm_share == 0.0 and rep.invariant_violations == []
        assert math.isnan(rep.latency_mean)

    def test_zero_links_zero_share(self):
        cfg = replace(SHORT, link_profile="zero", broker_ticks=0)
        rep = run_fleet(cfg, topology_for(cfg), 1)
        assert rep.comm_share == 0.0
        assert rep.latency_mean == sum(cfg.processing_ticks.values())

    def test_invariants_and_conservation(self):
        rep = run_fleet(SHORT, topology_for(SHORT), 12)
        assert rep.invariant_violations == []
        assert rep.observations == 2 * rep.requests
        assert rep.applied + rep.rejected_stale + rep.rejected_schema + rep.quarantined \
            == rep.observations
        assert rep.min_coverage >= 0.95
        twin = rep.artifacts["twin"]
        assert twin.history_size() == rep.applied + rep.rejected_stale + rep.rejected_schema

    def test_noise_triggers_quarantine_not_loss(self):
        cfg = replace(SHORT, noise_std=2.0)
        rep = run_fleet(cfg, topology_for(cfg), 5)
        assert rep.quarantined > 0 and rep.invariant_violations == []

    def test_processing_constant(self):
        rep = run_scenario(replace(SHORT, fleet_sizes=[1, 30]))
        assert rep.fleets[0].proc_ticks == rep.fleets[1].proc_ticks == 5

    def test_deterministic(self):
        a = run_scenario(replace(SHORT, fleet_sizes=[4]))
        b = run_scenario(replace(SHORT, fleet_sizes=[4]))
        assert a.to_csv() == b.to_csv()
        assert a.fleets[0].artifacts["twin"].state_hash() == b.fleets[0].artifacts["twin"].state_hash()

    def test_robot_independent_of_fleet(self):
        small = run_fleet(SHORT, topology_for(SHORT), 1)
        big = run_fleet(SHORT, topology_for(SHORT), 5)
        first = [h for h in big.handovers if h.robot_id == "amr-1"]
        assert [(h.at, h.to_zone) for h in small.handovers] == [(h.at, h.to_zone) for h in first]

    def test_predictor_off_means_cold(self):
        cfg = replace(SHORT, predictor_enabled=False)
        rep = run_fleet(cfg, topology_for(cfg), 5)
        assert rep.proactive_migrations == 0
        assert all(h.gap == cfg.prewarm_duration for h in rep.handovers)

    def test_migrations_are_audited(self):
        rep = run_fleet(SHORT, topology_for(SHORT), 5)
        audit = rep.artifacts["audit"]
        assert sum(r.action == "migrate" for r in audit.records) == rep.migrations

    def test_uniformly_slower_links_never_faster(self):
        base = topology_for(SHORT)
        for bump in (1, 3):
            slow = build_topology(base.zones,
                                  {k: v + bump for k, v in LINK_PROFILES["default"].items()})
            a = run_fleet(SHORT, base, 20).latencies
            b = run_fleet(SHORT, slow, 20).latencies
            assert all(b[k] >= a[k] for k in a)


class TestCompare:
    def test_analytic_delta_single_robot(self):
        # predictor reached from the core broker: 2 link crossings, cloud 10 vs edge 2
        cmp = compare_placements(replace(SHORT, fleet_sizes=[1]))
        assert set(cmp.fleets[0].deltas.values()) == {16}

    def test_symmetric_zero(self):
        cmp = compare_placements(replace(SHORT, fleet_sizes=[1, 5], link_profile="symmetric"))
        assert all(d == 0 for c in cmp.fleets for d in c.deltas.values())
        assert "false" in cmp.to_csv()

    def test_csv(self):
        cmp = compare_placements(replace(SHORT, fleet_sizes=[2]))
        header, row = cmp.to_csv().splitlines()
        assert header.startswith("fleet,requests") and row.endswith("true")
