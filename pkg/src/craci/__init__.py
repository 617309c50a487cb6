"""CRACI desk-scale kit: event backbone, edge gateway, semantic context,
twin hub, trust and governance, observability and lifecycle, orchestration
and migration, and a deterministic continuum simulator."""

from .backbone import Backbone, Envelope
from .harness import (ScenarioConfig, compare_placements, load_config, run_scenario,
                      sweep_fleet)
from .observability import Manifest, TraceStore, reconcile
from .trust import AuditLog, PolicyEngine, TrustAuthority, evaluate
from .twin import TwinHub

__version__ = "0.1.0"

__all__ = ["AuditLog", "Backbone", "Envelope", "Manifest", "PolicyEngine", "ScenarioConfig",
           "TraceStore", "TrustAuthority", "TwinHub", "compare_placements", "evaluate",
           "load_config", "reconcile", "run_scenario", "sweep_fleet"]
