"""Randomized self-stabilizing leader election and spanning tree construction."""
from __future__ import annotations

from .graph import ScheduleParams, Topology, generate
from .oracle import check_trace, is_stabilized
from .sim import RunConfig, World, adversary_init, run

__all__ = ["RunConfig", "ScheduleParams", "Topology", "World", "adversary_init",
           "check_trace", "generate", "is_stabilized", "run"]
