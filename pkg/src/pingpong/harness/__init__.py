"""Deterministic simulation: in-process clusters and trace replay."""

from .cluster import ClusterConfig, SimResult, run_cluster_sim
from .replay import MsgTrace, load_trace, simulate_dial, simulate_notify

__all__ = [
    "ClusterConfig",
    "SimResult",
    "run_cluster_sim",
    "MsgTrace",
    "load_trace",
    "simulate_dial",
    "simulate_notify",
]
