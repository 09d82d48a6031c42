"""Random-access MAC simulation with consensus-based decentralized actor-critic learning."""

from ramac.consensus import (
    ConsensusTopology,
    build_ws_graph,
    consensus_matrix,
    gossip,
    rounds_for_accuracy,
)
from ramac.simulator import SimConfig, Simulator, mean_delay_ms, n_gap, throughput_mbps

__all__ = [
    "ConsensusTopology",
    "build_ws_graph",
    "consensus_matrix",
    "gossip",
    "rounds_for_accuracy",
    "SimConfig",
    "Simulator",
    "throughput_mbps",
    "mean_delay_ms",
    "n_gap",
]
