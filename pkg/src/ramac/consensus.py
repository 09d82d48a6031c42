"""Communication graph construction and scalar gossip averaging.

Devices exchange scalar rewards with their graph neighbors through repeated
weighted averaging with a doubly stochastic matrix. The number of averaging
rounds needed for a target accuracy is governed by the second-largest
eigenvalue modulus of the weight matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import networkx as nx
import numpy as np

STOCHASTIC_TOL = 1e-12
EIGEN_TOL = 1e-9

# Weight assignment rules for the consensus matrix.
RULE_EQUAL = "equal"          # 1/(deg_i + 1) on every link of node i
RULE_METROPOLIS = "metropolis"  # 1/(1 + max(deg_i, deg_j)); valid on any graph


class TopologyError(ValueError):
    """Raised when a graph or weight matrix cannot support consensus."""


@dataclass(frozen=True)
class ConsensusTopology:
    """Connected device graph plus its doubly stochastic weight matrix."""

    n_devices: int
    adjacency: np.ndarray   # (n, n) bool, symmetric, zero diagonal
    weights: np.ndarray     # (n, n) float, doubly stochastic
    rounds: int             # gossip rounds per consensus step
    min_weight: float       # smallest diagonal/edge weight (positive)

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])


def build_ws_graph(
    n: int,
    neighbors_per_side: int,
    rewire_prob: float,
    seed: int,
    max_retries: int = 50,
) -> np.ndarray:
    """Generate a connected Watts-Strogatz adjacency matrix.

    With ``rewire_prob == 0`` this is the deterministic ring lattice where
    each node links to its ``neighbors_per_side`` nearest nodes on each side.
    A disconnected rewiring outcome is regenerated with an incremented seed,
    up to ``max_retries`` attempts.
    """
    if n < 2:
        raise TopologyError(f"need at least 2 devices, got {n}")
    if neighbors_per_side < 1:
        raise TopologyError("neighbors_per_side must be >= 1")
    if not 0.0 <= rewire_prob <= 1.0:
        raise TopologyError(f"rewire_prob must be in [0, 1], got {rewire_prob}")

    if n == 2:
        # Smallest ring degenerates to a single link.
        adj = np.zeros((2, 2), dtype=bool)
        adj[0, 1] = adj[1, 0] = True
        return adj

    k = 2 * neighbors_per_side
    if k >= n:
        raise TopologyError(
            f"neighbors_per_side={neighbors_per_side} too large for n={n}"
        )

    for attempt in range(max_retries):
        g = nx.watts_strogatz_graph(n, k, rewire_prob, seed=seed + attempt)
        if nx.is_connected(g):
            adj = np.zeros((n, n), dtype=bool)
            for u, v in g.edges:
                adj[u, v] = adj[v, u] = True
            return adj
    raise TopologyError(
        f"no connected graph after {max_retries} attempts (seed={seed})"
    )


def consensus_matrix(adjacency: np.ndarray, rule: str = RULE_EQUAL) -> np.ndarray:
    """Build the doubly stochastic averaging matrix for a connected graph.

    The default rule gives every link of node i the weight 1/(deg_i + 1) and
    puts the remainder on the diagonal. That matrix is doubly stochastic only
    on regular graphs; irregular inputs are rejected with a diagnostic. The
    Metropolis rule (1/(1 + max(deg_i, deg_j))) works on any connected graph.
    """
    adj = np.asarray(adjacency, dtype=bool)
    n = adj.shape[0]
    if adj.shape != (n, n) or not np.array_equal(adj, adj.T) or adj.diagonal().any():
        raise TopologyError("adjacency must be square, symmetric, no self-loops")
    if not nx.is_connected(nx.from_numpy_array(adj)):
        raise TopologyError("graph is disconnected; consensus cannot reach the mean")

    deg = adj.sum(axis=1)
    weights = np.zeros((n, n))
    if rule == RULE_EQUAL:
        for i in range(n):
            weights[i, adj[i]] = 1.0 / (deg[i] + 1)
            weights[i, i] = 1.0 - weights[i].sum()
    elif rule == RULE_METROPOLIS:
        for i in range(n):
            for j in np.flatnonzero(adj[i]):
                weights[i, j] = 1.0 / (1.0 + max(deg[i], deg[j]))
            weights[i, i] = 1.0 - weights[i].sum()
    else:
        raise TopologyError(f"unknown weight rule {rule!r}")

    col_err = np.abs(weights.sum(axis=0) - 1.0).max()
    row_err = np.abs(weights.sum(axis=1) - 1.0).max()
    if max(col_err, row_err) > STOCHASTIC_TOL:
        raise TopologyError(
            f"weight matrix is not doubly stochastic (row err {row_err:.2e}, "
            f"col err {col_err:.2e}); the equal-weight rule requires a regular "
            f"graph, try rule={RULE_METROPOLIS!r}"
        )
    return weights


def second_eigenvalue(weights: np.ndarray) -> float:
    """Second-largest eigenvalue modulus of a symmetric stochastic matrix."""
    eig = np.abs(np.linalg.eigvalsh(weights))
    eig.sort()
    return float(eig[-2])


def rounds_for_accuracy(weights: np.ndarray, eps: float) -> int:
    """Gossip rounds needed to reach normalized RMSE ``eps``.

    Evaluates ceil(0.5 * ln(1/eps) / ln(1/lambda2)). A spectral gap of 1
    (lambda2 == 0) is clamped to a single round, which already reaches the
    exact mean.
    """
    return rounds_from_lambda2(second_eigenvalue(weights), eps)


def rounds_from_lambda2(lam2: float, eps: float) -> int:
    """Same round-count formula, starting from a known eigenvalue modulus."""
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must be in (0, 1], got {eps}")
    if eps == 1.0:
        return 0
    if lam2 >= 1.0 - EIGEN_TOL:
        raise TopologyError(f"lambda2={lam2:.6f} >= 1; consensus will not contract")
    if lam2 <= EIGEN_TOL:
        return 1
    return int(np.ceil(0.5 * np.log(1.0 / eps) / np.log(1.0 / lam2)))


def make_topology(
    n: int,
    neighbors_per_side: int = 1,
    rewire_prob: float = 0.0,
    seed: int = 0,
    eps: float | None = None,
    rounds: int | None = None,
    rule: str = RULE_EQUAL,
) -> ConsensusTopology:
    """Build graph, weights, and round count in one step.

    Exactly one of ``eps`` (accuracy target) or ``rounds`` (explicit G) picks
    the number of gossip rounds; with neither given, eps defaults to 0.005.
    """
    adj = build_ws_graph(n, neighbors_per_side, rewire_prob, seed)
    weights = consensus_matrix(adj, rule=rule)
    if rounds is not None and eps is not None:
        raise ValueError("give either eps or rounds, not both")
    if rounds is None:
        rounds = rounds_for_accuracy(weights, 0.005 if eps is None else eps)
    if rounds < 0:
        raise ValueError("rounds must be nonnegative")
    edge_weights = weights[adj]
    min_weight = float(min(weights.diagonal().min(), edge_weights.min()))
    if min_weight <= 0.0:
        raise TopologyError("weight matrix has a nonpositive diagonal/edge entry")
    return ConsensusTopology(
        n_devices=n,
        adjacency=adj,
        weights=weights,
        rounds=int(rounds),
        min_weight=min_weight,
    )


def gossip(values: np.ndarray, topology: ConsensusTopology, rounds: int | None = None) -> np.ndarray:
    """Run G synchronous rounds of weighted averaging over the graph.

    Returns L^G @ values. The mean of the vector is preserved up to floating
    rounding and every output stays inside [min(values), max(values)].
    """
    x = np.asarray(values, dtype=float)
    if x.shape != (topology.n_devices,):
        raise ValueError(
            f"values must have length {topology.n_devices}, got shape {x.shape}"
        )
    g = topology.rounds if rounds is None else rounds
    if g < 0:
        raise ValueError("rounds must be nonnegative")
    for _ in range(g):
        x = topology.weights @ x
    return x
