"""Directed communication graph of the robot team.

Edge direction convention (fixed throughout the package): ``a_ij = 1`` means
agent *i* receives information from agent *j*.  This matches the information
flow used by the consensus estimator; much of the formation-control
literature uses the transpose, so the convention is asserted here once and
everything else builds on it.

A subset of agents (``access_flags``, the b_i) additionally receives the
cooperative task trajectory from a virtual leader.  The team can reach
consensus iff every agent is reachable from that leader set, i.e. the graph
augmented with the leader edges contains a directed spanning tree rooted at
the leader.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numpy.typing import NDArray


class SingularSystem(Exception):
    """(L + B) is singular: the graph has no directed spanning tree."""


class NonPositiveQ(Exception):
    """The scaled consensus matrix Q failed the positive-definiteness check."""


@dataclass(frozen=True)
class Topology:
    """Communication graph: adjacency (receive convention) plus access flags."""

    n_agents: int
    adjacency: NDArray[np.float64]
    access_flags: NDArray[np.float64]

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=np.float64)
        flags = np.asarray(self.access_flags, dtype=np.float64)
        if adj.shape != (self.n_agents, self.n_agents):
            raise ValueError("adjacency must be n x n")
        if flags.shape != (self.n_agents,):
            raise ValueError("access_flags must have length n")
        if np.any((adj != 0.0) & (adj != 1.0)) or np.any((flags != 0.0) & (flags != 1.0)):
            raise ValueError("adjacency and access_flags must be 0/1")
        if np.any(np.diag(adj) != 0.0):
            raise ValueError("no self-loops allowed")
        if not np.any(flags == 1.0):
            raise ValueError("at least one agent must have access to the task (b_i = 1)")
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "access_flags", flags)


@dataclass(frozen=True)
class LaplacianBundle:
    """Laplacian, access matrix and the Lemma-1 scaling weights.

    ``w`` solves (L + B) w = 1 exactly; ``p_matrix`` = diag(1/w_i) and
    ``q_matrix`` = P(L+B) + (L+B)^T P is symmetric positive definite whenever
    the (leader-augmented) graph has a directed spanning tree.
    """

    laplacian: NDArray[np.float64]
    b_matrix: NDArray[np.float64]
    w: NDArray[np.float64]
    p_matrix: NDArray[np.float64]
    q_matrix: NDArray[np.float64]


def neighbors(topology: Topology, i: int) -> set[int]:
    """Agents agent ``i`` receives from: {j : a_ij = 1}. Zero-based indices."""
    if not 0 <= i < topology.n_agents:
        raise IndexError(f"agent index {i} out of range (n={topology.n_agents})")
    return set(np.flatnonzero(topology.adjacency[i]).tolist())


def has_spanning_tree(topology: Topology) -> bool:
    """True iff every agent is reachable from the leader-informed set.

    Information flows j -> i when a_ij = 1, so we forward-propagate from the
    agents with b_i = 1 along "who listens to me" edges.
    """
    n = topology.n_agents
    reached = topology.access_flags.astype(bool).copy()
    frontier = list(np.flatnonzero(reached))
    while frontier:
        j = frontier.pop()
        # listeners of j: agents i with a_ij = 1
        for i in np.flatnonzero(topology.adjacency[:, j]):
            if not reached[i]:
                reached[i] = True
                frontier.append(i)
    return bool(reached.all())


def _exact_solve(a_rows: list[list[Fraction]], rhs: list[Fraction]) -> list[Fraction]:
    """Gaussian elimination over the rationals (graphs are tiny)."""
    n = len(rhs)
    aug = [row[:] + [rhs[k]] for k, row in enumerate(a_rows)]
    for col in range(n):
        pivot = next((r for r in range(col, n) if aug[r][col] != 0), None)
        if pivot is None:
            raise SingularSystem("(L + B) is singular; graph lacks a spanning tree")
        aug[col], aug[pivot] = aug[pivot], aug[col]
        inv = Fraction(1, 1) / aug[col][col]
        aug[col] = [x * inv for x in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [x - f * y for x, y in zip(aug[r], aug[col])]
    return [aug[r][n] for r in range(n)]


def build_laplacian(topology: Topology, pd_threshold: float = 1e-10) -> LaplacianBundle:
    """Build L, B and the Lemma-1 weight bundle.

    The weights are found by an exact rational solve of (L+B)w = 1 (the
    adjacency entries are integers, so w is rational), then converted to
    float.  Positive definiteness of Q is verified by a symmetric eigenvalue
    decomposition.
    """
    adj = topology.adjacency
    lap = np.diag(adj.sum(axis=1)) - adj
    b_mat = np.diag(topology.access_flags)
    lb = lap + b_mat

    n = topology.n_agents
    rows = [[Fraction(int(lb[i, j])) for j in range(n)] for i in range(n)]
    w_frac = _exact_solve(rows, [Fraction(1)] * n)
    if any(wi <= 0 for wi in w_frac):
        raise SingularSystem("Lemma-1 weights not strictly positive")
    w = np.array([float(wi) for wi in w_frac])

    p_mat = np.diag(1.0 / w)
    q_mat = p_mat @ lb + lb.T @ p_mat
    eigs = np.linalg.eigvalsh(0.5 * (q_mat + q_mat.T))
    if eigs.min() <= pd_threshold:
        raise NonPositiveQ(f"Q not positive definite (min eigenvalue {eigs.min():.3e})")
    return LaplacianBundle(laplacian=lap, b_matrix=b_mat, w=w, p_matrix=p_mat, q_matrix=q_mat)


def paper_team_topology() -> Topology:
    """The four-agent graph used by all bundled scenarios.

    Agent 1 (index 0) is the only one with task access; 2 listens to {1,3},
    3 listens to 2, 4 listens to 1.  Lemma-1 weights come out [1, 3, 4, 2].
    """
    adj = np.zeros((4, 4))
    adj[1, 0] = 1.0
    adj[1, 2] = 1.0
    adj[2, 1] = 1.0
    adj[3, 0] = 1.0
    return Topology(n_agents=4, adjacency=adj, access_flags=np.array([1.0, 0.0, 0.0, 0.0]))
