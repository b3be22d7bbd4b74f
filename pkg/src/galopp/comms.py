"""Communication graph and decentralized penalty-map bookkeeping.

Two agents share an edge when their true Euclidean distance is at most
the communication range. Anchor reachability is computed by an explicit
depth-first search. Each agent keeps its own full-grid penalty copy;
per step every copy decays, the owner zeroes its own footprint if it is
localized, and copies within one connected component are merged by
element-wise maximum (penalties are <= 0, so max keeps the freshest
value per cell). Centralized mode replaces the copies with the true
global field.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np


@dataclass
class ConnectivityGraph:
    """Undirected range graph over agent indices.

    ``adjacency`` is the 0/1 matrix with unit diagonal that the policy
    network consumes; ``anchor_reachable`` marks nodes connected to at
    least one anchor (anchors included).
    """

    n: int
    edges: frozenset
    adjacency: np.ndarray
    anchor_reachable: np.ndarray

    def neighbors(self, i: int) -> list[int]:
        return [j for j in range(self.n)
                if j != i and self.adjacency[i, j] > 0.0]

    def components(self) -> List[List[int]]:
        """Connected components as sorted index lists, in index order."""
        seen = [False] * self.n
        out: List[List[int]] = []
        for start in range(self.n):
            if seen[start]:
                continue
            stack = [start]
            seen[start] = True
            comp = []
            while stack:
                node = stack.pop()
                comp.append(node)
                for nxt in self.neighbors(node):
                    if not seen[nxt]:
                        seen[nxt] = True
                        stack.append(nxt)
            out.append(sorted(comp))
        return out

    def normalized_adjacency(self, mode: str = "none") -> np.ndarray:
        """Adjacency for the graph layer: raw 0/1 + I, or symmetrically
        normalized D^-1/2 (A+I) D^-1/2."""
        if mode == "none":
            return self.adjacency.copy()
        if mode == "sym":
            degrees = self.adjacency.sum(axis=1)
            inv_sqrt = 1.0 / np.sqrt(degrees)
            return self.adjacency * inv_sqrt[:, None] * inv_sqrt[None, :]
        raise ValueError(f"unknown adjacency normalization {mode!r}")


def build_graph(positions: Sequence[Sequence[float]], roles: Sequence[str],
                comm_range: float) -> ConnectivityGraph:
    """Range graph over true positions with anchor reachability via DFS."""
    if comm_range < 0:
        raise ValueError("comm_range must be >= 0")
    pos = np.asarray(positions, dtype=np.float64).reshape(len(roles), 2)
    n = pos.shape[0]
    deltas = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((deltas ** 2).sum(axis=2))
    adjacency = (dist <= comm_range).astype(np.float64)
    np.fill_diagonal(adjacency, 1.0)
    edges = frozenset((i, j) for i in range(n) for j in range(i + 1, n)
                      if adjacency[i, j] > 0.0)
    neighbor_lists = [[j for j in range(n) if j != i and adjacency[i, j] > 0.0]
                      for i in range(n)]
    reachable = np.zeros(n, dtype=bool)
    stack = [i for i, role in enumerate(roles) if role == "anchor"]
    for i in stack:
        reachable[i] = True
    while stack:
        node = stack.pop()
        for nxt in neighbor_lists[node]:
            if not reachable[nxt]:
                reachable[nxt] = True
                stack.append(nxt)
    return ConnectivityGraph(n=n, edges=edges, adjacency=adjacency,
                             anchor_reachable=reachable)


def merge_maps(maps: Sequence[np.ndarray]) -> np.ndarray:
    """Element-wise maximum of penalty copies (idempotent, commutative,
    associative, monotone; identity is the all -max_penalty map)."""
    if len(maps) == 0:
        raise ValueError("merge_maps needs at least one map")
    merged = np.array(maps[0], dtype=np.float64, copy=True)
    for other in maps[1:]:
        if other.shape != merged.shape:
            raise ValueError("map shapes differ")
        np.maximum(merged, other, out=merged)
    return merged


class AgentMapSet:
    """Per-agent penalty copies with per-component merging.

    In decentralized mode each agent owns an independent (width, height)
    array; ``step`` applies decay, the owner's observation and the
    component merges. In centralized mode every agent reads the true
    field and merging is a no-op.
    """

    def __init__(self, n_agents: int, grid, mode: str = "decentralized"):
        if mode not in ("decentralized", "centralized"):
            raise ValueError(f"unknown map mode {mode!r}")
        self.mode = mode
        self.n_agents = n_agents
        shape = (grid.width, grid.height)
        if mode == "decentralized":
            self._copies = [np.zeros(shape, dtype=np.float64)
                            for _ in range(n_agents)]
            self._shared = None
        else:
            self._copies = None
            self._shared = np.zeros(shape, dtype=np.float64)

    def map_for(self, index: int) -> np.ndarray:
        if self.mode == "centralized":
            return self._shared
        return self._copies[index]

    def step(self, grid, footprints: Sequence[np.ndarray],
             localized: Sequence[bool], components: Sequence[Sequence[int]],
             true_values: np.ndarray) -> None:
        """Advance all copies one step (decay, observe, merge)."""
        if self.mode == "centralized":
            self._shared = true_values.copy()
            return
        from .env import decay_values  # local import to avoid a cycle
        for i in range(self.n_agents):
            updated = decay_values(self._copies[i], grid)
            if localized[i]:
                updated = np.where(footprints[i], 0.0, updated)
            self._copies[i] = updated
        for comp in components:
            if len(comp) < 2:
                continue
            merged = merge_maps([self._copies[i] for i in comp])
            for i in comp:
                self._copies[i] = merged.copy()
