"""Incremental topological map of visited and ghost nodes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mba.errors import ConsistencyError, NodeLookupError, StateError
from mba.features import PanoramaFeatures
from mba.world import WorldGraph, dijkstra_path


@dataclass
class TopoMap:
    visited: dict = field(default_factory=dict)  # node -> (k, d) panorama views
    ghosts: dict = field(default_factory=dict)  # node -> list of observed view vectors
    map_edges: set = field(default_factory=set)  # (a, b), a < b
    step: int = 0
    current: int | None = None
    order: list = field(default_factory=list)  # first-seen order of every map node

    def __contains__(self, n: int) -> bool:
        return n in self.visited or n in self.ghosts

    def __len__(self) -> int:
        return len(self.visited) + len(self.ghosts)

    @property
    def nodes(self) -> list[int]:
        return list(self.order)

    def update(self, current: int, pano: PanoramaFeatures, g: WorldGraph) -> "TopoMap":
        """Promote ``current`` to visited and register its neighbours as ghosts."""
        if pano.node != current:
            raise ConsistencyError(f"panorama of node {pano.node} given for node {current}")
        g.check_node(current)
        self.step += 1
        self.current = current
        if current in self.visited:
            return self
        if current not in self.ghosts:
            self.order.append(current)
        self.ghosts.pop(current, None)
        self.visited[current] = np.asarray(pano.views)
        for slot, w in sorted(pano.view_to_neighbor.items(), key=lambda kv: kv[1]):
            self.map_edges.add((min(current, w), max(current, w)))
            if w in self.visited:
                continue
            if w not in self.ghosts:
                self.ghosts[w] = []
                self.order.append(w)
            self.ghosts[w].append(np.asarray(pano.views[slot]))
        return self

    def ghost_embedding(self, n: int) -> np.ndarray:
        if n not in self.ghosts:
            raise NodeLookupError(f"{n} is not a ghost node")
        return np.mean(self.ghosts[n], axis=0)

    def visited_embedding(self, n: int) -> np.ndarray:
        if n not in self.visited:
            raise NodeLookupError(f"{n} is not a visited node")
        return self.visited[n].mean(axis=0)

    def embedding(self, n: int) -> np.ndarray:
        return self.visited_embedding(n) if n in self.visited else self.ghost_embedding(n)

    def actions(self) -> list[int]:
        """Global action nodes: ghosts plus backtrack targets, in first-seen order."""
        if self.current is None:
            raise StateError("map is empty")
        return [n for n in self.order if n != self.current]

    def adjacency(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {n: [] for n in self.order}
        for a, b in self.map_edges:
            adj[a].append(b)
            adj[b].append(a)
        for v in adj.values():
            v.sort()
        return adj

    def path(self, g: WorldGraph, u: int, v: int) -> list[int]:
        """Shortest path over discovered edges only."""
        if u == v:
            return [u]
        path, _ = dijkstra_path(self.adjacency(), g.edge_weight, u, v)
        if not path:
            raise StateError(f"node {v} unreachable from {u} in the map")
        return path


def update_map(m: TopoMap, current: int, pano: PanoramaFeatures, g: WorldGraph) -> TopoMap:
    return m.update(current, pano, g)


def ghost_embedding(m: TopoMap, n: int) -> np.ndarray:
    return m.ghost_embedding(n)


def visited_embedding(m: TopoMap, n: int) -> np.ndarray:
    return m.visited_embedding(n)
