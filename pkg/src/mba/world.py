"""Procedural navigation worlds, episodes and the geodesic oracle.

A world is a connected undirected graph whose nodes carry a metric position,
an appearance vector and a handful of objects.  Appearance is drawn from a
smooth random field over the floor plan (random Fourier features) plus a small
per-node jitter, so nearby nodes look alike and the goal descriptor carried by
an instruction is informative about direction.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from mba.errors import GenerationError, NodeLookupError, ParameterError

BOX_SIZE = 20.0
EDGE_RADIUS = 3.0
Z_JITTER = 0.5
# half the appearance channels vary slowly across the box, half quickly
FIELD_LENGTHSCALES = (20.0, 5.0)
APPEARANCE_JITTER = 0.05

MIN_EPISODE_HOPS = 3
MIN_EPISODE_DISTANCE = 6.0
INSTRUCTION_NOISE = 0.1
FEATURE_CENTER = 0.5  # features live in [0, 1]
DEFAULT_MAX_STEPS = 20

# the projection is shared by every world so an instruction means the same
# thing in seen and unseen environments
_PROJECTION_SEED = 0x5EED_1A57


def fmt_float(x: float) -> str:
    """17 significant digits; always round-trips through float()."""
    x = float(x)
    if not math.isfinite(x):
        raise ParameterError(f"cannot serialise non-finite float {x!r}")
    return format(x, ".17g")


def dumps(obj) -> str:
    """Compact JSON with every float written at 17 significant digits."""
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist())
    if isinstance(obj, Mapping):
        items = (f"{json.dumps(str(k))}:{dumps(v)}" for k, v in obj.items())
        return "{" + ",".join(items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(dumps(v) for v in obj) + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


@dataclass(frozen=True, eq=False)
class ObjectSpec:
    object_id: int
    feature: np.ndarray
    host_node: int

    def __eq__(self, other):
        if not isinstance(other, ObjectSpec):
            return NotImplemented
        return (
            self.object_id == other.object_id
            and self.host_node == other.host_node
            and np.array_equal(self.feature, other.feature)
        )


@dataclass(frozen=True, eq=False)
class Node:
    node_id: int
    position: np.ndarray
    appearance: np.ndarray
    objects: tuple[ObjectSpec, ...] = ()

    def __eq__(self, other):
        if not isinstance(other, Node):
            return NotImplemented
        return (
            self.node_id == other.node_id
            and np.array_equal(self.position, other.position)
            and np.array_equal(self.appearance, other.appearance)
            and self.objects == other.objects
        )


@dataclass(frozen=True, eq=False)
class WorldGraph:
    nodes: tuple[Node, ...]
    edges: frozenset  # of (a, b) with a < b
    k_views: int
    seed: int = 0

    def __eq__(self, other):
        if not isinstance(other, WorldGraph):
            return NotImplemented
        return (
            self.k_views == other.k_views
            and self.seed == other.seed
            and self.edges == other.edges
            and self.nodes == other.nodes
        )

    __hash__ = object.__hash__

    @property
    def K(self) -> int:
        return len(self.nodes)

    @property
    def d_f(self) -> int:
        return int(self.nodes[0].appearance.shape[0])

    @property
    def d_o(self) -> int:
        for node in self.nodes:
            if node.objects:
                return int(node.objects[0].feature.shape[0])
        return 0

    @cached_property
    def positions(self) -> np.ndarray:
        return np.stack([n.position for n in self.nodes])

    @cached_property
    def appearances(self) -> np.ndarray:
        return np.stack([n.appearance for n in self.nodes])

    @cached_property
    def adjacency(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {i: [] for i in range(self.K)}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        for v in adj.values():
            v.sort()
        return adj

    @cached_property
    def geodesics(self) -> np.ndarray:
        """All-pairs shortest-path distances (K x K)."""
        dist = np.empty((self.K, self.K))
        for u in range(self.K):
            dist[u] = dijkstra_all(self.adjacency, self.edge_weight, u, self.K)
        return dist

    def check_node(self, n: int) -> int:
        if not isinstance(n, (int, np.integer)) or not 0 <= n < self.K:
            raise NodeLookupError(f"unknown node id {n!r} (world has {self.K} nodes)")
        return int(n)

    @cached_property
    def _edge_weights(self) -> dict:
        return {e: float(np.linalg.norm(self.nodes[e[0]].position - self.nodes[e[1]].position)) for e in self.edges}

    def edge_weight(self, a: int, b: int) -> float:
        w = self._edge_weights.get((a, b) if a < b else (b, a))
        if w is None:
            return float(np.linalg.norm(self.nodes[a].position - self.nodes[b].position))
        return w

    def has_edge(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self.edges

    def geodesic(self, u: int, v: int) -> float:
        self.check_node(u)
        self.check_node(v)
        return float(self.geodesics[u, v])

    # serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "k_views": int(self.k_views),
            "nodes": [
                {
                    "id": n.node_id,
                    "position": n.position,
                    "appearance": n.appearance,
                    "objects": [
                        {"id": o.object_id, "feature": o.feature} for o in n.objects
                    ],
                }
                for n in self.nodes
            ],
            "edges": sorted([list(e) for e in self.edges]),
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: Mapping) -> "WorldGraph":
        nodes = []
        for raw in data["nodes"]:
            nid = int(raw["id"])
            objects = tuple(
                ObjectSpec(int(o["id"]), np.asarray(o["feature"], dtype=float), nid)
                for o in raw["objects"]
            )
            nodes.append(
                Node(
                    nid,
                    np.asarray(raw["position"], dtype=float),
                    np.asarray(raw["appearance"], dtype=float),
                    objects,
                )
            )
        nodes.sort(key=lambda n: n.node_id)
        if [n.node_id for n in nodes] != list(range(len(nodes))):
            raise ParameterError("node ids must be dense in [0, K)")
        edges = frozenset((min(a, b), max(a, b)) for a, b in data["edges"])
        return cls(tuple(nodes), edges, int(data["k_views"]), int(data.get("seed", 0)))

    @classmethod
    def from_json(cls, text: str) -> "WorldGraph":
        return cls.from_dict(json.loads(text))


def build_world(
    positions: Sequence[Sequence[float]],
    edges: Iterable[tuple[int, int]],
    *,
    k_views: int = 12,
    appearances: Sequence[Sequence[float]] | None = None,
    objects: Mapping[int, Sequence[Sequence[float]]] | None = None,
    d_f: int = 8,
    seed: int = 0,
) -> WorldGraph:
    """Hand-assemble a world (tests, toy layouts)."""
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    K = pos.shape[0]
    if appearances is None:
        rng = np.random.default_rng(seed)
        app = rng.uniform(0.0, 1.0, size=(K, d_f))
    else:
        app = np.asarray(appearances, dtype=float)
    objects = objects or {}
    nodes = tuple(
        Node(
            i,
            pos[i].copy(),
            app[i].copy(),
            tuple(
                ObjectSpec(j, np.asarray(f, dtype=float), i)
                for j, f in enumerate(objects.get(i, ()))
            ),
        )
        for i in range(K)
    )
    canon = frozenset((min(a, b), max(a, b)) for a, b in edges if a != b)
    return WorldGraph(nodes, canon, k_views, seed)


# ---------------------------------------------------------------------------
# generation


def _components(K: int, edges: set) -> list[int]:
    parent = list(range(K))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return [find(i) for i in range(K)]


def generate_world(
    seed: int,
    K: int,
    k_views: int = 12,
    m_max: int = 3,
    d_f: int = 64,
    *,
    d_o: int = 16,
    radius: float = EDGE_RADIUS,
    box: float = BOX_SIZE,
) -> WorldGraph:
    """Sample a connected world; a pure function of its arguments."""
    if K < 1:
        raise ParameterError(f"K must be >= 1, got {K}")
    if k_views < 4:
        raise ParameterError(f"k_views must be >= 4, got {k_views}")
    if d_f < 8:
        raise ParameterError(f"d_f must be >= 8, got {d_f}")
    if m_max < 1:
        raise ParameterError(f"m_max must be >= 1, got {m_max}")
    if d_o < 1 or radius <= 0 or box <= 0:
        raise ParameterError("d_o, radius and box must be positive")

    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), 0x3D]))
    xy = rng.uniform(0.0, box, size=(K, 2))
    z = rng.uniform(-Z_JITTER, Z_JITTER, size=(K, 1))
    pos = np.hstack([xy, z])

    scales = np.where(np.arange(d_f) < d_f // 2, *FIELD_LENGTHSCALES)
    omega = rng.normal(0.0, 1.0, size=(d_f, 2)) / scales[:, None]
    phase = rng.uniform(0.0, 2 * np.pi, size=d_f)
    app = 0.5 + 0.42 * np.sin(xy @ omega.T + phase)
    app = np.clip(app + rng.normal(0.0, APPEARANCE_JITTER, size=app.shape), 0.0, 1.0)

    n_obj = rng.integers(1, m_max + 1, size=K)
    obj_feats = [rng.uniform(0.0, 1.0, size=(int(m), d_o)) for m in n_obj]

    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((diff**2).sum(-1))
    degree = np.zeros(K, dtype=int)
    edges: set[tuple[int, int]] = set()
    pairs = sorted(
        (dist[a, b], a, b) for a in range(K) for b in range(a + 1, K) if dist[a, b] <= radius
    )
    # leave slack below k_views so spanning-tree repair cannot overflow a panorama
    cap = max(1, k_views - 2)
    for _, a, b in pairs:
        if degree[a] < cap and degree[b] < cap:
            edges.add((a, b))
            degree[a] += 1
            degree[b] += 1

    comp = _components(K, edges)
    if len(set(comp)) > 1:
        all_pairs = sorted((dist[a, b], a, b) for a in range(K) for b in range(a + 1, K))
        parent = {c: c for c in set(comp)}

        def find(c):
            while parent[c] != c:
                c = parent[c]
            return c

        for _, a, b in all_pairs:
            ra, rb = find(comp[a]), find(comp[b])
            if ra != rb:
                edges.add((a, b))
                parent[max(ra, rb)] = min(ra, rb)

    nodes = tuple(
        Node(
            i,
            pos[i],
            app[i],
            tuple(ObjectSpec(j, obj_feats[i][j], i) for j in range(int(n_obj[i]))),
        )
        for i in range(K)
    )
    return WorldGraph(nodes, frozenset(edges), k_views, int(seed))


# ---------------------------------------------------------------------------
# shortest paths


def dijkstra_all(adj: Mapping[int, Sequence[int]], weight, source: int, K: int) -> np.ndarray:
    dist = np.full(K, np.inf)
    dist[source] = 0.0
    heap = [(0.0, source)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for w in adj[u]:
            nd = d + weight(u, w)
            if nd < dist[w]:
                dist[w] = nd
                heapq.heappush(heap, (nd, w))
    return dist


def dijkstra_path(
    adj: Mapping[int, Sequence[int]], weight, u: int, v: int
) -> tuple[list[int], float]:
    """Minimum-weight path; equal-length paths resolved by smallest node sequence.

    Labels are (distance, path) tuples, so the heap order itself implements
    the lexicographic tie rule.  Returns ``([], inf)`` when v is unreachable.
    """
    best: dict[int, tuple[float, tuple[int, ...]]] = {u: (0.0, (u,))}
    heap = [(0.0, (u,))]
    settled = set()
    while heap:
        d, path = heapq.heappop(heap)
        x = path[-1]
        if x in settled:
            continue
        settled.add(x)
        if x == v:
            return list(path), d
        for w in adj.get(x, ()):
            if w in settled:
                continue
            cand = (d + weight(x, w), path + (w,))
            if w not in best or cand < best[w]:
                best[w] = cand
                heapq.heappush(heap, cand)
    return [], math.inf


def shortest_path(g: WorldGraph, u: int, v: int) -> tuple[list[int], float]:
    g.check_node(u)
    g.check_node(v)
    if u == v:
        return [int(u)], 0.0
    path, d = dijkstra_path(g.adjacency, g.edge_weight, int(u), int(v))
    return path, d


def path_length(g: WorldGraph, path: Sequence[int]) -> float:
    total = 0.0
    for a, b in zip(path, path[1:]):
        total += g.edge_weight(a, b)
    return total


def candidates(g: WorldGraph, n: int) -> list[int]:
    g.check_node(n)
    return list(g.adjacency[int(n)])


# ---------------------------------------------------------------------------
# episodes


@dataclass(frozen=True, eq=False)
class Episode:
    episode_id: int
    start: int
    goal: int
    goal_object: int
    gt_path: tuple[int, ...]
    instruction: np.ndarray
    seed: int
    max_steps: int = DEFAULT_MAX_STEPS
    world_seed: int = 0
    d_gt: float = field(default=0.0)

    def __eq__(self, other):
        if not isinstance(other, Episode):
            return NotImplemented
        return (
            self.episode_id == other.episode_id
            and self.start == other.start
            and self.goal == other.goal
            and self.goal_object == other.goal_object
            and self.gt_path == other.gt_path
            and np.array_equal(self.instruction, other.instruction)
            and self.seed == other.seed
            and self.max_steps == other.max_steps
            and self.world_seed == other.world_seed
            and self.d_gt == other.d_gt
        )

    __hash__ = object.__hash__

    def to_dict(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "start": self.start,
            "goal": self.goal,
            "goal_object": self.goal_object,
            "gt_path": list(self.gt_path),
            "d_gt": self.d_gt,
            "instruction": self.instruction,
            "seed": self.seed,
            "max_steps": self.max_steps,
            "world_seed": self.world_seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Episode":
        return cls(
            episode_id=int(d["episode_id"]),
            start=int(d["start"]),
            goal=int(d["goal"]),
            goal_object=int(d["goal_object"]),
            gt_path=tuple(int(x) for x in d["gt_path"]),
            instruction=np.asarray(d["instruction"], dtype=float),
            seed=int(d["seed"]),
            max_steps=int(d["max_steps"]),
            world_seed=int(d.get("world_seed", 0)),
            d_gt=float(d["d_gt"]),
        )


def instruction_projection(d_w: int, d_in: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([_PROJECTION_SEED, d_w, d_in]))
    return rng.normal(0.0, 1.0 / math.sqrt(d_in), size=(d_w, d_in))


def goal_descriptor(g: WorldGraph, goal: int, goal_object: int) -> np.ndarray:
    """[mean of the goal's original panorama ; goal object feature], centred on 0.5."""
    from mba.features import original_features

    pano = original_features(g, goal, g.seed)
    obj = g.nodes[goal].objects[goal_object].feature
    return np.concatenate([pano.views.mean(axis=0), obj]) - FEATURE_CENTER


def valid_pairs(
    g: WorldGraph, min_hops: int = MIN_EPISODE_HOPS, min_dist: float = MIN_EPISODE_DISTANCE
) -> list[tuple[int, int]]:
    pairs = []
    for s in range(g.K):
        for t in range(g.K):
            if s == t or g.geodesics[s, t] < min_dist:
                continue
            path, _ = shortest_path(g, s, t)
            if len(path) - 1 >= min_hops:
                pairs.append((s, t))
    return pairs


def make_episode(
    g: WorldGraph,
    seed: int,
    d_w: int = 32,
    *,
    episode_id: int = 0,
    noise_scale: float = INSTRUCTION_NOISE,
    max_steps: int = DEFAULT_MAX_STEPS,
    min_hops: int = MIN_EPISODE_HOPS,
    min_dist: float = MIN_EPISODE_DISTANCE,
    _pairs: Sequence[tuple[int, int]] | None = None,
) -> Episode:
    if g.K < 2:
        raise GenerationError("episodes need at least two nodes")
    if d_w < 1 or noise_scale < 0 or max_steps < 1:
        raise ParameterError("d_w and max_steps must be >= 1, noise_scale >= 0")
    pairs = list(_pairs) if _pairs is not None else valid_pairs(g, min_hops, min_dist)
    if not pairs:
        raise GenerationError(
            f"no start/goal pair with >= {min_hops} hops and >= {min_dist} m in world {g.seed}"
        )
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), g.seed & (2**64 - 1), 0xE9]))
    start, goal = pairs[int(rng.integers(len(pairs)))]
    goal_object = int(rng.integers(len(g.nodes[goal].objects)))
    path, d_gt = shortest_path(g, start, goal)
    desc = goal_descriptor(g, goal, goal_object)
    proj = instruction_projection(d_w, desc.shape[0])
    instr = proj @ desc + rng.normal(0.0, 1.0, size=d_w) * noise_scale
    return Episode(
        episode_id=int(episode_id),
        start=int(start),
        goal=int(goal),
        goal_object=goal_object,
        gt_path=tuple(path),
        instruction=instr,
        seed=int(seed),
        max_steps=int(max_steps),
        world_seed=int(g.seed),
        d_gt=float(d_gt),
    )


def make_episodes(g: WorldGraph, n: int, seed: int, d_w: int = 32, **kw) -> list[Episode]:
    pairs = valid_pairs(g, kw.get("min_hops", MIN_EPISODE_HOPS), kw.get("min_dist", MIN_EPISODE_DISTANCE))
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), 0xEB])
    seeds = ss.generate_state(n, dtype=np.uint64) if n else []
    return [
        make_episode(g, int(s), d_w, episode_id=i, _pairs=pairs, **kw)
        for i, s in enumerate(seeds)
    ]


def episodes_to_jsonl(episodes: Iterable[Episode]) -> str:
    return "".join(dumps(e.to_dict()) + "\n" for e in episodes)


def episodes_from_jsonl(text: str) -> list[Episode]:
    return [Episode.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
