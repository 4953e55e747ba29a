import copy

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mba.errors import ConsistencyError, NodeLookupError, StateError
from mba.features import PerturbationSpec, original_features, panorama
from mba.topomap import TopoMap, ghost_embedding, update_map, visited_embedding
from mba.world import build_world, generate_world


@pytest.fixture(scope="module")
def world():
    return generate_world(4, 25)


def pano(g, n):
    return original_features(g, n, g.seed)


def random_walk(g, seed, steps):
    rng = np.random.default_rng(seed)
    walk = [int(rng.integers(g.K))]
    for _ in range(steps):
        walk.append(int(rng.choice(g.adjacency[walk[-1]])))
    return walk


def test_first_update(world):
    m = update_map(TopoMap(), 0, pano(world, 0), world)
    assert set(m.visited) == {0}
    assert set(m.ghosts) == set(world.adjacency[0])
    assert m.current == 0 and m.step == 1


def test_pooling_two_observations():
    # square 0-1-2-3: walking 0 -> 1 -> 2 observes ghost 3 from both 0 and 2
    g = build_world([(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)], [(0, 1), (1, 2), (2, 3), (0, 3)], d_f=8)
    m = TopoMap()
    p0, p2 = pano(g, 0), pano(g, 2)
    m.update(0, p0, g)
    m.update(1, pano(g, 1), g)
    m.update(2, p2, g)
    u1 = p0.views[p0.neighbor_to_view[3]]
    u2 = p2.views[p2.neighbor_to_view[3]]
    assert np.allclose(ghost_embedding(m, 3), (u1 + u2) / 2, atol=0)


def test_mean_of_zero_and_one():
    m = TopoMap()
    m.ghosts[1] = [np.zeros(3), np.ones(3)]
    assert ghost_embedding(m, 1).tolist() == [0.5, 0.5, 0.5]


def test_single_observation(world):
    m = TopoMap().update(0, pano(world, 0), world)
    p = pano(world, 0)
    for w in world.adjacency[0]:
        assert np.array_equal(ghost_embedding(m, w), p.views[p.neighbor_to_view[w]])


def test_visited_embedding_recomputed(world):
    m = TopoMap()
    for n in random_walk(world, 1, 10):
        m.update(n, pano(world, n), world)
    for n in m.visited:
        views = pano(world, n).views
        brute = [sum(views[i][j] for i in range(len(views))) / len(views) for j in range(views.shape[1])]
        assert np.allclose(visited_embedding(m, n), brute, atol=1e-12)


def test_revisit_only_bumps_step(world):
    m = TopoMap()
    m.update(0, pano(world, 0), world)
    w = world.adjacency[0][0]
    m.update(w, pano(world, w), world)
    before = copy.deepcopy(m)
    m.update(w, pano(world, w), world)
    assert m.step == before.step + 1
    assert m.visited.keys() == before.visited.keys() and m.ghosts.keys() == before.ghosts.keys()
    assert m.map_edges == before.map_edges and m.order == before.order


def test_errors(world):
    m = TopoMap()
    with pytest.raises(StateError):
        m.actions()
    with pytest.raises(ConsistencyError):
        m.update(1, pano(world, 0), world)
    m.update(0, pano(world, 0), world)
    with pytest.raises(NodeLookupError):
        m.ghost_embedding(0)
    with pytest.raises(NodeLookupError):
        m.visited_embedding(world.adjacency[0][0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 10_000), st.integers(1, 25))
def test_walk_invariants(wseed, walk_seed, steps):
    g = generate_world(wseed % 50, 15)
    walk = random_walk(g, walk_seed, steps)
    m = TopoMap()
    pv = TopoMap()
    prev_visited, prev_edges = set(), set()
    for n in walk:
        m.update(n, pano(g, n), g)
        pv.update(n, panorama(g, n, PerturbationSpec("pv", 0.5), walk_seed), g)
        assert not set(m.visited) & set(m.ghosts)
        assert all(len(obs) >= 1 for obs in m.ghosts.values())
        assert m.map_edges <= g.edges
        assert m.current in m.visited
        assert prev_visited <= set(m.visited) and prev_edges <= m.map_edges
        prev_visited, prev_edges = set(m.visited), set(m.map_edges)
        # every local candidate is a global action
        assert set(g.adjacency[n]) <= set(m.actions())
        assert m.current not in m.actions()
        # perturbed views leave the topology untouched
        assert pv.map_edges == m.map_edges
        assert pv.visited.keys() == m.visited.keys() and pv.ghosts.keys() == m.ghosts.keys()
    # map paths only use discovered edges and reach every map node
    for target in m.actions():
        path = m.path(g, m.current, target)
        assert path[0] == m.current and path[-1] == target
        assert all((min(a, b), max(a, b)) in m.map_edges for a, b in zip(path, path[1:]))
