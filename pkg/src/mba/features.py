"""Per-view visual features under the four input strategies.

Original views are synthetic: the slot facing a neighbour shows that
neighbour's appearance blended with a heading-dependent positional pattern,
every other slot shows the node's own surroundings mixed with seeded clutter.  Depth keeps only geometry
(quantised distance + direction).  Perturbed views mix in an incongruent view
from elsewhere in the same world; random noise carries no content at all.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import linear_sum_assignment

from mba.errors import ConfigurationError, ParameterError, SamplingError
from mba.world import FEATURE_CENTER, WorldGraph  # noqa: F401  (re-exported)

APPEARANCE_WEIGHT = 0.8
BACKGROUND_WEIGHT = 0.5
DEPTH_LEVELS = 16
DEPTH_RANGE = 6.0  # metres mapped onto [0, 1]
DEFAULT_D_F = 64
DEFAULT_K_VIEWS = 12


@dataclass(frozen=True, eq=False)
class PanoramaFeatures:
    node: int
    views: np.ndarray  # (k_views, d)
    directions: np.ndarray  # (k_views, 4): sin h, cos h, sin e, cos e
    view_to_neighbor: dict

    @property
    def neighbor_to_view(self) -> dict:
        return {w: i for i, w in self.view_to_neighbor.items()}

    def with_views(self, views: np.ndarray) -> "PanoramaFeatures":
        return PanoramaFeatures(self.node, views, self.directions, self.view_to_neighbor)


# ---------------------------------------------------------------------------
# perturbation specs

_PV = re.compile(r"^pv:?([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)$")


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str  # "og" | "depth" | "pv" | "rn"
    gamma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("og", "depth", "pv", "rn"):
            raise ParameterError(f"unknown perturbation kind {self.kind!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ParameterError(f"gamma must lie in [0, 1], got {self.gamma}")

    @classmethod
    def parse(cls, text: str, gamma: float | None = None) -> "PerturbationSpec | None":
        """``og``, ``depth``, ``pv:<g>`` (or ``pv<g>``), ``rn``; ``none``/``-`` -> None.

        A bare ``pv`` takes ``gamma``, which must then be given.
        """
        t = text.strip().lower()
        if t in ("none", "-", ""):
            return None
        if t in ("og", "depth", "rn"):
            return cls(t)
        if t == "pv":
            if gamma is None:
                raise ParameterError("bare 'pv' needs a gamma")
            return cls("pv", float(gamma))
        m = _PV.match(t)
        if m:
            return cls("pv", float(m.group(1)))
        raise ParameterError(f"cannot parse perturbation spec {text!r}")

    def __str__(self) -> str:
        if self.kind == "pv":
            return f"pv:{self.gamma:g}"
        return self.kind


# ---------------------------------------------------------------------------
# geometry


def view_directions(k_views: int) -> np.ndarray:
    """(k, 4) encodings; 36 views use three elevation rings as in Matterport."""
    if k_views == 36:
        heads = np.tile(np.arange(12) * (2 * np.pi / 12), 3)
        elevs = np.repeat(np.radians([-30.0, 0.0, 30.0]), 12)
    else:
        heads = np.arange(k_views) * (2 * np.pi / k_views)
        elevs = np.zeros(k_views)
    return np.stack([np.sin(heads), np.cos(heads), np.sin(elevs), np.cos(elevs)], axis=1)


def relative_direction(g: WorldGraph, a: int, b: int) -> tuple[float, float]:
    """(heading, elevation) of b as seen from a."""
    d = g.nodes[b].position - g.nodes[a].position
    heading = math.atan2(d[0], d[1])
    elevation = math.atan2(d[2], math.hypot(d[0], d[1]))
    return heading, elevation


def direction_encoding(heading: float, elevation: float) -> np.ndarray:
    return np.array([math.sin(heading), math.cos(heading), math.sin(elevation), math.cos(elevation)])


@lru_cache(maxsize=8192)
def assign_views(g: WorldGraph, n: int) -> dict:
    """view index -> neighbour, each neighbour in exactly one slot (min angular cost)."""
    nbrs = g.adjacency[g.check_node(n)]
    if not nbrs:
        return {}
    if len(nbrs) > g.k_views:
        raise ConfigurationError(f"node {n} has {len(nbrs)} neighbours but only {g.k_views} views")
    dirs = view_directions(g.k_views)
    targets = np.stack([direction_encoding(*relative_direction(g, n, w)) for w in nbrs])
    cost = -(targets @ dirs.T)
    rows, cols = linear_sum_assignment(cost)
    return {int(c): int(nbrs[r]) for r, c in zip(rows, cols)}


def _positional_pattern(d_f: int, directions: np.ndarray) -> np.ndarray:
    rng = np.random.default_rng(0xD1EC)
    freq = rng.integers(1, 4, size=d_f)
    phase = rng.uniform(0, 2 * np.pi, size=d_f)
    heading = np.arctan2(directions[:, 0], directions[:, 1])
    return 0.5 + 0.5 * np.sin(heading[:, None] * freq[None, :] + phase[None, :])


def _background(g: WorldGraph, seed: int, n: int) -> np.ndarray:
    """Slots without a neighbour show the node's own surroundings plus clutter."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), int(n), 0xB6]))
    clutter = rng.uniform(0.0, 1.0, size=(g.k_views, g.d_f))
    return BACKGROUND_WEIGHT * g.nodes[n].appearance + (1 - BACKGROUND_WEIGHT) * clutter


# ---------------------------------------------------------------------------
# strategies


@lru_cache(maxsize=8192)
def original_features(g: WorldGraph, n: int, seed: int) -> PanoramaFeatures:
    n = g.check_node(n)
    k, d_f = g.k_views, g.d_f
    dirs = view_directions(k)
    mapping = assign_views(g, n)
    views = _background(g, seed, n)
    pattern = _positional_pattern(d_f, dirs)
    for slot, w in mapping.items():
        views[slot] = APPEARANCE_WEIGHT * g.nodes[w].appearance + (1 - APPEARANCE_WEIGHT) * pattern[slot]
    views.setflags(write=False)
    return PanoramaFeatures(n, views, dirs, dict(mapping))


def depth_dim(d_f: int) -> int:
    return max(1, d_f // 4)


@lru_cache(maxsize=8192)
def depth_features(g: WorldGraph, n: int, d_D: int | None = None) -> PanoramaFeatures:
    """Geometry-only panorama: quantised neighbour distance plus direction, tiled to d_D."""
    n = g.check_node(n)
    d_D = depth_dim(g.d_f) if d_D is None else d_D
    if d_D >= g.d_f or d_D < 1:
        raise ConfigurationError(f"depth dim {d_D} must be in [1, d_f={g.d_f})")
    dirs = view_directions(g.k_views)
    mapping = assign_views(g, n)
    depth = np.ones(g.k_views)
    for slot, w in mapping.items():
        depth[slot] = quantize_depth(g.edge_weight(n, w))
    base = np.hstack([depth[:, None], dirs])
    reps = -(-d_D // base.shape[1])
    views = np.tile(base, (1, reps))[:, :d_D]
    views.setflags(write=False)
    return PanoramaFeatures(n, views, dirs, dict(mapping))


def quantize_depth(distance: float, max_range: float = DEPTH_RANGE) -> float:
    x = min(max(distance / max_range, 0.0), 1.0)
    level = min(int(x * DEPTH_LEVELS), DEPTH_LEVELS - 1)
    return level / (DEPTH_LEVELS - 1)


def perturbed_view(v_og: np.ndarray, v_iv: np.ndarray, gamma: float) -> np.ndarray:
    v_og = np.asarray(v_og, dtype=float)
    v_iv = np.asarray(v_iv, dtype=float)
    if v_og.shape != v_iv.shape:
        raise ConfigurationError(f"shape mismatch {v_og.shape} vs {v_iv.shape}")
    if not 0.0 <= gamma <= 1.0:
        raise ParameterError(f"gamma must lie in [0, 1], got {gamma}")
    if gamma == 0.0:
        return v_og.copy()
    if gamma == 1.0:
        return v_iv.copy()
    return (1.0 - gamma) * v_og + gamma * v_iv


def incongruent_source(g: WorldGraph, n: int, view_idx: int, seed: int) -> tuple[int, int]:
    """(source node, source view) for the incongruent view at (n, view_idx)."""
    n = g.check_node(n)
    if g.K < 2:
        raise SamplingError("incongruent views need a world with at least two nodes")
    rng = np.random.default_rng(
        np.random.SeedSequence([int(seed) & (2**64 - 1), n, int(view_idx), 0x1C])
    )
    src = int(rng.integers(g.K - 1))
    if src >= n:
        src += 1
    return src, int(rng.integers(g.k_views))


def sample_incongruent(g: WorldGraph, n: int, view_idx: int, seed: int) -> np.ndarray:
    src, view = incongruent_source(g, n, view_idx, seed)
    return original_features(g, src, g.seed).views[view].copy()


def random_noise(dim: int, rng: np.random.Generator) -> np.ndarray:
    if dim < 1:
        raise ParameterError(f"dim must be >= 1, got {dim}")
    return rng.uniform(0.0, 1.0, size=dim)


def _noise_rng(episode_seed: int, n: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(episode_seed) & (2**64 - 1), int(n), 0x4E]))


def _noise_panorama(g: WorldGraph, n: int, rng: np.random.Generator) -> PanoramaFeatures:
    base = original_features(g, n, g.seed)
    noise = np.stack([random_noise(g.d_f, rng) for _ in range(g.k_views)])
    return base.with_views(noise)


def _perturbed_panorama(g: WorldGraph, n: int, gamma: float, episode_seed: int) -> PanoramaFeatures:
    base = original_features(g, n, g.seed)
    if gamma == 0.0:
        return base
    iv = np.stack([sample_incongruent(g, n, i, episode_seed) for i in range(g.k_views)])
    return base.with_views(perturbed_view(base.views, iv, gamma))


@lru_cache(maxsize=8192)
def _episode_panorama(g: WorldGraph, n: int, spec: PerturbationSpec, episode_seed: int) -> PanoramaFeatures:
    if spec.kind == "pv":
        pano = _perturbed_panorama(g, n, spec.gamma, episode_seed)
    else:
        pano = _noise_panorama(g, n, _noise_rng(episode_seed, n))
    pano.views.setflags(write=False)
    return pano


def panorama(
    g: WorldGraph,
    n: int,
    spec: PerturbationSpec,
    episode_seed: int,
    *,
    rng: np.random.Generator | None = None,
) -> PanoramaFeatures:
    """Panorama of node n as one branch sees it.

    Perturbations are fixed per episode: incongruent sources and noise are
    seeded from (episode_seed, node, view).  Pass ``rng`` to draw fresh noise
    on every call instead.
    """
    if spec.kind == "og":
        return original_features(g, n, g.seed)
    if spec.kind == "depth":
        return depth_features(g, n)
    if spec.kind == "rn" and rng is not None:
        return _noise_panorama(g, g.check_node(n), rng)
    return _episode_panorama(g, g.check_node(n), spec, int(episode_seed))
