"""Multi-branch navigation policy.

Each branch scores either the local action space ({stop} + neighbours of the
current node) or the global one ({stop} + every other node on its map) from
its own visual input.  Branch distributions are mixed with learned weights
``lam = softmax(sigmoid(FFN([stop tokens])))``, per scope, and a scalar gate
fuses the local and global mixtures into one distribution over the global
action space.

Slot order everywhere is (l^a, g^a, l^b, g^b).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from mba import features as F
from mba.errors import (
    ConfigurationError,
    CoverageError,
    ConsistencyError,
    ParameterError,
    StateError,
)
from mba.features import PanoramaFeatures, PerturbationSpec
from mba.neural import (
    DenseLayer,
    FeedForwardNet,
    ParamStore,
    normalize,
    normalize_backward,
    sigmoid,
    softmax,
    softmax_backward,
)
from mba.topomap import TopoMap
from mba.world import Episode, WorldGraph

STOP = -1
SLOT_ORDER = ("la", "ga", "lb", "gb")
TEXT_ORDER = ("ga", "la", "gb", "lb")
DIST_SCALE = 10.0
ENC_DIM = 5  # 4 geometry channels + stop flag


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class BranchSlot:
    scope: str  # "l" | "g"
    role: str  # "a" (base) | "b" (ancillary)
    spec: PerturbationSpec

    @property
    def name(self) -> str:
        return self.scope + self.role


@dataclass(frozen=True)
class BranchConfig:
    slots: tuple[BranchSlot, ...]

    def __post_init__(self):
        if not 1 <= len(self.slots) <= 4:
            raise ConfigurationError(f"need 1..4 branches, got {len(self.slots)}")
        names = [s.name for s in self.slots]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"duplicate branch slot in {names}")
        if names != sorted(names, key=SLOT_ORDER.index):
            raise ConfigurationError(f"slots must follow {SLOT_ORDER}")

    @classmethod
    def parse(cls, text: str, gamma: float | None = None) -> "BranchConfig":
        """``g:og,l:og,g:pv:0.5,l:pv:0.5``; ``-`` leaves a slot empty.

        The first entry of a scope fills its base slot, the second its
        ancillary slot.  ``gamma`` resolves bare ``pv`` entries.
        """
        seen = {"g": 0, "l": 0}
        slots = {}
        for raw in text.split(","):
            raw = raw.strip()
            if raw in ("-", "", "none"):
                continue
            scope, sep, spec_text = raw.partition(":")
            scope = scope.strip().lower()
            if not sep or scope not in seen:
                raise ParameterError(f"bad branch entry {raw!r}; expected g:<spec> or l:<spec>")
            spec = PerturbationSpec.parse(spec_text, gamma)
            if spec is None:
                continue
            if seen[scope] >= 2:
                raise ConfigurationError(f"more than two {scope} branches in {text!r}")
            role = "ab"[seen[scope]]
            seen[scope] += 1
            slots[scope + role] = BranchSlot(scope, role, spec)
        return cls(tuple(slots[n] for n in SLOT_ORDER if n in slots))

    def __str__(self) -> str:
        by_name = {s.name: s for s in self.slots}
        parts = [f"{by_name[n].scope}:{by_name[n].spec}" if n in by_name else "-" for n in TEXT_ORDER]
        while len(parts) > 1 and parts[-1] == "-":
            parts.pop()
        return ",".join(parts)

    @property
    def k(self) -> int:
        return len(self.slots)

    def scope(self, s: str) -> list[BranchSlot]:
        return [b for b in self.slots if b.scope == s]

    @property
    def has_local(self) -> bool:
        return bool(self.scope("l"))

    @property
    def has_global(self) -> bool:
        return bool(self.scope("g"))


@dataclass(frozen=True)
class AgentConfig:
    branches: BranchConfig
    d_f: int = F.DEFAULT_D_F
    d_w: int = 32
    d_o: int = 16
    d_h: int = 64
    ffn_hidden: int = 128
    share_params: bool = False
    seed: int = 0

    @property
    def d_D(self) -> int:
        return F.depth_dim(self.d_f)

    def to_meta(self) -> dict:
        return {
            "branches": str(self.branches),
            "d_f": self.d_f,
            "d_w": self.d_w,
            "d_o": self.d_o,
            "d_h": self.d_h,
            "ffn_hidden": self.ffn_hidden,
            "share_params": int(self.share_params),
            "seed": self.seed,
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "AgentConfig":
        return cls(
            branches=BranchConfig.parse(meta["branches"]),
            d_f=int(meta["d_f"]),
            d_w=int(meta["d_w"]),
            d_o=int(meta["d_o"]),
            d_h=int(meta["d_h"]),
            ffn_hidden=int(meta["ffn_hidden"]),
            share_params=bool(int(meta["share_params"])),
            seed=int(meta["seed"]),
        )


# ---------------------------------------------------------------------------
# branch network


class BranchNet:
    """Encoder + scorer shared by local and global branches."""

    def __init__(self, store: ParamStore, prefix: str, cfg: AgentConfig, depth: bool, rng):
        d_f, d_h, hid = cfg.d_f, cfg.d_h, cfg.ffn_hidden
        self.d_f, self.d_h = d_f, d_h
        self.depth = DenseLayer(store, f"{prefix}.depth", cfg.d_D, d_f, rng) if depth else None
        self.instr = DenseLayer(store, f"{prefix}.instr", cfg.d_w, d_h, rng)
        self.vis = DenseLayer(store, f"{prefix}.vis", d_f, d_h, rng)
        self.enc = FeedForwardNet(store, f"{prefix}.enc", d_f + ENC_DIM + d_h, hid, d_h, rng)
        self.score = FeedForwardNet(store, f"{prefix}.score", d_h, hid, 1, rng)

    def forward(self, visual: np.ndarray, geometry: np.ndarray, instruction: np.ndarray) -> "BranchOutput":
        visual = visual - F.FEATURE_CENTER
        if self.depth is not None:
            xf = self.depth.forward(visual)
        else:
            if visual.shape[1] != self.d_f:
                raise ConfigurationError(f"visual dim {visual.shape[1]} != d_f {self.d_f}")
            xf = visual
        q = self.instr.forward(instruction)
        u = self.vis.forward(xf)
        inter = u * q
        z = np.hstack([xf, geometry, inter])
        hidden, c_enc = self.enc.forward(z)
        logits, c_sc = self.score.forward(hidden)
        logits = logits[:, 0]
        return BranchOutput(
            hidden=hidden,
            logits=logits,
            probs=softmax(logits),
            cache=(visual, xf, q, u, c_enc, c_sc, instruction),
        )

    def backward(self, out: "BranchOutput", dprobs: np.ndarray, dhidden: np.ndarray):
        visual, xf, q, u, c_enc, c_sc, instruction = out.cache
        dlogits = softmax_backward(out.probs, dprobs)
        dh = self.score.backward(c_sc, dlogits[:, None]) + dhidden
        dz = self.enc.backward(c_enc, dh)
        d_f = self.d_f
        dxf = dz[:, :d_f].copy()
        dinter = dz[:, d_f + ENC_DIM:]
        du = dinter * q
        dq = (dinter * u).sum(axis=0)
        dxf += self.vis.backward(xf, du)
        self.instr.backward(instruction, dq)
        if self.depth is not None:
            self.depth.backward(visual, dxf)


@dataclass
class BranchOutput:
    hidden: np.ndarray  # (1 + n_actions, d_h); row 0 is the stop/state token
    logits: np.ndarray
    probs: np.ndarray
    cache: tuple = ()
    action_ids: list = field(default_factory=list)  # [STOP, ...]
    slot: str = ""

    @property
    def state_token(self) -> np.ndarray:
        return self.hidden[0]


@dataclass
class FusedPrediction:
    action_ids: list  # [STOP, ...]
    probs: np.ndarray
    lam: np.ndarray
    sigma: float | None
    branches: dict = field(default_factory=dict)  # slot -> BranchOutput
    p_local: np.ndarray | None = None
    p_global: np.ndarray | None = None
    cache: dict = field(default_factory=dict)

    def index(self, action: int) -> int:
        return self.action_ids.index(action)

    def argmax(self) -> int:
        # np.argmax returns the first maximum: stop wins ties, then lower index
        return self.action_ids[int(np.argmax(self.probs))]


# ---------------------------------------------------------------------------
# inputs for each branch


def local_inputs(pano: PanoramaFeatures, cands: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Visual rows [pooled panorama, view toward each candidate] + geometry."""
    n2v = pano.neighbor_to_view
    rows = [pano.views.mean(axis=0)] + [pano.views[n2v[c]] for c in cands]
    geo = np.zeros((1 + len(cands), ENC_DIM))
    geo[0, -1] = 1.0
    for i, c in enumerate(cands, start=1):
        geo[i, :4] = pano.directions[n2v[c]]
    return np.stack(rows), geo


def global_inputs(m: TopoMap, g: WorldGraph, actions: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Visual rows [current node pooled, map embedding per action] + relative geometry."""
    cur = m.current
    if cur is None:
        raise StateError("global branch needs a non-empty map")
    from mba.world import dijkstra_all

    rows = [m.visited_embedding(cur)] + [m.embedding(n) for n in actions]
    adj = m.adjacency()
    geo = np.zeros((1 + len(actions), ENC_DIM))
    geo[0, -1] = 1.0
    if actions:
        index = {n: i for i, n in enumerate(adj)}
        local_adj = {index[a]: [index[b] for b in bs] for a, bs in adj.items()}
        nodes = list(adj)
        dist = dijkstra_all(local_adj, lambda a, b: g.edge_weight(nodes[a], nodes[b]), index[cur], len(nodes))
        p0 = g.nodes[cur].position
        for i, n in enumerate(actions, start=1):
            d = g.nodes[n].position - p0
            flat = math.hypot(d[0], d[1])
            heading = math.atan2(d[0], d[1])
            geo[i, 0] = math.sin(heading)
            geo[i, 1] = math.cos(heading)
            geo[i, 2] = flat / DIST_SCALE
            geo[i, 3] = dist[index[n]] / DIST_SCALE
    return np.stack(rows), geo


# ---------------------------------------------------------------------------
# the agent


class MBAAgent:
    def __init__(self, cfg: AgentConfig, store: ParamStore | None = None):
        self.cfg = cfg
        fresh = store is None
        self.store = ParamStore() if fresh else store
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed & (2**64 - 1), 0xA6E7]))
        self.nets: dict[str, BranchNet] = {}
        for slot in cfg.branches.slots:
            prefix = slot.name
            if cfg.share_params and slot.role == "b":
                prefix = slot.scope + "a"
            is_depth = slot.spec.kind == "depth"
            if cfg.share_params and slot.role == "b" and prefix in self.nets:
                if (self.nets[prefix].depth is not None) != is_depth:
                    prefix = slot.name  # cannot share across input dims
            self.nets[slot.name] = BranchNet(self.store, prefix, cfg, is_depth, rng)
        k, d_h, hid = cfg.branches.k, cfg.d_h, cfg.ffn_hidden
        self.weight_net = FeedForwardNet(self.store, f"weights{k}", k * d_h, hid, k, rng) if k > 1 else None
        both = cfg.branches.has_local and cfg.branches.has_global
        self.gate = FeedForwardNet(self.store, "gate", 2 * d_h, hid, 1, rng) if both else None
        self.obj_instr = DenseLayer(self.store, "obj.instr", cfg.d_w, d_h, rng)
        self.obj_feat = DenseLayer(self.store, "obj.feat", cfg.d_o, d_h, rng)
        self.obj_net = FeedForwardNet(self.store, "obj.ffn", cfg.d_o + 2 * d_h, hid, 1, rng)

    # individual operations -------------------------------------------------

    def local_branch(self, slot: str, instruction, pano: PanoramaFeatures, cands) -> BranchOutput:
        visual, geo = local_inputs(pano, cands)
        out = self.nets[slot].forward(visual, geo, instruction)
        out.action_ids = [STOP] + list(cands)
        out.slot = slot
        return out

    def global_branch(self, slot: str, instruction, m: TopoMap, g: WorldGraph) -> BranchOutput:
        if len(m) == 0 or m.current is None:
            raise StateError("global branch needs a non-empty map")
        actions = m.actions()
        visual, geo = global_inputs(m, g, actions)
        out = self.nets[slot].forward(visual, geo, instruction)
        out.action_ids = [STOP] + actions
        out.slot = slot
        return out

    def branch_weights(self, tokens: Sequence[np.ndarray]):
        """lam = softmax(sigmoid(FFN(concat(tokens)))); returns (lam, cache)."""
        if not tokens:
            raise ConfigurationError("branch weights need at least one branch")
        if len(tokens) == 1:
            return np.ones(1), None
        if self.weight_net is None or self.weight_net.d_out != len(tokens):
            raise ConfigurationError(f"agent was built for {self.cfg.branches.k} branches, got {len(tokens)}")
        z, c = self.weight_net.forward(np.concatenate(tokens))
        s = sigmoid(z[0])
        lam = softmax(s)
        return lam, (c, s)

    def predict_objects(self, stop_token: np.ndarray, objects: np.ndarray, instruction: np.ndarray):
        """Distribution over the objects at the stop node; returns (P_o, cache)."""
        objects = np.atleast_2d(np.asarray(objects, dtype=float)) - F.FEATURE_CENTER
        if objects.shape[0] == 0 or objects.size == 0:
            raise StateError("no objects to predict")
        qo = self.obj_instr.forward(instruction)
        fo = self.obj_feat.forward(objects)
        inter = fo * qo
        tok = np.broadcast_to(stop_token, (objects.shape[0], stop_token.shape[-1]))
        z = np.hstack([objects, inter, tok])
        logits, c = self.obj_net.forward(z)
        p = softmax(logits[:, 0])
        return p, (objects, qo, fo, c, instruction)

    def predict_objects_backward(self, p: np.ndarray, cache, dp: np.ndarray) -> np.ndarray:
        objects, qo, fo, c, instruction = cache
        dlogits = softmax_backward(p, dp)
        dz = self.obj_net.backward(c, dlogits[:, None])
        d_o, d_h = self.cfg.d_o, self.cfg.d_h
        dinter = dz[:, d_o:d_o + d_h]
        self.obj_feat.backward(objects, dinter * qo)
        self.obj_instr.backward(instruction, (dinter * fo).sum(axis=0))
        return dz[:, d_o + d_h:].sum(axis=0)

    # one decision ------------------------------------------------------------

    def step(self, g: WorldGraph, instruction: np.ndarray, current: int,
             panos: dict, maps: dict) -> FusedPrediction:
        """Score every action at ``current``; ``panos``/``maps`` are keyed by slot."""
        cands = g.adjacency[current]
        outs: dict[str, BranchOutput] = {}
        for slot in self.cfg.branches.slots:
            if slot.scope == "l":
                outs[slot.name] = self.local_branch(slot.name, instruction, panos[slot.name], cands)
            else:
                outs[slot.name] = self.global_branch(slot.name, instruction, maps[slot.name], g)
        return self.fuse(outs)

    def fuse(self, outs: dict) -> FusedPrediction:
        names = [n for n in SLOT_ORDER if n in outs]
        lam, wcache = self.branch_weights([outs[n].state_token for n in names])
        lam_of = dict(zip(names, lam))
        loc = [n for n in names if n[0] == "l"]
        glo = [n for n in names if n[0] == "g"]
        cache = {"names": names, "wcache": wcache, "loc": loc, "glo": glo}

        p_l = p_g = None
        if loc:
            ids = outs[loc[0]].action_ids
            for n in loc[1:]:
                if outs[n].action_ids != ids:
                    raise ConsistencyError("local branches disagree on the action space")
            if len(loc) == 1:
                # the renormalised single-branch mixture is the branch itself
                p_l = outs[loc[0]].probs
            else:
                n_l = sum(lam_of[n] * outs[n].probs for n in loc)
                p_l = normalize(n_l)
                cache["n_l"] = n_l
        if glo:
            ids = outs[glo[0]].action_ids
            for n in glo[1:]:
                if outs[n].action_ids != ids:
                    raise ConsistencyError("global branches disagree on the action space")
            if len(glo) == 1:
                # the renormalised single-branch mixture is the branch itself
                p_g = outs[glo[0]].probs
            else:
                n_g = sum(lam_of[n] * outs[n].probs for n in glo)
                p_g = normalize(n_g)
                cache["n_g"] = n_g

        if loc and glo:
            gids = outs[glo[0]].action_ids
            lids = outs[loc[0]].action_ids
            pos = {a: i for i, a in enumerate(gids)}
            missing = [a for a in lids if a not in pos]
            if missing:
                raise CoverageError(f"local actions {missing} absent from the global space")
            embed_idx = np.array([pos[a] for a in lids])
            stop_g = np.mean([outs[n].state_token for n in glo], axis=0)
            stop_l = np.mean([outs[n].state_token for n in loc], axis=0)
            zg, gcache = self.gate.forward(np.concatenate([stop_g, stop_l]))
            sigma = float(sigmoid(zg[0, 0]))
            probs, fcache = dynamic_fuse(p_l, p_g, embed_idx, sigma)
            cache.update(gcache=gcache, embed_idx=embed_idx, fcache=fcache)
            action_ids = list(gids)
        elif glo:
            sigma, probs, action_ids = None, p_g, list(outs[glo[0]].action_ids)
        else:
            sigma, probs, action_ids = None, p_l, list(outs[loc[0]].action_ids)
        return FusedPrediction(action_ids, probs, lam, sigma, outs, p_l, p_g, cache)

    def backward(self, pred: FusedPrediction, dprobs: np.ndarray,
                 dstate: dict | None = None):
        """Push dL/dP_a (and any extra state-token gradients) into the store."""
        c = pred.cache
        outs = pred.branches
        names, loc, glo = c["names"], c["loc"], c["glo"]
        d_h = self.cfg.d_h
        dtok = {n: np.zeros(d_h) for n in names}
        if dstate:
            for n, v in dstate.items():
                dtok[n] += v
        dp_l = dp_g = None
        if loc and glo:
            sigma = pred.sigma
            dx, dsigma = dynamic_fuse_backward(c["fcache"], dprobs)
            dp_g = sigma * dx
            dp_l = (1.0 - sigma) * dx[c["embed_idx"]]
            dz = np.array([[dsigma * sigma * (1.0 - sigma)]])
            dcat = self.gate.backward(c["gcache"], dz)[0]
            for n in glo:
                dtok[n] += dcat[:d_h] / len(glo)
            for n in loc:
                dtok[n] += dcat[d_h:] / len(loc)
        elif glo:
            dp_g = dprobs
        else:
            dp_l = dprobs

        lam = pred.lam
        dlam = np.zeros(len(names))
        dbranch = {}
        for group, dp, key in ((loc, dp_l, "n_l"), (glo, dp_g, "n_g")):
            if not group:
                continue
            if len(group) == 1:
                dbranch[group[0]] = dp
                continue
            dn = normalize_backward(c[key], dp)
            for n in group:
                i = names.index(n)
                dbranch[n] = lam[i] * dn
                dlam[i] = np.dot(dn, outs[n].probs)
        if c["wcache"] is not None:
            ffn_cache, s = c["wcache"]
            ds = softmax_backward(lam, dlam)
            dz = ds * s * (1.0 - s)
            dcat = self.weight_net.backward(ffn_cache, dz[None, :])[0]
            for i, n in enumerate(names):
                dtok[n] += dcat[i * d_h:(i + 1) * d_h]
        for n in names:
            out = outs[n]
            dh = np.zeros_like(out.hidden)
            dh[0] = dtok[n]
            self.nets[n].backward(out, dbranch[n], dh)

    def mean_state_token(self, pred: FusedPrediction) -> np.ndarray:
        return np.mean([pred.branches[n].state_token for n in pred.cache["names"]], axis=0)


def aggregate(branch_probs: Sequence[np.ndarray], lam: Sequence[float]) -> np.ndarray:
    """Renormalised lam-weighted mixture of distributions over one action space."""
    shapes = {np.shape(p) for p in branch_probs}
    if len(shapes) != 1:
        raise ConsistencyError(f"action-space mismatch: {shapes}")
    mix = sum(l * np.asarray(p) for l, p in zip(lam, branch_probs))
    return normalize(mix)


def dynamic_fuse(p_l: np.ndarray, p_g: np.ndarray, embed_idx: np.ndarray, sigma: float):
    """P_a = normalise(sigma * P_g + (1 - sigma) * embed(P_l))."""
    if len(embed_idx) != len(p_l):
        raise ConsistencyError("local distribution and embedding disagree")
    if np.any(embed_idx >= len(p_g)) or np.any(embed_idx < 0):
        raise CoverageError("local action outside the global space")
    emb = np.zeros_like(p_g)
    emb[embed_idx] = p_l
    x = sigma * p_g + (1.0 - sigma) * emb
    return normalize(x), (x, p_g, emb)


def dynamic_fuse_backward(cache, dprobs: np.ndarray) -> tuple[np.ndarray, float]:
    x, p_g, emb = cache
    dx = normalize_backward(x, dprobs)
    return dx, float(np.dot(dx, p_g - emb))


# ---------------------------------------------------------------------------
# rollouts


@dataclass
class StepRecord:
    current: int
    action: int
    pred: FusedPrediction
    path: list  # nodes traversed to reach the action (excluding current)


@dataclass
class Trajectory:
    episode: Episode
    nodes: list
    steps: list
    stopped: bool = False
    predicted_object: int | None = None
    object_probs: np.ndarray | None = None
    object_cache: tuple | None = None

    @property
    def final(self) -> int:
        return self.nodes[-1]


class Navigator:
    """Per-rollout state: position, trajectory and one map per branch."""

    def __init__(self, agent: MBAAgent, g: WorldGraph, episode: Episode,
                 noise_rng: np.random.Generator | None = None):
        self.agent, self.g, self.episode = agent, g, episode
        self.noise_rng = noise_rng
        self.current = episode.start
        self.nodes = [episode.start]
        self.maps = {s.name: TopoMap() for s in agent.cfg.branches.slots}

    def panorama(self, slot: BranchSlot, n: int) -> PanoramaFeatures:
        return F.panorama(self.g, n, slot.spec, self.episode.seed, rng=self.noise_rng)

    def observe(self) -> FusedPrediction:
        panos = {}
        for slot in self.agent.cfg.branches.slots:
            pano = self.panorama(slot, self.current)
            self.maps[slot.name].update(self.current, pano, self.g)
            panos[slot.name] = pano
        return self.agent.step(self.g, self.episode.instruction, self.current, panos, self.maps)

    def move(self, action: int) -> list:
        if action == self.current:
            raise StateError("cannot move to the current node")
        ref = next(iter(self.maps.values()))
        path = ref.path(self.g, self.current, action)
        self.nodes.extend(path[1:])
        self.current = action
        return path[1:]


def rollout(
    agent: MBAAgent,
    g: WorldGraph,
    episode: Episode,
    mode: str = "greedy",
    max_steps: int | None = None,
    rng: np.random.Generator | None = None,
    policy: Callable[[int, int, FusedPrediction], int] | None = None,
    on_step: Callable[[int, int, int, FusedPrediction], None] | None = None,
    noise_rng: np.random.Generator | None = None,
) -> Trajectory:
    """Run one episode.

    ``policy(t, current, pred) -> action`` overrides ``mode``;
    ``on_step(t, current, action, pred)`` fires before the move.
    """
    if mode not in ("greedy", "sample"):
        raise ParameterError(f"unknown mode {mode!r}")
    if mode == "sample" and rng is None and policy is None:
        raise ParameterError("sample mode needs an rng")
    max_steps = episode.max_steps if max_steps is None else max_steps
    nav = Navigator(agent, g, episode, noise_rng)
    traj = Trajectory(episode, nav.nodes, [])
    for t in range(max_steps):
        cur = nav.current
        pred = nav.observe()
        if policy is not None:
            action = policy(t, cur, pred)
        elif mode == "greedy":
            action = pred.argmax()
        else:
            action = pred.action_ids[int(rng.choice(len(pred.probs), p=pred.probs))]
        if on_step is not None:
            on_step(t, cur, action, pred)
        if action == STOP:
            traj.steps.append(StepRecord(cur, action, pred, []))
            traj.stopped = True
            objs = g.nodes[cur].objects
            if objs:
                feats = np.stack([o.feature for o in objs])
                p_o, ocache = agent.predict_objects(agent.mean_state_token(pred), feats, episode.instruction)
                traj.object_probs, traj.object_cache = p_o, ocache
                traj.predicted_object = objs[int(np.argmax(p_o))].object_id
            break
        path = nav.move(action)
        traj.steps.append(StepRecord(cur, action, pred, path))
    traj.nodes = nav.nodes
    return traj
