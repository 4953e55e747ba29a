"""Imitation training with teacher forcing plus DAgger-style supervision.

Loss per episode::

    mu * sum_t CE(P_a, a_gt)   (teacher-forced rollouts)
       + sum_t CE(P_a, a_star) (student-sampled rollouts)
       + CE(P_o, o_gt)         (when the episode stops at a node hosting the goal object id)

averaged over the batch.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from mba.agent import STOP, FusedPrediction, MBAAgent, Trajectory, rollout
from mba.errors import AlignmentError, NumericError, ParameterError, StateError
from mba.metrics import success as _success
from mba.neural import ParamStore, cross_entropy
from mba.world import Episode, WorldGraph

log = logging.getLogger(__name__)

TIE_TOL = 1e-9


@dataclass(frozen=True)
class TrainConfig:
    mu: float = 0.2
    gamma: float = 0.5
    lr: float = 1e-3
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 4
    il_dagger_mix: float = 0.5
    seed: int = 0
    optimizer: str = "adam"  # "adam" | "sgd" (momentum)
    clip_norm: float = 0.0  # 0 disables global-norm clipping

    def __post_init__(self):
        if self.mu < 0:
            raise ParameterError(f"mu must be >= 0, got {self.mu}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ParameterError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 <= self.il_dagger_mix <= 1.0:
            raise ParameterError(f"il_dagger_mix must lie in [0, 1], got {self.il_dagger_mix}")
        if self.optimizer not in ("sgd", "adam"):
            raise ParameterError(f"unknown optimizer {self.optimizer!r}")
        if self.lr < 0 or self.epochs < 0 or self.batch_size < 1 or not 0 <= self.momentum < 1:
            raise ParameterError("invalid lr / epochs / batch_size / momentum")


@dataclass(frozen=True)
class StepSupervision:
    a_star: int
    a_gt: int | None = None
    o_gt: int | None = None


@dataclass
class LossTerms:
    total: float = 0.0
    t1: float = 0.0  # teacher-forced action CE (unweighted)
    t2: float = 0.0  # DAgger action CE
    t3: float = 0.0  # object CE


def dagger_target(g: WorldGraph, current: int, action_space: Sequence[int], goal: int) -> int:
    """Action whose node lies on the shortest remaining route to ``goal``.

    Stop at the goal; otherwise minimise geodesic(current, n) + geodesic(n, goal),
    preferring the nearer node and then the lower id among ties.
    """
    nodes = [a for a in action_space if a != STOP]
    if not action_space:
        raise StateError("empty action space")
    if current == goal:
        return STOP
    if not nodes:
        return STOP
    D = g.geodesics
    via = {n: D[current, n] + D[n, goal] for n in nodes}
    best = min(via.values())
    tied = [n for n in nodes if via[n] <= best + TIE_TOL]
    return min(tied, key=lambda n: (D[current, n], n))


def episode_loss(
    predictions: Sequence[FusedPrediction],
    supervision: Sequence[StepSupervision],
    mu: float,
    object_probs: np.ndarray | None = None,
) -> LossTerms:
    """Loss of one episode from recorded distributions (no gradients)."""
    if len(predictions) != len(supervision):
        raise AlignmentError(f"{len(predictions)} predictions vs {len(supervision)} supervision steps")
    terms = LossTerms()
    for pred, sup in zip(predictions, supervision):
        if sup.a_gt is not None:
            terms.t1 += cross_entropy(pred.probs, pred.index(sup.a_gt))
        else:
            terms.t2 += cross_entropy(pred.probs, pred.index(sup.a_star))
    if supervision and supervision[-1].o_gt is not None and object_probs is not None:
        terms.t3 = cross_entropy(object_probs, supervision[-1].o_gt)
    terms.total = mu * terms.t1 + terms.t2 + terms.t3
    return terms


def object_target(g: WorldGraph, traj: Trajectory) -> int | None:
    if not traj.stopped or traj.object_probs is None:
        return None
    ids = [o.object_id for o in g.nodes[traj.final].objects]
    goal_obj = traj.episode.goal_object
    return ids.index(goal_obj) if goal_obj in ids else None


def teacher_policy(ep: Episode):
    def choose(t: int, current: int, pred: FusedPrediction) -> int:
        path = ep.gt_path
        return path[t + 1] if t + 1 < len(path) else STOP

    return choose


def run_episode(
    agent: MBAAgent,
    g: WorldGraph,
    ep: Episode,
    mu: float,
    *,
    teacher: bool,
    rng: np.random.Generator | None = None,
    actions: Sequence[int] | None = None,
    backward: bool = True,
    scale: float = 1.0,
    noise_rng: np.random.Generator | None = None,
) -> tuple[Trajectory, list[StepSupervision], LossTerms]:
    """Roll out one episode, score it and (optionally) accumulate gradients.

    ``actions`` replays a fixed action sequence, which makes the loss a
    smooth function of the parameters (used by the gradient checks).
    ``noise_rng`` draws fresh ``rn`` views instead of the per-episode ones.
    """
    if actions is not None:
        seq = list(actions)
        policy = lambda t, cur, pred: seq[t]
        max_steps = len(seq)
    elif teacher:
        policy = teacher_policy(ep)
        max_steps = max(ep.max_steps, len(ep.gt_path))
    else:
        if rng is None:
            raise ParameterError("student rollouts need an rng")
        policy = None
        max_steps = ep.max_steps
    traj = rollout(agent, g, ep, mode="sample", rng=rng, policy=policy, max_steps=max_steps, noise_rng=noise_rng)

    sup = []
    preds = [s.pred for s in traj.steps]
    for t, step in enumerate(traj.steps):
        a_star = dagger_target(g, step.current, step.pred.action_ids, ep.goal)
        a_gt = None
        if teacher:
            a_gt = ep.gt_path[t + 1] if t + 1 < len(ep.gt_path) else STOP
        sup.append(StepSupervision(a_star=a_star, a_gt=a_gt))
    o_gt = object_target(g, traj)
    if sup and o_gt is not None:
        last = sup[-1]
        sup[-1] = StepSupervision(last.a_star, last.a_gt, o_gt)
    terms = episode_loss(preds, sup, mu, traj.object_probs)
    if not math.isfinite(terms.total):
        raise NumericError(f"non-finite loss {terms.total} in episode {ep.episode_id} (world {ep.world_seed})")

    if backward:
        last = len(traj.steps) - 1
        for t, (pred, s) in enumerate(zip(preds, sup)):
            dp = np.zeros_like(pred.probs)
            if s.a_gt is not None:
                i = pred.index(s.a_gt)
                dp[i] -= scale * mu / pred.probs[i]
            else:
                i = pred.index(s.a_star)
                dp[i] -= scale / pred.probs[i]
            dstate = None
            if t == last and s.o_gt is not None:
                p_o = traj.object_probs
                dpo = np.zeros_like(p_o)
                dpo[s.o_gt] = -scale / p_o[s.o_gt]
                dtok = agent.predict_objects_backward(p_o, traj.object_cache, dpo)
                names = pred.cache["names"]
                dstate = {n: dtok / len(names) for n in names}
            agent.backward(pred, dp, dstate)
    return traj, sup, terms


# ---------------------------------------------------------------------------
# optimisation


class SGDMomentum:
    def __init__(self, store: ParamStore, lr: float, momentum: float):
        self.store, self.lr, self.momentum = store, lr, momentum
        self.buf = {k: np.zeros_like(v) for k, v in store.params.items()}

    def step(self):
        for k, p in self.store.params.items():
            b = self.buf[k]
            b *= self.momentum
            b += self.store.grads[k]
            p -= self.lr * b


class Adam:
    def __init__(self, store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.store, self.lr, self.b1, self.b2, self.eps = store, lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in store.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in store.params.items()}
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in self.store.params.items():
            g = self.store.grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_gradients(store: ParamStore, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in store.grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in store.grads.values():
            g *= scale
    return norm


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    term1: float
    term2: float
    term3: float
    train_sr: float


@dataclass
class TrainResult:
    store: ParamStore
    curve: list[EpochStats] = field(default_factory=list)


def train(
    agent: MBAAgent,
    data: Sequence[tuple[WorldGraph, Sequence[Episode]]],
    cfg: TrainConfig,
) -> TrainResult:
    """Optimise ``agent.store`` in place; returns the store and per-epoch curve."""
    items = [(wi, ei) for wi, (_, eps) in enumerate(data) for ei in range(len(eps))]
    if not items:
        raise ParameterError("no training episodes")
    if cfg.optimizer == "adam":
        opt = Adam(agent.store, cfg.lr)
    else:
        opt = SGDMomentum(agent.store, cfg.lr, cfg.momentum)
    result = TrainResult(agent.store)
    for epoch in range(1, cfg.epochs + 1):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed & (2**64 - 1), 0x7A1, epoch]))
        order = rng.permutation(len(items))
        totals = LossTerms()
        n_ep = 0
        student_runs = student_succ = 0
        for b0 in range(0, len(order), cfg.batch_size):
            batch = [items[i] for i in order[b0:b0 + cfg.batch_size]]
            agent.store.zero_grad()
            for wi, ei in batch:
                g, ep = data[wi][0], data[wi][1][ei]
                teacher = bool(rng.random() < cfg.il_dagger_mix)
                ep_rng = np.random.default_rng(rng.integers(2**63))
                # new noise every epoch, or the rn branches memorise it per episode
                noise_rng = np.random.default_rng([cfg.seed & (2**64 - 1), 0x4E, epoch, wi, ei])
                traj, _, terms = run_episode(
                    agent, g, ep, cfg.mu, teacher=teacher, rng=ep_rng, scale=1.0 / len(batch),
                    noise_rng=noise_rng,
                )
                totals.total += terms.total
                totals.t1 += terms.t1
                totals.t2 += terms.t2
                totals.t3 += terms.t3
                n_ep += 1
                if not teacher:
                    student_runs += 1
                    student_succ += _success(g, traj.final, ep.goal)
            for k, gr in agent.store.grads.items():
                if not np.all(np.isfinite(gr)):
                    raise NumericError(f"non-finite gradient in {k} at epoch {epoch}")
            if cfg.clip_norm > 0:
                clip_gradients(agent.store, cfg.clip_norm)
            opt.step()
        stats = EpochStats(
            epoch,
            totals.total / n_ep,
            totals.t1 / n_ep,
            totals.t2 / n_ep,
            totals.t3 / n_ep,
            student_succ / student_runs if student_runs else 1.0,
        )
        log.info("epoch %d loss %.4f sr %.3f", epoch, stats.mean_loss, stats.train_sr)
        result.curve.append(stats)
    return result
