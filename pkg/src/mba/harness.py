"""Experiment plumbing behind the command-line interface.

Everything here is a pure function of its arguments: worlds, episodes, agent
initialisation and training order are all derived from explicit seeds, so
the CSVs written by the CLI are byte-identical across reruns.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from mba.agent import AgentConfig, BranchConfig, MBAAgent, Trajectory, rollout
from mba.errors import CheckpointMismatchError, MBAError, ParameterError
from mba.metrics import EpisodeResult, aggregate, episode_metrics, write_csv
from mba.neural import ParamStore
from mba.training import EpochStats, TrainConfig, TrainResult, dagger_target, train
from mba.world import DEFAULT_MAX_STEPS, Episode, WorldGraph, generate_world, make_episodes

log = logging.getLogger(__name__)

# seen and unseen worlds come from disjoint seed ranges; each grid seed owns
# a block of SEED_STRIDE consecutive world seeds inside both ranges
SEEN_BASE = 0
UNSEEN_BASE = 1_000_000
SEED_STRIDE = 1000
# seen-split evaluation episodes are drawn with this offset on the world seed
SEEN_EVAL_OFFSET = 500_000

TRAIN_LOG_COLUMNS = ("epoch", "mean_loss", "term1", "term2", "term3", "train_SR")
GRID_COLUMNS = ("config", "gamma", "seed", "split", "SR", "SPL", "RGS", "RGSPL", "status")
SPLITS = ("seen", "unseen")


@dataclass(frozen=True)
class WorldParams:
    nodes: int = 20
    k_views: int = 12
    m_max: int = 3
    d_f: int = 64
    d_o: int = 16
    d_w: int = 32
    max_steps: int = DEFAULT_MAX_STEPS

    def world(self, seed: int) -> WorldGraph:
        return generate_world(seed, self.nodes, self.k_views, self.m_max, self.d_f, d_o=self.d_o)

    def episodes(self, g: WorldGraph, n: int, seed: int) -> list[Episode]:
        return make_episodes(g, n, seed, self.d_w, max_steps=self.max_steps)


# ---------------------------------------------------------------------------
# train / evaluate


def check_compatible(cfg: AgentConfig, g: WorldGraph, episodes: Sequence[Episode]):
    """Raise CheckpointMismatchError unless agent, world and episodes fit together."""
    if cfg.d_f != g.d_f:
        raise CheckpointMismatchError(f"agent expects d_f={cfg.d_f}, world has {g.d_f}")
    if cfg.d_o != g.d_o:
        raise CheckpointMismatchError(f"agent expects d_o={cfg.d_o}, world has {g.d_o}")
    for ep in episodes:
        if ep.world_seed != g.seed:
            raise CheckpointMismatchError(
                f"episode {ep.episode_id} belongs to world {ep.world_seed}, not {g.seed}"
            )
        if ep.instruction.shape != (cfg.d_w,):
            raise CheckpointMismatchError(
                f"episode {ep.episode_id} instruction has dim {ep.instruction.shape[0]}, agent expects {cfg.d_w}"
            )
        if max(ep.start, ep.goal) >= g.K:
            raise CheckpointMismatchError(f"episode {ep.episode_id} references nodes outside the world")


def checkpoint_json(agent: MBAAgent, extra: dict | None = None) -> str:
    meta = {"agent": agent.cfg.to_meta()}
    if extra:
        meta.update(extra)
    return agent.store.to_json(meta)


def load_checkpoint(text: str) -> tuple[MBAAgent, dict]:
    store, meta = ParamStore.from_json(text)
    try:
        cfg = AgentConfig.from_meta(meta["agent"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointMismatchError(f"checkpoint metadata unreadable: {exc}") from exc
    fresh = MBAAgent(cfg)
    try:
        fresh.store.load_from(store)
    except MBAError as exc:
        raise CheckpointMismatchError(str(exc)) from exc
    return fresh, meta


def train_agent(
    agent_cfg: AgentConfig,
    data: Sequence[tuple[WorldGraph, Sequence[Episode]]],
    train_cfg: TrainConfig,
) -> tuple[MBAAgent, TrainResult]:
    agent = MBAAgent(agent_cfg)
    for g, eps in data:
        check_compatible(agent_cfg, g, eps)
    return agent, train(agent, data, train_cfg)


def train_log_csv(curve: Sequence[EpochStats]) -> str:
    rows = [
        {
            "epoch": s.epoch,
            "mean_loss": s.mean_loss,
            "term1": s.term1,
            "term2": s.term2,
            "term3": s.term3,
            "train_SR": s.train_sr,
        }
        for s in curve
    ]
    return write_csv(rows, TRAIN_LOG_COLUMNS)


def oracle_policy(g: WorldGraph, ep: Episode):
    """Follow the DAgger target over the agent's own action space."""

    def choose(t: int, current: int, pred) -> int:
        return dagger_target(g, current, pred.action_ids, ep.goal)

    return choose


def evaluate(
    agent: MBAAgent, g: WorldGraph, episodes: Sequence[Episode], policy: str = "agent"
) -> tuple[list[dict], list[Trajectory]]:
    """Greedy rollouts (or the oracle) scored per episode."""
    if policy not in ("agent", "oracle"):
        raise ParameterError(f"unknown policy {policy!r}")
    rows, trajs = [], []
    for ep in episodes:
        pol = oracle_policy(g, ep) if policy == "oracle" else None
        traj = rollout(agent, g, ep, mode="greedy", policy=pol)
        res = EpisodeResult(g, ep, tuple(traj.nodes), traj.stopped, traj.predicted_object, len(traj.steps))
        rows.append(episode_metrics(res))
        trajs.append(traj)
    return rows, trajs


def trajectory_record(traj: Trajectory) -> dict:
    return {
        "episode_id": traj.episode.episode_id,
        "world_seed": traj.episode.world_seed,
        "start": traj.episode.start,
        "goal": traj.episode.goal,
        "nodes": list(traj.nodes),
        "actions": [s.action for s in traj.steps],
        "lam": [s.pred.lam for s in traj.steps],
        "sigma": [s.pred.sigma for s in traj.steps],
        "stopped": traj.stopped,
        "predicted_object": traj.predicted_object,
    }


# ---------------------------------------------------------------------------
# ablation grid


@dataclass(frozen=True)
class GridCell:
    config: str  # may contain bare "pv", resolved per gamma
    row: str
    col: str


def _label(specs: Sequence[str]) -> str:
    return "+".join(specs) if specs else "none"


def ancillary_grid(global_specs: Sequence[str], local_specs: Sequence[str], base: str = "og") -> list[GridCell]:
    """Base branches fixed; rows vary the ancillary global input, columns the ancillary local one."""
    cells = []
    for gs in global_specs:
        for ls in local_specs:
            parts = [f"g:{base}", f"l:{base}"]
            if gs != "none":
                parts.append(f"g:{gs}")
            if ls != "none":
                parts.append(f"l:{ls}")
            cells.append(GridCell(",".join(parts), gs, ls))
    return cells


def base_grid(global_specs: Sequence[str], local_specs: Sequence[str]) -> list[GridCell]:
    """Single pair of base branches; 'none' drops that scope."""
    cells = []
    for gs in global_specs:
        for ls in local_specs:
            parts = [f"g:{gs}" if gs != "none" else "-", f"l:{ls}" if ls != "none" else "-"]
            if gs == "none" and ls == "none":
                continue
            cells.append(GridCell(",".join(parts), gs, ls))
    return cells


def explicit_grid(configs: Sequence[str]) -> list[GridCell]:
    cells = []
    for text in configs:
        entries = [e.strip() for e in text.split(",") if e.strip() not in ("", "-")]
        gl = [e.partition(":")[2] for e in entries if e.startswith("g")]
        lo = [e.partition(":")[2] for e in entries if e.startswith("l")]
        cells.append(GridCell(text, _label(gl), _label(lo)))
    return cells


@dataclass(frozen=True)
class AblationSpec:
    cells: tuple[GridCell, ...]
    gammas: tuple[float, ...] = (0.5,)
    seeds: tuple[int, ...] = (0,)
    world: WorldParams = WorldParams()
    train_worlds: int = 1
    unseen_worlds: int = 1
    train_episodes: int = 100
    eval_episodes: int = 50
    d_h: int = 64
    ffn_hidden: int = 128
    share_params: bool = False
    train: TrainConfig = TrainConfig()

    def __post_init__(self):
        if not self.cells or not self.gammas or not self.seeds:
            raise ParameterError("ablation needs at least one config, gamma and seed")
        if not 1 <= self.train_worlds <= SEED_STRIDE or not 1 <= self.unseen_worlds <= SEED_STRIDE:
            raise ParameterError(f"world counts must lie in [1, {SEED_STRIDE}]")
        if self.train_episodes < 1 or self.eval_episodes < 1:
            raise ParameterError("episode counts must be positive")
        for s in self.seeds:
            if s < 0 or (s + 1) * SEED_STRIDE > UNSEEN_BASE:
                raise ParameterError(f"grid seed {s} outside [0, {UNSEEN_BASE // SEED_STRIDE})")
        for c in self.cells:
            for gm in self.gammas:
                BranchConfig.parse(c.config, gm)

    def agent_config(self, branches: BranchConfig, seed: int) -> AgentConfig:
        w = self.world
        return AgentConfig(branches, d_f=w.d_f, d_w=w.d_w, d_o=w.d_o, d_h=self.d_h,
                           ffn_hidden=self.ffn_hidden, share_params=self.share_params, seed=seed)


def seen_world_seeds(seed: int, n: int) -> list[int]:
    return [SEEN_BASE + seed * SEED_STRIDE + i for i in range(n)]


def unseen_world_seeds(seed: int, n: int) -> list[int]:
    return [UNSEEN_BASE + seed * SEED_STRIDE + i for i in range(n)]


@dataclass
class GridRow:
    config: str
    gamma: float
    seed: int
    split: str
    row: str
    col: str
    metrics: dict = field(default_factory=dict)
    status: str = "ok"

    def as_csv_row(self) -> dict:
        out = {"config": self.config, "gamma": self.gamma, "seed": self.seed, "split": self.split,
               "status": self.status}
        for k in ("SR", "SPL", "RGS", "RGSPL"):
            out[k] = self.metrics[k] if self.metrics else ""
        return out


def _run_cell(spec: AblationSpec, branches: BranchConfig, seed: int, splits) -> dict:
    data = splits["train"]
    cfg = replace(spec.train, seed=seed)
    agent, _ = train_agent(spec.agent_config(branches, seed), data, cfg)
    out = {}
    for split in SPLITS:
        rows = []
        for g, eps in splits[split]:
            rows += evaluate(agent, g, eps)[0]
        out[split] = aggregate(rows)
    return out


def _splits(spec: AblationSpec, seed: int) -> dict:
    w = spec.world
    train_data, seen, unseen = [], [], []
    for ws in seen_world_seeds(seed, spec.train_worlds):
        g = w.world(ws)
        train_data.append((g, w.episodes(g, spec.train_episodes, ws)))
        seen.append((g, w.episodes(g, spec.eval_episodes, ws + SEEN_EVAL_OFFSET)))
    for ws in unseen_world_seeds(seed, spec.unseen_worlds):
        g = w.world(ws)
        unseen.append((g, w.episodes(g, spec.eval_episodes, ws)))
    return {"train": train_data, "seen": seen, "unseen": unseen}


def run_grid(spec: AblationSpec, progress: Callable[[str], None] | None = None) -> list[GridRow]:
    """Train and evaluate every (config, gamma, seed) cell; failures become status rows.

    Cells whose resolved branch configuration coincides (e.g. a config
    without ``pv`` under several gammas) are trained once and reused.
    """
    done: dict[tuple[str, int], dict | str] = {}
    rows: list[GridRow] = []
    for seed in spec.seeds:
        splits = None
        for cell in spec.cells:
            for gamma in spec.gammas:
                branches = BranchConfig.parse(cell.config, gamma)
                key = (str(branches), seed)
                if key not in done:
                    if splits is None:
                        splits = _splits(spec, seed)
                    t0 = time.perf_counter()
                    try:
                        done[key] = _run_cell(spec, branches, seed, splits)
                        status = "ok"
                    except MBAError as exc:
                        done[key] = f"error:{type(exc).__name__}"
                        status = done[key]
                    if progress:
                        progress(f"{branches} seed={seed}: {status} ({time.perf_counter() - t0:.1f}s)")
                res = done[key]
                for split in SPLITS:
                    row = GridRow(cell.config, gamma, seed, split, cell.row, cell.col)
                    if isinstance(res, str):
                        row.status = res
                    else:
                        row.metrics = res[split]
                    rows.append(row)
    return rows


def grid_csv(rows: Sequence[GridRow]) -> str:
    return write_csv([r.as_csv_row() for r in rows], GRID_COLUMNS)


def spl_matrix(rows: Sequence[GridRow], split: str, gamma: float, metric: str = "SPL"):
    """(row labels, col labels, matrix of seed-mean values; nan where no cell succeeded)."""
    sel = [r for r in rows if r.split == split and r.gamma == gamma]
    rlabels = list(dict.fromkeys(r.row for r in sel))
    clabels = list(dict.fromkeys(r.col for r in sel))
    mat = np.full((len(rlabels), len(clabels)), np.nan)
    for i, rl in enumerate(rlabels):
        for j, cl in enumerate(clabels):
            vals = [r.metrics[metric] for r in sel if r.row == rl and r.col == cl and r.status == "ok"]
            if vals:
                mat[i, j] = float(np.mean(vals))
    return rlabels, clabels, mat


def spl_matrix_csv(rows: Sequence[GridRow], gammas: Sequence[float]) -> str:
    """Pivoted SPL: one block per (split, gamma); rows = global spec, columns = local spec."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header_done = False
    for split in SPLITS:
        for gamma in gammas:
            rl, cl, mat = spl_matrix(rows, split, gamma)
            if not header_done:
                w.writerow(["split", "gamma", "global\\local"] + cl)
                header_done = True
            for i, label in enumerate(rl):
                vals = ["nan" if math.isnan(v) else f"{v:.6f}" for v in mat[i]]
                w.writerow([split, f"{gamma:.6f}", label] + vals)
    return buf.getvalue()


def per_seed_table(rows: Sequence[GridRow], split: str, metric: str) -> dict[str, dict[int, float]]:
    """config -> seed -> metric, for directional comparisons."""
    out: dict[str, dict[int, float]] = {}
    for r in rows:
        if r.split == split and r.status == "ok":
            out.setdefault(r.config, {})[r.seed] = r.metrics[metric]
    return out
