"""Navigation and grounding metrics: TL, NE, SR, SPL, RGS, RGSPL."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from mba.errors import InvalidTrajectoryError, ParameterError
from mba.world import Episode, WorldGraph

SUCCESS_RADIUS = 3.0
METRIC_KEYS = ("TL", "NE", "SR", "SPL", "RGS", "RGSPL")
PERCENT_KEYS = ("SR", "SPL", "RGS", "RGSPL")
CSV_COLUMNS = ("episode_id", "TL", "NE", "SR", "SPL", "RGS", "RGSPL", "stopped", "steps")


@dataclass(frozen=True)
class EpisodeResult:
    world: WorldGraph
    episode: Episode
    trajectory: tuple
    stopped: bool
    predicted_object: int | None = None
    steps: int = 0

    def __post_init__(self):
        if not self.trajectory or self.trajectory[0] != self.episode.start:
            raise InvalidTrajectoryError("trajectory must start at the episode start")


def trajectory_length(result: EpisodeResult) -> float:
    g, nodes = result.world, result.trajectory
    total = 0.0
    for a, b in zip(nodes, nodes[1:]):
        if not g.has_edge(a, b):
            raise InvalidTrajectoryError(f"{a} -> {b} is not an edge")
        total += g.edge_weight(a, b)
    return total


def navigation_error(result: EpisodeResult) -> float:
    return result.world.geodesic(result.trajectory[-1], result.episode.goal)


def success(g: WorldGraph, final: int, goal: int) -> int:
    return int(g.geodesic(final, goal) <= SUCCESS_RADIUS)


def success_of(result: EpisodeResult) -> int:
    return int(navigation_error(result) <= SUCCESS_RADIUS)


def spl(success: float, tl: float, d_gt: float) -> float:
    if tl < 0 or d_gt < 0 or success < 0:
        raise ParameterError("SPL inputs must be non-negative")
    if success == 0:
        return 0.0
    if d_gt == 0:
        return float(success)
    return success * d_gt / max(tl, d_gt)


def rgs(result: EpisodeResult) -> int:
    return int(
        success_of(result) == 1
        and result.stopped
        and result.predicted_object is not None
        and result.predicted_object == result.episode.goal_object
    )


def rgspl(result: EpisodeResult) -> float:
    return spl(rgs(result), trajectory_length(result), result.episode.d_gt)


def episode_metrics(result: EpisodeResult) -> dict:
    tl = trajectory_length(result)
    sr = success_of(result)
    return {
        "episode_id": result.episode.episode_id,
        "TL": tl,
        "NE": navigation_error(result),
        "SR": sr,
        "SPL": spl(sr, tl, result.episode.d_gt),
        "RGS": rgs(result),
        "RGSPL": rgspl(result),
        "stopped": int(result.stopped),
        "steps": result.steps,
    }


def aggregate(rows: Sequence[dict]) -> dict:
    """Means over episodes; SR/SPL/RGS/RGSPL as percentages, TL/NE in metres."""
    if not rows:
        raise ParameterError("cannot aggregate an empty result set")
    out = {}
    for k in METRIC_KEYS:
        m = float(np.mean([float(r[k]) for r in rows]))
        out[k] = m * 100.0 if k in PERCENT_KEYS else m
    out["episodes"] = len(rows)
    return out


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.6f}"


def write_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) if not isinstance(r[c], str) else r[c] for c in columns])
    return buf.getvalue()


def results_csv(rows: Sequence[dict]) -> str:
    return write_csv(rows, CSV_COLUMNS)


def read_results_csv(text: str) -> list[dict]:
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        rows.append({k: float(v) for k, v in r.items()})
    return rows


def summary_text(summary: dict) -> str:
    parts = [f"{k}={summary[k]:.2f}" for k in METRIC_KEYS]
    return " ".join(parts) + f" (n={summary['episodes']})"
