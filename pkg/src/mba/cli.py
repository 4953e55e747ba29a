"""``mba gen-world | train | eval | ablate``.

Every option can also come from ``--config FILE``: flat ``key = value`` lines
(``#`` starts a comment, dashes and underscores in keys are interchangeable).
Command-line values win over the file, the file wins over built-in defaults.

Exit codes: 0 ok, 2 invalid arguments or inputs, 3 non-finite loss,
4 checkpoint / world / episode mismatch.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from mba import harness as H
from mba.agent import AgentConfig, BranchConfig, MBAAgent
from mba.errors import CheckpointMismatchError, MBAError, NumericError
from mba.metrics import aggregate, results_csv, summary_text, write_csv
from mba.training import TrainConfig
from mba.world import WorldGraph, dumps, episodes_from_jsonl, episodes_to_jsonl

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_MISMATCH = 0, 2, 3, 4

log = logging.getLogger("mba")


class UsageError(Exception):
    pass


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def _ints(text: str) -> tuple[int, ...]:
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _words(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in str(text).split(",") if x.strip())


def _configs(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in str(text).split(";") if x.strip())


@dataclass(frozen=True)
class Opt:
    name: str
    type: Callable[[str], Any]
    default: Any
    help: str = ""


_WORLD = [
    Opt("nodes", int, 20, "number of nodes K"),
    Opt("k_views", int, 12, "views per panorama"),
    Opt("m_max", int, 3, "maximum objects per node"),
    Opt("d_f", int, 64, "view feature dimension"),
    Opt("d_o", int, 16, "object feature dimension"),
    Opt("d_w", int, 32, "instruction dimension"),
    Opt("max_steps", int, 20, "decision budget per episode"),
]
_AGENT = [
    Opt("branches", str, "g:og,l:og", "branch configuration, e.g. g:og,l:og,g:pv:0.5,l:pv:0.5"),
    Opt("d_h", int, 64, "hidden token width"),
    Opt("ffn_hidden", int, 128, "FFN hidden width"),
    Opt("share_params", _bool, False, "ancillary branches share the base branch weights"),
]
_TRAIN = [
    Opt("mu", float, TrainConfig.mu, "weight of the teacher-forced term"),
    Opt("gamma", float, TrainConfig.gamma, "gamma used by bare 'pv' entries"),
    Opt("lr", float, TrainConfig.lr, "learning rate"),
    Opt("momentum", float, TrainConfig.momentum, "SGD momentum"),
    Opt("epochs", int, TrainConfig.epochs, "training epochs"),
    Opt("batch_size", int, TrainConfig.batch_size, "episodes per update"),
    Opt("il_dagger_mix", float, TrainConfig.il_dagger_mix, "fraction of teacher-forced rollouts"),
    Opt("optimizer", str, TrainConfig.optimizer, "adam or sgd"),
    Opt("clip_norm", float, TrainConfig.clip_norm, "global gradient-norm clip (0 = off)"),
]

COMMANDS: dict[str, list[Opt]] = {
    "gen-world": _WORLD
    + [
        Opt("episodes", int, 100, "number of episodes"),
        Opt("episode_seed", int, None, "episode seed (defaults to --seed)"),
    ],
    "train": [
        Opt("world", str, None, "world JSON"),
        Opt("episodes", str, None, "episode JSONL"),
    ]
    + _AGENT
    + _TRAIN,
    "eval": [
        Opt("checkpoint", str, None, "checkpoint JSON (not needed for --policy oracle)"),
        Opt("world", str, None, "world JSON"),
        Opt("episodes", str, None, "episode JSONL"),
        Opt("policy", str, "agent", "agent or oracle (follow the DAgger target)"),
        Opt("dump_traj", _bool, False, "also write trajectories.jsonl"),
    ],
    "ablate": _WORLD
    + _AGENT[1:]
    + _TRAIN
    + [
        Opt("grid", str, "ancillary", "ancillary, base or explicit"),
        Opt("global_specs", _words, ("none", "depth", "rn", "pv"), "row specs"),
        Opt("local_specs", _words, ("none", "depth", "rn", "pv"), "column specs"),
        Opt("configs", _configs, (), "explicit configs separated by ';'"),
        Opt("gammas", _floats, (0.5,), "gamma values"),
        Opt("seeds", _ints, (0,), "grid seeds, e.g. 0-4"),
        Opt("train_worlds", int, 1, "seen worlds per seed"),
        Opt("unseen_worlds", int, 1, "unseen worlds per seed"),
        Opt("train_episodes", int, 100, "training episodes per seen world"),
        Opt("eval_episodes", int, 50, "evaluation episodes per world and split"),
    ],
}


def parse_config_file(path: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{path}:{lineno}: expected key = value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mba", description="Multi-branch navigation experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, opts in COMMANDS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="key = value file; command-line options override it")
        sp.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
        sp.add_argument("--out", default=None, help="output directory (default .)")
        for o in opts:
            flag = "--" + o.name.replace("_", "-")
            hint = f"{o.help} (default: {o.default})" if o.default not in (None, ()) else o.help
            if o.type is _bool:
                sp.add_argument(flag, nargs="?", const="1", default=None, help=hint)
            else:
                sp.add_argument(flag, default=None, help=hint)
    return p


def resolve(command: str, ns: argparse.Namespace) -> dict[str, Any]:
    """Merge defaults, config file and command line, converting types."""
    opts = COMMANDS[command] + [Opt("seed", int, 0), Opt("out", str, ".")]
    known = {o.name for o in opts}
    file_vals = parse_config_file(ns.config) if ns.config else {}
    unknown = sorted(set(file_vals) - known)
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
    values = {}
    for o in opts:
        raw = getattr(ns, o.name, None)
        if raw is None:
            raw = file_vals.get(o.name)
        if raw is None:
            values[o.name] = o.default
            continue
        try:
            values[o.name] = o.type(raw)
        except ValueError as exc:
            raise UsageError(f"bad value for {o.name}: {raw!r} ({exc})") from exc
    return values


def _require(v: dict, *names: str):
    missing = [n for n in names if not v.get(n)]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _world_params(v: dict) -> H.WorldParams:
    return H.WorldParams(v["nodes"], v["k_views"], v["m_max"], v["d_f"], v["d_o"], v["d_w"], v["max_steps"])


def _train_config(v: dict) -> TrainConfig:
    return TrainConfig(
        mu=v["mu"], gamma=v["gamma"], lr=v["lr"], momentum=v["momentum"], epochs=v["epochs"],
        batch_size=v["batch_size"], il_dagger_mix=v["il_dagger_mix"], seed=v["seed"],
        optimizer=v["optimizer"], clip_norm=v["clip_norm"],
    )


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return path


def _load_inputs(v: dict):
    g = WorldGraph.from_json(Path(v["world"]).read_text())
    eps = episodes_from_jsonl(Path(v["episodes"]).read_text())
    if not eps:
        raise UsageError(f"{v['episodes']} holds no episodes")
    return g, eps


# ---------------------------------------------------------------------------
# commands


def cmd_gen_world(v: dict) -> int:
    wp = _world_params(v)
    seed = v["seed"]
    g = wp.world(seed)
    ep_seed = seed if v["episode_seed"] is None else v["episode_seed"]
    eps = wp.episodes(g, v["episodes"], ep_seed)
    out = Path(v["out"])
    _write(out, "world.json", g.to_json() + "\n")
    _write(out, "episodes.jsonl", episodes_to_jsonl(eps))
    print(f"K={g.K} edges={len(g.edges)} episodes={len(eps)}")
    return EXIT_OK


def cmd_train(v: dict) -> int:
    _require(v, "world", "episodes")
    g, eps = _load_inputs(v)
    branches = BranchConfig.parse(v["branches"], v["gamma"])
    cfg = AgentConfig(branches, d_f=g.d_f, d_w=eps[0].instruction.shape[0], d_o=g.d_o, d_h=v["d_h"],
                      ffn_hidden=v["ffn_hidden"], share_params=v["share_params"], seed=v["seed"])
    agent, result = H.train_agent(cfg, [(g, eps)], _train_config(v))
    out = Path(v["out"])
    _write(out, "checkpoint.json", H.checkpoint_json(agent, {"world_seed": g.seed}) + "\n")
    _write(out, "train_log.csv", H.train_log_csv(result.curve))
    last = result.curve[-1] if result.curve else None
    if last:
        print(f"epochs={last.epoch} loss={last.mean_loss:.4f} train_SR={last.train_sr:.3f}")
    else:
        print("epochs=0")
    return EXIT_OK


def cmd_eval(v: dict) -> int:
    _require(v, "world", "episodes")
    g, eps = _load_inputs(v)
    if v["policy"] == "oracle" and not v["checkpoint"]:
        # the oracle ignores the network; any agent supplies the action spaces
        agent = MBAAgent(AgentConfig(BranchConfig.parse("g:og,l:og"), d_f=g.d_f,
                                     d_w=eps[0].instruction.shape[0], d_o=g.d_o, seed=v["seed"]))
    else:
        _require(v, "checkpoint")
        agent, _ = H.load_checkpoint(Path(v["checkpoint"]).read_text())
    H.check_compatible(agent.cfg, g, eps)
    rows, trajs = H.evaluate(agent, g, eps, v["policy"])
    summary = aggregate(rows)
    out = Path(v["out"])
    _write(out, "results.csv", results_csv(rows))
    _write(out, "summary.csv", write_csv([summary], ("episodes",) + tuple(k for k in summary if k != "episodes")))
    if v["dump_traj"]:
        _write(out, "trajectories.jsonl", "".join(dumps(H.trajectory_record(t)) + "\n" for t in trajs))
    print(summary_text(summary))
    return EXIT_OK


def ablation_spec(v: dict) -> H.AblationSpec:
    kind = v["grid"]
    if v["configs"] and kind != "explicit":
        kind = "explicit"
    if kind == "ancillary":
        cells = H.ancillary_grid(v["global_specs"], v["local_specs"])
    elif kind == "base":
        cells = H.base_grid(v["global_specs"], v["local_specs"])
    elif kind == "explicit":
        if not v["configs"]:
            raise UsageError("--grid explicit needs --configs")
        cells = H.explicit_grid(v["configs"])
    else:
        raise UsageError(f"unknown grid kind {kind!r}")
    return H.AblationSpec(
        cells=tuple(cells), gammas=v["gammas"], seeds=v["seeds"], world=_world_params(v),
        train_worlds=v["train_worlds"], unseen_worlds=v["unseen_worlds"],
        train_episodes=v["train_episodes"], eval_episodes=v["eval_episodes"],
        d_h=v["d_h"], ffn_hidden=v["ffn_hidden"], share_params=v["share_params"],
        train=_train_config(v),
    )


def cmd_ablate(v: dict) -> int:
    spec = ablation_spec(v)
    rows = H.run_grid(spec, progress=log.info)
    out = Path(v["out"])
    _write(out, "grid.csv", H.grid_csv(rows))
    _write(out, "spl_matrix.csv", H.spl_matrix_csv(rows, spec.gammas))
    failed = sum(r.status != "ok" for r in rows)
    print(f"cells={len(rows) // len(H.SPLITS)} failed={failed // len(H.SPLITS)}")
    return EXIT_OK


HANDLERS = {"gen-world": cmd_gen_world, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        values = resolve(ns.command, ns)
        return HANDLERS[ns.command](values)
    except CheckpointMismatchError as exc:
        print(f"mba: mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except NumericError as exc:
        print(f"mba: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, MBAError, ValueError, OSError) as exc:
        print(f"mba: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
