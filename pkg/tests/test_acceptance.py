"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the lines are printed even
without ``-s``. Criteria that train agents are marked ``slow``.
"""

import math
import subprocess
import sys
import time

import numpy as np
import pytest

from mba import harness as H
from mba.agent import STOP, AgentConfig, BranchConfig, MBAAgent, rollout
from mba.features import perturbed_view
from mba.metrics import EpisodeResult, aggregate, episode_metrics, spl, success
from mba.neural import finite_diff_check
from mba.training import TrainConfig, run_episode, train
from mba.world import Episode, build_world, generate_world, make_episodes, shortest_path


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail=""):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))
        assert ok, detail

    return emit


def test_perturbation_identities(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst_ends, worst_lin = 0.0, 0.0
    for _ in range(1000):
        d = int(rng.integers(1, 129))
        og, iv = rng.normal(size=d), rng.normal(size=d)
        worst_ends = max(worst_ends, np.abs(perturbed_view(og, iv, 0.0) - og).max(),
                         np.abs(perturbed_view(og, iv, 1.0) - iv).max())
        # linear in gamma: v(g) is the chord between v(a) and v(b)
        a, b, t = rng.uniform(size=3)
        g = a + t * (b - a)
        lhs = perturbed_view(og, iv, g)
        rhs = (1 - t) * perturbed_view(og, iv, a) + t * perturbed_view(og, iv, b)
        worst_lin = max(worst_lin, np.abs(lhs - rhs).max(),
                        np.abs(lhs - ((1 - g) * og + g * iv)).max())
    dt = time.perf_counter() - t0
    report("perturbation identities", worst_ends < 1e-12 and worst_lin < 1e-12 and dt < 1,
           f"endpoint diff {worst_ends:.1e}, linearity diff {worst_lin:.1e}, {dt:.2f}s")


def test_aggregation_contract(report):
    t0 = time.perf_counter()
    d_h = 16
    agents = {k: MBAAgent(AgentConfig(BranchConfig.parse(t), d_f=8, d_w=6, d_o=4, d_h=d_h, ffn_hidden=16))
              for k, t in [(2, "g:og,l:og"), (3, "g:og,l:og,g:rn"), (4, "g:og,l:og,g:rn,l:rn")]}
    rng = np.random.default_rng(1)
    worst_sum, worst_ratio = 0.0, 0.0
    for i in range(10_000):
        k = 2 + i % 3
        scale = 10.0 ** rng.uniform(-2, 3)
        lam, _ = agents[k].branch_weights([rng.normal(scale=scale, size=d_h) for _ in range(k)])
        worst_sum = max(worst_sum, abs(lam.sum() - 1))
        worst_ratio = max(worst_ratio, lam.max() / lam.min())
    uniform_err = 0.0
    for k, agent in agents.items():
        agent.store[f"weights{k}.l2.W"][...] = 0
        agent.store[f"weights{k}.l2.b"][...] = 0
        lam, _ = agent.branch_weights([rng.normal(size=d_h) for _ in range(k)])
        uniform_err = max(uniform_err, np.abs(lam - 1 / k).max())
    dt = time.perf_counter() - t0
    # saturated sigmoids give {0, 1} exactly; the ratio then sits on e up to division rounding
    ulps = (worst_ratio - math.e) / np.spacing(math.e)
    ok = worst_sum <= 1e-12 and ulps <= 4 and uniform_err <= 1e-12 and dt < 5
    report("aggregation contract", ok,
           f"|sum-1| {worst_sum:.1e}, max ratio {worst_ratio:.16f} ({ulps:+.0f} ulp from e), "
           f"zero-FFN deviation {uniform_err:.1e}, {dt:.2f}s")


def test_metric_formulas(report):
    t0 = time.perf_counter()
    checks = {"SPL(1,12,10)": abs(spl(1, 12, 10) - 0.833333) < 1e-6 and abs(spl(1, 12, 10) - 10 / 12) < 1e-9,
              "SPL(0,.,.)": spl(0, 12, 10) == 0 and spl(0, 0, 0) == 0}
    line = build_world([(0, 0, 0), (1, 0, 0), (2, 0, 0), (3, 0, 0), (5, 0, 0)],
                       [(0, 1), (1, 2), (2, 3), (3, 4)], objects={n: [[0.5]] for n in range(5)}, d_f=8)
    checks["success at NE=3.0"] = success(line, 0, 3) == 1 and success(line, 0, 4) == 0

    rng = np.random.default_rng(2)
    worlds = [generate_world(s, 10, d_f=8) for s in range(5)]
    ordered = True
    rows = []
    for i in range(10_000):
        g = worlds[i % 5]
        start, goal = (int(x) for x in rng.choice(g.K, size=2, replace=False))
        path, d = shortest_path(g, start, goal)
        n_obj = len(g.nodes[goal].objects)
        ep = Episode(i, start, goal, int(rng.integers(n_obj)), tuple(path), np.zeros(4), 0, 20, g.seed, d)
        walk = [start]
        for _ in range(int(rng.integers(0, 8))):
            walk.append(int(rng.choice(g.adjacency[walk[-1]])))
        if rng.random() < 0.3:
            walk += shortest_path(g, walk[-1], goal)[0][1:]
        stopped = bool(rng.random() < 0.8)
        obj = int(rng.integers(n_obj)) if stopped else None
        m = episode_metrics(EpisodeResult(g, ep, tuple(walk), stopped, obj, len(walk)))
        ordered &= 0 <= m["RGSPL"] <= m["SPL"] <= m["SR"] <= 1
        rows.append(m)
    agg = aggregate(rows)
    checks["RGSPL<=SPL<=SR"] = ordered and agg["RGSPL"] <= agg["SPL"] <= agg["SR"]
    dt = time.perf_counter() - t0
    bad = [k for k, v in checks.items() if not v]
    report("metric formulas", not bad and dt < 5,
           f"{len(checks) - len(bad)}/{len(checks)} checks, mean SR {agg['SR']:.1f} SPL {agg['SPL']:.1f} "
           f"RGSPL {agg['RGSPL']:.1f}, {dt:.2f}s" + (f", failed {bad}" if bad else ""))


def enumerate_simple_paths(g, u, v):
    best = math.inf
    stack = [(u, (u,), 0.0)]
    while stack:
        x, path, d = stack.pop()
        if x == v:
            best = min(best, d)
            continue
        for w in g.adjacency[x]:
            if w not in path:
                stack.append((w, path + (w,), d + g.edge_weight(x, w)))
    return best


def test_shortest_path_oracle(report):
    t0 = time.perf_counter()
    mismatches = pairs = 0
    for seed in range(100):
        g = generate_world(seed, 3 + seed % 6, d_f=8)
        for u in range(g.K):
            for v in range(g.K):
                pairs += 1
                _, d = shortest_path(g, u, v)
                mismatches += d != enumerate_simple_paths(g, u, v)
    dt = time.perf_counter() - t0
    report("shortest-path oracle", mismatches == 0 and dt < 30,
           f"{pairs} pairs on 100 worlds (K 3..8), {mismatches} mismatches, {dt:.1f}s")


def test_gradient_correctness(report):
    t0 = time.perf_counter()
    g = generate_world(3, 12, d_f=8, d_o=4)
    ep = make_episodes(g, 1, 1, d_w=6)[0]
    # every branch kind and the four-way weight net
    agent = MBAAgent(AgentConfig(BranchConfig.parse("g:og,l:depth,g:pv:0.5,l:rn"),
                                 d_f=8, d_w=6, d_o=4, d_h=5, ffn_hidden=7, seed=2))
    acts = [ep.gt_path[1], STOP]

    def loss(backward):
        return run_episode(agent, g, ep, 0.2, teacher=True, actions=acts, backward=backward)[2].total

    agent.store.zero_grad()
    loss(True)
    analytic = {k: v.copy() for k, v in agent.store.grads.items()}
    rep = finite_diff_check(agent.store, lambda: loss(False), h=1e-5, tol=1e-4, analytic=analytic)
    dt = time.perf_counter() - t0
    worst = max(rep.rel_errors, key=rep.rel_errors.get)
    report("gradient correctness", rep.passed and dt < 60,
           f"{len(rep.rel_errors)} parameter groups, max rel error {rep.max_rel_error:.1e} ({worst}), {dt:.1f}s")


def test_oracle_policy(report):
    t0 = time.perf_counter()
    spec = H.AblationSpec(cells=tuple(H.explicit_grid(["g:og,l:og"])), train_episodes=20, eval_episodes=20)
    worst = {}
    for seed in range(3):
        splits = H._splits(spec, seed)
        agent = MBAAgent(spec.agent_config(BranchConfig.parse("g:og,l:og"), seed))
        for name in ("train", "seen", "unseen"):
            rows = []
            for g, eps in splits[name]:
                rows += H.evaluate(agent, g, eps, policy="oracle")[0]
            a = aggregate(rows)
            worst[name] = min(worst.get(name, 100.0), a["SR"], a["SPL"])
    dt = time.perf_counter() - t0
    ok = all(v == 100.0 for v in worst.values()) and dt < 10
    report("oracle policy", ok, ", ".join(f"{k} min(SR,SPL)={v:.1f}" for k, v in worst.items()) + f", {dt:.1f}s")


@pytest.mark.slow
def test_training_sanity(report):
    t0 = time.perf_counter()
    g = generate_world(0, 20)
    eps = make_episodes(g, 100, 0)
    agent = MBAAgent(AgentConfig(BranchConfig.parse("g:og,l:og"), d_f=g.d_f, d_o=g.d_o))
    curve = train(agent, [(g, eps)], TrainConfig(epochs=30, seed=0)).curve
    sr = float(np.mean([success(g, rollout(agent, g, e).final, e.goal) for e in eps]))
    dt = time.perf_counter() - t0
    report("training sanity", sr >= 0.8 and dt < 300,
           f"greedy SR {sr:.2f} on training episodes, loss {curve[0].mean_loss:.3f} -> "
           f"{curve[-1].mean_loss:.3f}, {dt:.0f}s")


DIRECTIONAL = ["g:og", "g:og,l:rn", "g:og,l:og", "g:og,l:og,g:pv:0.5,l:pv:0.5"]
SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture(scope="module")
def directional_rows():
    spec = H.AblationSpec(cells=tuple(H.explicit_grid(DIRECTIONAL)), seeds=SEEDS)
    return H.run_grid(spec)


def seed_table(rows, metric, a, b):
    tab = H.per_seed_table(rows, "unseen", metric)
    lines = [f"  seed  {a:>30}  {b:>30}"]
    for s in SEEDS:
        lines.append(f"  {s:>4}  {tab.get(a, {}).get(s, float('nan')):>30.2f}  {tab.get(b, {}).get(s, float('nan')):>30.2f}")
    ma = float(np.mean([tab[a][s] for s in SEEDS])) if len(tab.get(a, {})) == len(SEEDS) else float("nan")
    mb = float(np.mean([tab[b][s] for s in SEEDS])) if len(tab.get(b, {})) == len(SEEDS) else float("nan")
    lines.append(f"  mean  {ma:>30.2f}  {mb:>30.2f}")
    return ma, mb, "\n".join(lines)


@pytest.mark.slow
def test_dual_branch_noise_beats_single(report, directional_rows):
    single, dual = "g:og", "g:og,l:rn"
    ms, md, table = seed_table(directional_rows, "SR", single, dual)
    report("dual g:og,l:rn >= single g:og (unseen SR)", md >= ms,
           f"mean unseen SR {md:.2f} vs {ms:.2f} over {len(SEEDS)} seeds\n{table}")


@pytest.mark.slow
def test_four_branch_pv_beats_dual(report, directional_rows):
    base, four = "g:og,l:og", "g:og,l:og,g:pv:0.5,l:pv:0.5"
    mb, mf, table = seed_table(directional_rows, "SPL", base, four)
    report("four-branch pv:0.5 >= dual baseline (unseen SPL)", mf >= mb,
           f"mean unseen SPL {mf:.2f} vs {mb:.2f} over {len(SEEDS)} seeds\n{table}")


def small_grid_spec():
    return H.AblationSpec(
        cells=tuple(H.ancillary_grid(["none", "depth", "rn", "pv"], ["none", "depth", "rn", "pv"])),
        world=H.WorldParams(nodes=12), train_episodes=8, eval_episodes=4, d_h=8, ffn_hidden=8,
        train=TrainConfig(epochs=2))


@pytest.mark.slow
def test_grid_rerun_byte_identical(report):
    a = H.grid_csv(H.run_grid(small_grid_spec()))
    b = H.grid_csv(H.run_grid(small_grid_spec()))
    report("4x4 grid CSV byte-identical across reruns", a == b,
           f"{len(a.splitlines()) - 1} rows, reduced scale (K=12, 2 epochs)")


@pytest.mark.slow
def test_grid_runtime_desk_scale(report):
    t0 = time.perf_counter()
    spec = H.AblationSpec(cells=tuple(H.ancillary_grid(["none", "depth", "rn", "pv"], ["none", "depth", "rn", "pv"])))
    rows = H.run_grid(spec)
    dt = time.perf_counter() - t0
    failed = sum(r.status != "ok" for r in rows) // 2
    report("4x4 grid runtime at desk scale", dt < 1800 and failed == 0,
           f"16 cells, one seed, {dt / 60:.1f} min, {failed} failed cells")


def cli(*args):
    return subprocess.run([sys.executable, "-m", "mba.cli", *map(str, args)], capture_output=True, text=True)


def test_cli_determinism(report, tmp_path):
    small = ["--nodes", 12]
    fast = ["--epochs", 2, "--d-h", 8, "--ffn-hidden", 8]
    outputs = {}
    codes = []
    for run in ("a", "b"):
        d = tmp_path / run
        codes += [
            cli("gen-world", "--seed", 3, *small, "--episodes", 6, "--out", d).returncode,
            cli("train", "--world", d / "world.json", "--episodes", d / "episodes.jsonl", *fast,
                "--out", d).returncode,
            cli("eval", "--checkpoint", d / "checkpoint.json", "--world", d / "world.json",
                "--episodes", d / "episodes.jsonl", "--dump-traj", "--out", d).returncode,
            cli("ablate", "--configs", "g:og;g:og,l:rn", "--seeds", "0-1", *small, *fast,
                "--train-episodes", 6, "--eval-episodes", 3, "--out", d / "abl").returncode,
        ]
        outputs[run] = {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}
    differ = [str(k) for k in outputs["a"] if outputs["a"][k] != outputs["b"].get(k)]
    ok = not any(codes) and not differ and outputs["a"].keys() == outputs["b"].keys()
    report("CLI end-to-end determinism", ok,
           f"{len(outputs['a'])} files from gen-world/train/eval/ablate compared across two processes"
           + (f", differing: {differ}" if differ else "") + (f", exit codes {codes}" if any(codes) else ""))
