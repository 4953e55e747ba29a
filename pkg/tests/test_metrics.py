import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mba.errors import InvalidTrajectoryError, ParameterError
from mba.metrics import (
    CSV_COLUMNS,
    EpisodeResult,
    aggregate,
    episode_metrics,
    navigation_error,
    read_results_csv,
    results_csv,
    rgs,
    rgspl,
    spl,
    success,
    success_of,
    trajectory_length,
)
from mba.world import Episode, build_world, shortest_path


@pytest.fixture(scope="module")
def line():
    # 0 - 1 - 2 - 3 - 4 on the x axis, unit spacing except 3-4 (2 m)
    g = build_world([(0, 0, 0), (1, 0, 0), (2, 0, 0), (3, 0, 0), (5, 0, 0)],
                    [(0, 1), (1, 2), (2, 3), (3, 4)], objects={n: [[0.1 * n], [0.5]] for n in range(5)}, d_f=8)
    return g


def episode(g, start, goal, obj=0):
    path, d = shortest_path(g, start, goal)
    return Episode(0, start, goal, obj, tuple(path), np.zeros(4), 0, 20, g.seed, d)


class TestSPL:
    def test_formula(self):
        assert abs(spl(1, 12, 10) - 0.8333333333333334) < 1e-9

    def test_failure(self):
        assert spl(0, 12, 10) == 0.0
        assert spl(0, 0, 0) == 0.0

    def test_shortest(self):
        assert spl(1, 10, 10) == 1.0
        assert spl(1, 5, 10) == 1.0

    def test_zero_dgt(self):
        assert spl(1, 3, 0) == 1.0

    def test_negative(self):
        with pytest.raises(ParameterError):
            spl(1, -1, 2)

    @given(st.floats(0, 100), st.floats(0, 100), st.floats(0.01, 100))
    def test_monotone_in_tl(self, t1, t2, d):
        lo, hi = sorted((t1, t2))
        assert spl(1, hi, d) <= spl(1, lo, d)


class TestEpisodeMetrics:
    def test_success_boundary(self, line):
        # geodesic 0 -> 3 is exactly 3.0 m
        assert success(line, 0, 3) == 1
        assert success(line, 0, 4) == 0

    def test_perfect_run(self, line):
        ep = episode(line, 0, 4)
        r = EpisodeResult(line, ep, (0, 1, 2, 3, 4), True, 0, 4)
        m = episode_metrics(r)
        assert m["TL"] == 5.0 and m["NE"] == 0.0
        assert m["SR"] == 1 and m["SPL"] == 1.0 and m["RGS"] == 1 and m["RGSPL"] == 1.0

    def test_detour(self, line):
        ep = episode(line, 1, 4)
        r = EpisodeResult(line, ep, (1, 0, 1, 2, 3, 4), True, 0, 5)
        assert trajectory_length(r) == 6.0
        assert episode_metrics(r)["SPL"] == pytest.approx(4 / 6, abs=1e-12)

    def test_wrong_object(self, line):
        ep = episode(line, 0, 4, obj=1)
        r = EpisodeResult(line, ep, (0, 1, 2, 3, 4), True, 0, 4)
        assert success_of(r) == 1 and rgs(r) == 0 and rgspl(r) == 0.0

    def test_unterminated(self, line):
        ep = episode(line, 0, 4)
        r = EpisodeResult(line, ep, (0, 1, 2, 3, 4), False, None, 20)
        assert success_of(r) == 1 and rgs(r) == 0

    def test_navigation_error_geodesic(self, line):
        ep = episode(line, 0, 4)
        r = EpisodeResult(line, ep, (0, 1), False)
        assert navigation_error(r) == 4.0

    def test_invalid(self, line):
        ep = episode(line, 0, 4)
        with pytest.raises(InvalidTrajectoryError):
            EpisodeResult(line, ep, (1, 2), True)
        with pytest.raises(InvalidTrajectoryError):
            trajectory_length(EpisodeResult(line, ep, (0, 2), True))


def synthetic_rows(n, seed):
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        d_gt = float(rng.uniform(0.5, 20))
        tl = float(rng.uniform(0, 40))
        sr = int(rng.random() < 0.5)
        r = int(sr and rng.random() < 0.5)
        rows.append({"episode_id": i, "TL": tl, "NE": float(rng.uniform(0, 10)), "SR": sr,
                     "SPL": spl(sr, tl, d_gt), "RGS": r, "RGSPL": spl(r, tl, d_gt), "stopped": 1, "steps": 3})
    return rows


def test_ordering_on_synthetic_results():
    rows = synthetic_rows(10_000, 0)
    for r in rows:
        assert 0 <= r["RGSPL"] <= r["SPL"] <= r["SR"] <= 1
    a = aggregate(rows)
    assert 0 <= a["RGSPL"] <= a["SPL"] <= a["SR"] <= 100


def test_aggregate_percentages():
    rows = synthetic_rows(4, 1)
    a = aggregate(rows)
    assert a["SR"] == pytest.approx(100 * np.mean([r["SR"] for r in rows]))
    assert a["TL"] == pytest.approx(np.mean([r["TL"] for r in rows]))
    with pytest.raises(ParameterError):
        aggregate([])


def test_csv_round_trip():
    rows = synthetic_rows(20, 2)
    text = results_csv(rows)
    assert "\r" not in text
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    back = read_results_csv(text)
    for r, b in zip(rows, back):
        assert b["SPL"] == pytest.approx(r["SPL"], abs=5e-7)
    summary = aggregate(back)
    assert summary["SPL"] == pytest.approx(aggregate(rows)["SPL"], abs=1e-4)
