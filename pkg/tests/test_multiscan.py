import math

import numpy as np
import pytest

from multicmh.cli import dumps, report_to_dict
from multicmh.cmh import cmh_statistic
from multicmh.multiscan import (ScanConfig, adjusted_alpha, choose_depths,
                                scan, screen, sidak_combine, sidak_ladder)
from multicmh.simbench import (gen_planted_window, gen_pure_null, make_rng,
                               window_permutation_pvalue)
from multicmh.stratify import medtree
from multicmh.tabulate import (Dataset, build_dyadic_tree, rank_columns,
                               tabulate_window, windows)


def test_choose_depths():
    assert choose_depths(800) == (7, 7)
    assert choose_depths(40) == (2, 2)
    assert choose_depths(10 ** 6, y_arity="binary") == (7, 1)
    assert choose_depths(5) == (1, 1)
    assert choose_depths(800, ScanConfig(depths=(3, 4))) == (3, 4)


def test_screen():
    cfg = ScanConfig()
    assert not screen(19, (10, 10, 10, 10), cfg)
    assert screen(40, (20, 20, 10, 30), cfg)
    assert not screen(40, (31, 9, 20, 20), cfg)


def test_sidak_combine():
    assert sidak_combine(0.3, 1) == 0.3
    assert sidak_combine(0.05, 2) == pytest.approx(0.0975, rel=1e-14)
    # 1 - (1 - p)^m = m p - C(m, 2) p^2 + ...
    p, m = 1e-12, 100
    series = m * p - m * (m - 1) / 2 * p * p
    assert abs(sidak_combine(p, m) - series) / series <= 1e-6
    assert sidak_combine(1.0, 7) == 1.0
    assert sidak_combine(0.0, 7) == 0.0


def test_adjusted_alpha():
    assert adjusted_alpha(0.05, 1, 1, 1) == pytest.approx(0.05, rel=1e-15)
    assert adjusted_alpha(0.05, 3, 2, 4) == pytest.approx(
        1 - 0.95 ** (1 / 24), rel=1e-12)
    # 40-digit decimal evaluation of 1 - 0.95 ** (1 / 24)
    assert adjusted_alpha(0.05, 3, 2, 4) == pytest.approx(
        2.134938369701545e-3, rel=1e-13)


def test_ladder_by_hand():
    parts = {(0, 0): [0.2], (0, 1): [0.01, 0.5], (1, 0): [0.04]}
    overall, res, part = sidak_ladder(parts, 2, 2)
    p01 = 1 - 0.99 ** 2
    p1 = 1 - (1 - min(p01, 0.04)) ** 2
    expected = 1 - (1 - min(0.2, p1)) ** 3
    assert overall == pytest.approx(expected, rel=1e-12)
    assert res == [(0, 0.2, 1), (1, pytest.approx(p1), 2), (2, None, 0)]
    assert part[(1, 1)] == (None, 0)


def test_binary_pair_collapses_to_one_window():
    rng = make_rng(3)
    n = 120
    z = rng.standard_normal((n, 2))
    x = (z[:, 0] + rng.standard_normal(n) > 0).astype(float)
    y = (z[:, 0] + rng.standard_normal(n) > 0).astype(float)
    rep = scan(Dataset(x, y, z, "binary", "binary"))
    assert rep.depths == (1, 1)
    assert len(rep.windows) == 1
    assert rep.windows[0].screened
    assert rep.overall_p == rep.windows[0].p_value


def test_too_few_rows():
    rep = scan(gen_pure_null(10, 2, make_rng(1)))
    assert rep.no_valid_window
    assert rep.overall_p == 1.0
    assert not any(w.screened for w in rep.windows)


def test_canonical_window_order():
    rep = scan(gen_pure_null(300, 2, make_rng(2)))
    keys = [(w.l1 + w.l2, w.l1, w.pos_i, w.pos_j) for w in rep.windows]
    assert keys == sorted(keys)
    k1, k2 = rep.depths
    assert len(rep.windows) == sum(2 ** (l1 + l2) for l1 in range(k1)
                                   for l2 in range(k2))


def test_significance_coherence():
    rep = scan(gen_planted_window(400, 3, make_rng(8)))
    k1, k2 = rep.depths
    U = {k: u for k, _, u in rep.resolution_ps}
    for w in rep.windows:
        if not w.screened:
            assert w.p_value is None and not w.significant
            continue
        L = rep.partition_ps[(w.l1, w.l2)][1]
        a_n = adjusted_alpha(rep.config.alpha, k1 + k2 - 1, U[w.l1 + w.l2], L)
        assert w.alpha_n == a_n
        assert w.significant == (w.p_value <= a_n)


def test_worker_count_does_not_change_report():
    data = gen_planted_window(500, 4, make_rng(9))
    one = dumps(report_to_dict(scan(data, workers=1)))
    three = dumps(report_to_dict(scan(data, workers=3)))
    assert one == three


def test_env_var_sets_workers(monkeypatch):
    data = gen_pure_null(200, 2, make_rng(4))
    ref = dumps(report_to_dict(scan(data)))
    monkeypatch.setenv("MULTICMH_WORKERS", "2")
    assert dumps(report_to_dict(scan(data))) == ref


@pytest.fixture(scope="module")
def planted():
    data = gen_planted_window(200, 3, make_rng(11))
    return data, scan(data)


class TestPlantedWindow:
    """Planted dependence in window (1, 1, 1, 1) of a 200-row fixture."""

    @pytest.fixture
    def setup(self, planted):
        return planted

    def test_planted_window_is_significant(self, setup):
        _, rep = setup
        hits = [(w.l1, w.l2, w.pos_i, w.pos_j) for w in rep.significant_windows]
        assert (1, 1, 1, 1) in hits
        assert rep.rejects()

    def test_window_table_rebuilt_from_public_pieces(self, setup):
        data, rep = setup
        k1, k2 = rep.depths
        xt = build_dyadic_tree(data.x, k1)
        yt = build_dyadic_tree(data.y, k2)
        win = windows(xt, yt, 1, 1)[1 * 2 + 1]
        idx = win.indices
        strat = medtree(rank_columns(data.z)[idx], eta=10, indices=idx)
        table = tabulate_window(win, strat, xt, yt)
        res = next(w for w in rep.windows
                   if (w.l1, w.l2, w.pos_i, w.pos_j) == (1, 1, 1, 1))
        assert table.total == res.n
        assert strat.T == res.T
        assert cmh_statistic(table).p_value == res.p_value

    def test_agrees_with_permutation_oracle(self, setup):
        data, rep = setup
        k1, k2 = rep.depths
        xt = build_dyadic_tree(data.x, k1)
        yt = build_dyadic_tree(data.y, k2)
        win = windows(xt, yt, 1, 1)[3]
        idx = win.indices
        strat = medtree(rank_columns(data.z)[idx], eta=10, indices=idx)
        cells = tabulate_window(win, strat, xt, yt).cells
        R = 2000
        perm_p = window_permutation_pvalue(cells, R, make_rng(11, 99))
        p = cmh_statistic(cells).p_value
        mc_err = 3 * math.sqrt(max(p * (1 - p), 1 / R) / R) + 1 / (R + 1)
        assert abs(perm_p - p) <= mc_err
        res = next(w for w in rep.windows
                   if (w.l1, w.l2, w.pos_i, w.pos_j) == (1, 1, 1, 1))
        assert perm_p <= res.alpha_n
