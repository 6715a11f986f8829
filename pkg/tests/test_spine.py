import math

import numpy as np
import pytest
from scipy import stats

from brwpolymer import model as M
from brwpolymer import spine as S
from brwpolymer import walk as W

LN2 = math.log(2.0)


def test_n_zero(toy, toy_table):
    s = S.sample_spine_Qalpha(toy, toy_table, 2.0, 0, np.random.default_rng(0))
    assert list(s.spine_positions) == [0.0] and s.brothers == [] and s.weight == 1.0


@pytest.mark.parametrize("method", ["marked", "config"])
def test_spine_above_barrier(bg, bg_table, method):
    sp = S.sample_spines_Qalpha(bg, bg_table, 1.0, 8, np.random.default_rng(1), 300, method=method)
    for s in sp:
        assert s.spine_positions[0] == 0.0
        assert np.all(s.spine_positions >= -1.0)
        assert all(len(b) == 1 for b in s.brothers)  # binary: one brother per level
        assert all(0 <= r <= 1 for r in s.spine_rank)


def test_spine_marginal_matches_conditioned_walk(toy, toy_table):
    rng = np.random.default_rng(2)
    a = np.array([s.spine_positions[-1] for s in S.sample_spines_Qalpha(toy, toy_table, 2.0, 10, rng, 10000)])
    b = W.conditioned_endpoints(toy, toy_table, 2.0, 10, rng, 10000)
    assert stats.ks_2samp(a, b).statistic < 0.03


def test_poisson_spine_never_empty():
    m = M.poisson_gaussian(0.5)
    u = np.round(np.arange(0.0, 8.0 + 1e-9, 0.2), 10)
    t = W.estimate_renewal(m, u, 4000, 2**14, np.random.default_rng(3), check_bias=False)
    for method in ("marked", "config"):
        sp = S.sample_spines_Qalpha(m, t, 1.0, 5, np.random.default_rng(4), 200, method=method)
        assert all(np.isfinite(s.spine_positions).all() for s in sp)


def test_qbeta_at_one_is_many_to_one_step(bg):
    rng = np.random.default_rng(5)
    inc = np.concatenate([np.diff(S.sample_spine_Qbeta(bg, 1.0, 20, rng).spine_positions) for _ in range(500)])
    assert stats.kstest(inc, "norm", args=(0.0, math.sqrt(2 * LN2))).pvalue > 0.001


def test_qbeta_increment_mean_half(bg):
    rng = np.random.default_rng(6)
    inc = np.concatenate([np.diff(S.sample_spine_Qbeta(bg, 0.5, 20, rng).spine_positions) for _ in range(1000)])
    se = inc.std(ddof=1) / math.sqrt(len(inc))
    assert abs(inc.mean() - LN2) < 3 * se


def test_complete_tree_binary(bg, toy_table):
    s = S.sample_spine_Qalpha(bg, toy_table, 2.0, 5, np.random.default_rng(7))
    tr = S.complete_tree(bg, s, np.random.default_rng(8))
    assert len(tr.position) == 2**5
    assert tr.position[tr.spine_leaf] == s.spine_positions[-1]
    assert np.all(tr.path_min <= 0.0)
    p = S.spine_posterior(tr, toy_table, 2.0)
    assert p.sum() == pytest.approx(1.0) and p[tr.spine_leaf] > 0


def test_posterior_calibration_toy(toy, toy_table):
    rng = np.random.default_rng(9)
    lhs, rhs = [], []
    for s in S.sample_spines_Qalpha(toy, toy_table, 2.0, 4, rng, 3000):
        tr = S.complete_tree(toy, s, rng)
        p = S.spine_posterior(tr, toy_table, 2.0)
        g = tr.position == tr.position.min()
        lhs.append(float(g[tr.spine_leaf]))
        rhs.append(float(p @ g))
    se = np.std(lhs, ddof=1) / math.sqrt(len(lhs)) + np.std(rhs, ddof=1) / math.sqrt(len(rhs))
    assert abs(np.mean(lhs) - np.mean(rhs)) < 3 * se


def test_spine_csv(tmp_path, bg, toy_table):
    sp = S.sample_spines_Qalpha(bg, toy_table, 1.0, 3, np.random.default_rng(0), 2, method="config")
    p = tmp_path / "s.csv"
    S.write_spine_csv(sp, p)
    rows = p.read_text().splitlines()
    assert rows[0] == "replicate,level,spine_V,n_brothers,brother_Vs"
    assert len(rows) == 1 + 2 * 4
    q = tmp_path / "d.jsonl"
    S.write_spine_diagnostics(sp, q)
    assert len(q.read_text().splitlines()) == 2
