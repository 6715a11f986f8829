import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from brwpolymer import forest as F
from brwpolymer import model as M
from brwpolymer import polymer as P


def test_weights_normalised(bg):
    f = F.simulate(bg, 10, 1)
    w = P.polymer_weights(f, 1.0)
    assert w.sum() == pytest.approx(1.0, abs=1e-14) and np.all(w > 0)


def test_extinct_forest():
    f = F.from_arrays([[0], []], [[1.0], []])
    with pytest.raises(P.ExtinctForest):
        P.polymer_weights(f)


def test_sampler_chi2_depth3(bg):
    f = F.simulate(bg, 3, 7)
    w = P.polymer_weights(f, 1.0)
    idx = P.sample_polymer_indices(f, 1.0, 200000, np.random.default_rng(0))
    obs = np.bincount(idx, minlength=len(w))
    assert stats.chisquare(obs, w * obs.sum()).pvalue > 0.01


def test_sample_polymer_draws(bg):
    f = F.simulate(bg, 4, 2)
    d = P.sample_polymer(f, 1.0, bg, 3, np.random.default_rng(0))
    assert len(d) == 3 and d[0].trajectory.n == 4


def test_functional_constant(bg):
    f = F.simulate(bg, 8, 3)
    assert P.polymer_functional(f, [0.5, 1.0], lambda y: np.ones(len(y))) == pytest.approx(1.0, abs=1e-14)


@given(st.integers(0, 2**32), st.integers(1, 6), st.sampled_from([0.0, 0.1, 0.34, 0.5, 0.99, 1.0, 1.5]))
def test_overlap_matches_bruteforce(seed, n, delta):
    m = M.poisson_gaussian(2 * np.log(2))
    f = F.simulate(m, n, seed)
    if not f.alive:
        return
    fast = P.overlap_pair_mass(f, delta).pair_mass
    slow = P.overlap_pair_mass_bruteforce(f, delta)
    assert fast == pytest.approx(slow, rel=1e-12)


def test_overlap_zero_delta_is_one(bg):
    f = F.simulate(bg, 6, 5)
    assert P.overlap_pair_mass(f, 0.0).pair_mass == pytest.approx(1.0, abs=1e-14)


def test_overlap_decreasing_in_delta(bg):
    f = F.simulate(bg, 8, 5)
    vals = [P.overlap_pair_mass(f, d).pair_mass for d in (0.0, 0.25, 0.5, 0.75, 1.0, 2.0)]
    assert all(a >= b - 1e-15 for a, b in zip(vals, vals[1:]))
    w = P.polymer_weights(f)
    assert vals[-1] == pytest.approx((w**2).sum())


def test_overlap_positions_agree(bg):
    f = F.simulate(bg, 4, 8)
    a = P.overlap_pair_mass_bruteforce(f, 0.5)
    b = P.overlap_pair_mass_bruteforce(f, 0.5, use_positions=True)
    assert a == pytest.approx(b, rel=1e-12)
