import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from brwpolymer import forest as F
from brwpolymer import model as M


def test_binary_sizes(bg):
    f = F.simulate(bg, 6, 1)
    assert f.sizes() == [2**k for k in range(7)]
    assert f.alive and f.depth == 6


def test_depth_zero(bg):
    f = F.simulate(bg, 0, 1)
    assert f.sizes() == [1] and f.leaves.position[0] == 0.0


@given(st.integers(0, 2**32), st.floats(0.0, 3.0))
def test_barrier_is_restriction(seed, alpha):
    bg = M.binary_gaussian()
    full = F.simulate(bg, 6, seed)
    cut = F.simulate(bg, 6, seed, barrier_alpha=alpha)
    keep = full.leaves.path_min >= -alpha
    assert np.array_equal(np.sort(full.leaves.key[keep]), np.sort(cut.leaves.key))
    assert np.allclose(np.sort(full.leaves.position[keep]), np.sort(cut.leaves.position))
    assert np.all(cut.leaves.path_min >= -alpha)


def test_same_seed_same_forest(bg):
    a, b = F.simulate(bg, 8, 42), F.simulate(bg, 8, 42)
    assert np.array_equal(a.leaves.position, b.leaves.position)


def test_path_min_includes_root(bg):
    f = F.simulate(bg, 5, 3)
    assert np.all(f.leaves.path_min <= 0.0)
    for i in range(0, len(f.leaves), 7):
        tr = F.trajectory(f, (5, i))
        assert f.leaves.path_min[i] == pytest.approx(min(0.0, tr.values.min()))


def test_particle_cap(bg):
    with pytest.raises(F.ParticleCapExceeded) as e:
        F.simulate(bg, 10, 1, max_particles=1000)
    assert e.value.depth_reached < 10


def test_extinct_generations_padded():
    m = M.poisson_gaussian(0.2)  # mean offspring e^0.1, extinction likely
    for s in range(200):
        f = F.simulate(m, 10, s)
        assert f.depth == 10
        if not f.alive:
            assert len(f.leaves) == 0
            break
    else:
        pytest.fail("no extinct forest found")


def test_surviving_forests_deterministic():
    m = M.poisson_gaussian(0.5)
    a = F.SurvivingForests(m, 6, 9, 5)
    la = [f.leaves.position.sum() for f in a]
    b = F.SurvivingForests(m, 6, 9, 5)
    lb = [f.leaves.position.sum() for f in b]
    assert la == lb and a.attempt_seeds == b.attempt_seeds
    assert 0 < a.acceptance_rate <= 1


def test_trajectory_interpolation():
    f = F.from_arrays([[0, 0], [0, 1]], [[1.0, -1.0], [3.0, 2.0]])
    tr = F.trajectory(f, (2, 0))
    assert list(tr.values) == [1.0, 3.0]
    vt = tr.interpolated([0.0, 0.25, 0.5, 1.0])
    assert np.allclose(vt, np.array([0.0, 0.5, 1.0, 3.0]) / np.sqrt(2))
    grid = F.interpolated_leaves(f, [0.25, 1.0])
    assert np.allclose(grid[0], vt[[1, 3]])


def test_invalid_node(bg):
    f = F.simulate(bg, 3, 1)
    with pytest.raises(F.InvalidNode):
        F.trajectory(f, (3, 8))
    with pytest.raises(F.InvalidNode):
        F.trajectory(f, (4, 0))


def test_dump_roundtrip(tmp_path, bg):
    f = F.simulate(bg, 7, 5)
    p = tmp_path / "f.brw"
    F.dump(f, p)
    g = F.load(p)
    assert p.read_bytes()[:4] == b"BRW1"
    for a, b in zip(f.generations, g.generations):
        assert np.array_equal(a.parent, b.parent)
        assert np.array_equal(a.position, b.position)
        assert np.array_equal(a.path_min, b.path_min)


def test_truncated(bg):
    f = F.simulate(bg, 8, 2)
    t = f.truncated(5)
    assert t.depth == 5 and np.array_equal(t.leaves.position, f.generations[5].position)
