import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from brwpolymer import rng as krng

u64 = st.integers(min_value=0, max_value=2**64 - 1)


@given(u64)
def test_uniforms_open_interval(seed):
    keys = krng.child_keys(np.repeat(krng.root_key(seed), 64), np.arange(64))
    u = krng.uniforms(keys, krng.STREAM_DISPLACEMENT)
    assert np.all(u > 0) and np.all(u < 1)


@given(u64, st.integers(0, 1000))
def test_child_keys_deterministic_and_rank_sensitive(seed, rank):
    k = krng.root_key(seed)
    assert krng.child_keys(k, [rank])[0] == krng.child_keys(k, [rank])[0]
    assert krng.child_keys(k, [rank])[0] != krng.child_keys(k, [rank + 1])[0]


def test_streams_differ():
    keys = krng.child_keys(np.repeat(krng.root_key(3), 1000), np.arange(1000))
    a = krng.uniforms(keys, krng.STREAM_COUNT)
    b = krng.uniforms(keys, krng.STREAM_DISPLACEMENT)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.1


def test_uniforms_look_uniform():
    keys = krng.child_keys(np.repeat(krng.root_key(5), 100000), np.arange(100000))
    u = krng.uniforms(keys, 1)
    assert abs(u.mean() - 0.5) < 0.005
    assert abs(np.mean(u < 0.1) - 0.1) < 0.005


def test_root_key_rejects_bad_seed():
    import pytest

    with pytest.raises(ValueError):
        krng.root_key(-1)
    with pytest.raises(ValueError):
        krng.root_key(2**64)


def test_generator_reproducible():
    a = krng.generator(7, 1, 2).random(5)
    b = krng.generator(7, 1, 2).random(5)
    c = krng.generator(7, 1, 3).random(5)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
