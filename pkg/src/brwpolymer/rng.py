"""Counter-based random numbers keyed by genealogy.

Every particle carries a 64-bit key. A child's key is a hash of its
parent's key and its birth rank, and all of a particle's draws are hashes
of its own key. Two simulations that share a seed therefore produce the
same random numbers for the same particle, whatever was pruned around it
and however the work was split between threads.
"""

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

# stream tags: distinct draws attached to one key
STREAM_COUNT = 1
STREAM_DISPLACEMENT = 2
STREAM_AUX = 3

_TWO_M53 = 2.0**-53


def splitmix64(x):
    """SplitMix64 finaliser, elementwise on uint64 arrays (wrapping arithmetic)."""
    z = np.asarray(x, dtype=np.uint64) + _GOLDEN
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def mix(key, value):
    """Hash ``value`` (int or array) into ``key``."""
    v = np.asarray(value, dtype=np.uint64)
    return splitmix64(np.asarray(key, dtype=np.uint64) ^ splitmix64(v))


def root_key(seed: int) -> np.ndarray:
    if not 0 <= int(seed) < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return splitmix64(np.array([seed], dtype=np.uint64))


def child_keys(parent_keys, ranks):
    return mix(parent_keys, np.asarray(ranks, dtype=np.uint64) + np.uint64(1))


def uniforms(keys, stream: int) -> np.ndarray:
    """One uniform in the open interval (0, 1) per key."""
    z = mix(keys, stream)
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53


def normals(keys, stream: int) -> np.ndarray:
    return ndtri(uniforms(keys, stream))


def derive_seed(seed: int, *path: int) -> int:
    """Deterministic child seed for replicate/attempt indices."""
    k = np.array([seed], dtype=np.uint64)
    for p in path:
        k = mix(k, p)
    return int(k[0])


def generator(seed: int, *path: int) -> np.random.Generator:
    """A numpy Generator whose stream is a pure function of ``(seed, *path)``."""
    return np.random.Generator(np.random.Philox(key=derive_seed(seed, *path)))
