"""Generation-major storage and simulation of the branching random walk."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from . import rng as krng
from .model import BoundaryModel

DEFAULT_MAX_PARTICLES = 2**24
MAGIC = b"BRW1"
_NO_PARENT = 0xFFFFFFFF


class ParticleCapExceeded(RuntimeError):
    def __init__(self, depth_reached: int, particles: int, cap: int):
        super().__init__(
            f"particle cap {cap} exceeded at generation {depth_reached + 1} "
            f"({particles} particles); complete depth {depth_reached}"
        )
        self.depth_reached = depth_reached
        self.particles = particles
        self.cap = cap


class AllExtinct(RuntimeError):
    pass


class InvalidNode(IndexError):
    pass


@dataclass
class Generation:
    parent: np.ndarray  # int64 index into previous generation (-1 for roots)
    position: np.ndarray  # V(x)
    path_min: np.ndarray  # min of V over the ancestry, root (at 0) included
    key: np.ndarray  # uint64 genealogical RNG key

    def __len__(self) -> int:
        return len(self.position)

    @classmethod
    def empty(cls) -> "Generation":
        return cls(
            np.empty(0, np.int64), np.empty(0), np.empty(0), np.empty(0, np.uint64)
        )


@dataclass
class Forest:
    generations: list
    seed: Optional[int]
    barrier_alpha: Optional[float] = None

    @property
    def depth(self) -> int:
        return len(self.generations) - 1

    @property
    def alive(self) -> bool:
        return len(self.generations[-1]) > 0

    @property
    def leaves(self) -> Generation:
        return self.generations[-1]

    def sizes(self) -> list:
        return [len(g) for g in self.generations]

    def truncated(self, depth: int) -> "Forest":
        """The same tree cut at ``depth`` (shares arrays)."""
        return Forest(self.generations[: depth + 1], self.seed, self.barrier_alpha)

    def ancestor_positions(self, levels: Sequence[int]) -> dict:
        """For every leaf, the position of its ancestor at each requested level."""
        wanted = set(int(k) for k in levels)
        n = self.depth
        out = {}
        idx = np.arange(len(self.leaves))
        for k in range(n, -1, -1):
            if k in wanted:
                out[k] = self.generations[k].position[idx]
            if k > 0:
                idx = self.generations[k].parent[idx]
        return out

    def ancestor_index(self, level: int) -> np.ndarray:
        """Index at ``level`` of every leaf's ancestor."""
        idx = np.arange(len(self.leaves))
        for k in range(self.depth, level, -1):
            idx = self.generations[k].parent[idx]
        return idx


def _root_generation(keys: np.ndarray) -> Generation:
    m = len(keys)
    return Generation(
        np.full(m, -1, np.int64), np.zeros(m), np.zeros(m), np.asarray(keys, np.uint64)
    )


def _next_generation(model: BoundaryModel, prev: Generation, barrier_alpha) -> Generation:
    parent, disp, ck = model.offspring_from_keys(prev.key)
    pos = prev.position[parent] + disp
    if barrier_alpha is not None:
        keep = pos >= -barrier_alpha
        parent, pos, ck = parent[keep], pos[keep], ck[keep]
    pmin = np.minimum(prev.path_min[parent], pos)
    return Generation(parent.astype(np.int64), pos, pmin, ck)


def grow(
    model: BoundaryModel,
    root_keys: np.ndarray,
    n_generations: int,
    barrier_alpha: Optional[float] = None,
    max_particles: int = DEFAULT_MAX_PARTICLES,
) -> list:
    """Grow one or several trees (one per root key) for ``n_generations``.

    Returns the list of generations. Several roots give independent trees
    stored side by side; use :func:`root_of` to recover tree membership.
    """
    if n_generations < 0:
        raise ValueError("n_generations must be >= 0")
    if max_particles < 1:
        raise ValueError("max_particles must be >= 1")
    gens = [_root_generation(root_keys)]
    total = len(gens[0])
    for k in range(1, n_generations + 1):
        if len(gens[-1]) == 0:
            gens.append(Generation.empty())
            continue
        g = _next_generation(model, gens[-1], barrier_alpha)
        total += len(g)
        if total > max_particles:
            raise ParticleCapExceeded(k - 1, total, max_particles)
        gens.append(g)
    return gens


def root_of(generations: list, level: int) -> np.ndarray:
    """Root index of every particle at ``level``."""
    idx = np.arange(len(generations[level]))
    for k in range(level, 0, -1):
        idx = generations[k].parent[idx]
    return idx


def simulate(
    model: BoundaryModel,
    n_generations: int,
    rng_seed: int,
    barrier_alpha: Optional[float] = None,
    max_particles: int = DEFAULT_MAX_PARTICLES,
) -> Forest:
    """Simulate the branching random walk from a single particle at 0.

    With ``barrier_alpha`` set, particles below ``-barrier_alpha`` are removed
    with their descendants. Draws are keyed by genealogy, so a barriered run
    is the exact restriction of the unbarriered run with the same seed.
    """
    if barrier_alpha is not None and barrier_alpha < 0:
        raise ValueError("barrier_alpha must be >= 0")
    gens = grow(model, krng.root_key(rng_seed), n_generations, barrier_alpha, max_particles)
    return Forest(gens, int(rng_seed), barrier_alpha)


class SurvivingForests:
    """Rejection sampler for forests alive at depth ``n``.

    Attempt ``a`` uses seed ``derive_seed(seed, a)``, so the accepted stream
    is a deterministic function of ``seed``.
    """

    def __init__(
        self,
        model: BoundaryModel,
        n: int,
        seed: int,
        replicates: int,
        max_consecutive_rejections: int = 10**6,
        **options,
    ):
        if replicates < 1:
            raise ValueError("replicates must be >= 1")
        self.model = model
        self.n = n
        self.seed = seed
        self.replicates = replicates
        self.max_rejections = max_consecutive_rejections
        self.options = options
        self.attempts = 0
        self.accepted = 0
        self.attempt_seeds = []

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.attempts if self.attempts else math.nan

    def __iter__(self) -> Iterator[Forest]:
        rejections = 0
        while self.accepted < self.replicates:
            s = krng.derive_seed(self.seed, self.attempts)
            self.attempts += 1
            f = simulate(self.model, self.n, s, **self.options)
            if f.alive:
                rejections = 0
                self.accepted += 1
                self.attempt_seeds.append(s)
                yield f
            else:
                rejections += 1
                if rejections >= self.max_rejections:
                    raise AllExtinct(
                        f"{rejections} consecutive extinct forests; is the model subcritical?"
                    )


def survival_condition(model, n, seed, replicates, **options) -> SurvivingForests:
    return SurvivingForests(model, n, seed, replicates, **options)


# ----------------------------------------------------------------- trajectories


@dataclass
class TrajectoryView:
    node: tuple
    values: np.ndarray  # V(x_1), ..., V(x_n)

    @property
    def n(self) -> int:
        return len(self.values)

    def interpolated(self, t):
        """Rescaled linear interpolation V_t(x), t in [0, 1]; zero when n = 0."""
        return interpolate_paths(self.values[None, :], t)[0]


def interpolate_paths(paths: np.ndarray, t) -> np.ndarray:
    """V_t for each row of ``paths`` (rows are V(x_1..x_n)); shape (rows, len(t))."""
    paths = np.atleast_2d(np.asarray(paths, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    rows, n = paths.shape
    if n == 0:
        return np.zeros((rows, len(t)))
    full = np.concatenate([np.zeros((rows, 1)), paths, paths[:, -1:]], axis=1)
    nt = n * t
    k = np.floor(nt).astype(int)
    frac = nt - k
    lo = full[:, k]
    hi = full[:, np.minimum(k + 1, n + 1)]
    return (lo + frac * (hi - lo)) / math.sqrt(n)


def trajectory(forest: Forest, node: tuple) -> TrajectoryView:
    gen, idx = node
    if not (0 <= gen <= forest.depth) or not (0 <= idx < len(forest.generations[gen])):
        raise InvalidNode(f"no particle {node}")
    values = np.empty(gen)
    i = idx
    for k in range(gen, 0, -1):
        values[k - 1] = forest.generations[k].position[i]
        i = forest.generations[k].parent[i]
    return TrajectoryView((gen, idx), values)


def interpolated_leaves(forest: Forest, t_grid) -> np.ndarray:
    """V_t(u) for every leaf u and t in ``t_grid``: shape (leaves, len(t_grid))."""
    n = forest.depth
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    m = len(forest.leaves)
    if n == 0:
        return np.zeros((m, len(t)))
    k = np.floor(n * t).astype(int)
    frac = n * t - k
    levels = set(k.tolist()) | set(np.minimum(k + 1, n).tolist())
    anc = forest.ancestor_positions(levels)
    out = np.empty((m, len(t)))
    for j in range(len(t)):
        lo = anc[k[j]]
        hi = anc[min(k[j] + 1, n)]
        out[:, j] = (lo + frac[j] * (hi - lo)) / math.sqrt(n)
    return out


# --------------------------------------------------------------- constructors


def from_arrays(parents: Sequence, positions: Sequence, seed: Optional[int] = None) -> Forest:
    """Build a forest from per-generation parent and position lists (generation >= 1).

    The root at 0 is added automatically. Keys are all zero: such forests are
    for evaluation, not for further simulation.
    """
    gens = [_root_generation(np.zeros(1, np.uint64))]
    for par, pos in zip(parents, positions):
        par = np.asarray(par, dtype=np.int64)
        pos = np.asarray(pos, dtype=float)
        prev = gens[-1]
        if len(par) and (par.min() < 0 or par.max() >= len(prev)):
            raise InvalidNode("parent index out of range")
        pmin = np.minimum(prev.path_min[par], pos)
        gens.append(Generation(par, pos, pmin, np.zeros(len(pos), np.uint64)))
    return Forest(gens, seed)


# -------------------------------------------------------------------- binary dump


def dump(forest: Forest, path) -> None:
    """Write the little-endian BRW1 debug dump."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", forest.depth))
        fh.write(np.asarray(forest.sizes(), dtype="<u8").tobytes())
        for k, g in enumerate(forest.generations):
            par = np.full(len(g), _NO_PARENT, dtype="<u4") if k == 0 else g.parent.astype("<u4")
            fh.write(par.tobytes())
            fh.write(g.position.astype("<f8").tobytes())


def load(path) -> Forest:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ValueError("not a BRW1 dump")
    (n,) = struct.unpack_from("<I", data, 4)
    off = 8
    sizes = np.frombuffer(data, dtype="<u8", count=n + 1, offset=off).astype(int)
    off += 8 * (n + 1)
    parents, positions = [], []
    for k, m in enumerate(sizes):
        par = np.frombuffer(data, dtype="<u4", count=m, offset=off).astype(np.int64)
        off += 4 * m
        pos = np.frombuffer(data, dtype="<f8", count=m, offset=off).copy()
        off += 8 * m
        if k > 0:
            parents.append(par)
            positions.append(pos)
    return from_arrays(parents, positions)
