"""Polymer measure on the leaves of a forest, path functionals, overlaps."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .forest import Forest, TrajectoryView, interpolated_leaves, trajectory
from .martingale import all_subtree_masses, exact_sum, subtree_mass
from .model import BoundaryModel


class ExtinctForest(ValueError):
    pass


@dataclass
class PolymerDraw:
    node: tuple
    weight: float
    trajectory: TrajectoryView


def polymer_weights(forest: Forest, beta: float = 1.0) -> np.ndarray:
    """Normalised leaf weights e^{-beta V(x)} / sum_y e^{-beta V(y)}.

    The phi(beta) n factor cancels; positions are shifted by their minimum
    so the exponentials cannot overflow.
    """
    v = forest.leaves.position
    if len(v) == 0:
        raise ExtinctForest("forest is extinct at its final generation")
    e = np.exp(-beta * (v - v.min()))
    return e / exact_sum(e)


def sample_polymer(
    forest: Forest,
    beta: float,
    model: BoundaryModel,
    count: int,
    rng: np.random.Generator,
) -> list:
    """``count`` i.i.d. leaves drawn from the polymer measure at inverse temperature ``beta``.

    Sampling walks down from the root choosing a child with probability
    proportional to its subtree mass, so a draw costs one search per level.
    """
    if not model.in_domain(beta):
        raise ValueError(f"beta={beta} outside the model domain")
    idx = sample_polymer_indices(forest, beta, count, rng)
    w = polymer_weights(forest, beta)
    n = forest.depth
    return [PolymerDraw((n, int(i)), float(w[i]), trajectory(forest, (n, int(i)))) for i in idx]


def sample_polymer_indices(forest: Forest, beta: float, count: int, rng: np.random.Generator) -> np.ndarray:
    w = polymer_weights(forest, beta)
    masses = all_subtree_masses(forest, w)
    node = np.zeros(count, dtype=np.int64)
    for k in range(1, forest.depth + 1):
        parent = forest.generations[k].parent
        order = np.argsort(parent, kind="stable")
        sorted_parent = parent[order]
        cum = np.cumsum(masses[k][order])
        start = np.searchsorted(sorted_parent, node, side="left")
        end = np.searchsorted(sorted_parent, node, side="right")
        before = np.where(start > 0, cum[np.maximum(start - 1, 0)], 0.0)
        target = before + rng.random(count) * (cum[end - 1] - before)
        j = np.clip(np.searchsorted(cum, target, side="right"), start, end - 1)
        node = order[j]
    return node


def polymer_functional(
    forest: Forest,
    t_grid,
    F: Callable[[np.ndarray], np.ndarray],
    beta: float = 1.0,
) -> float:
    """Polymer average of F evaluated on the rescaled trajectories at ``t_grid``.

    ``F`` receives an array of shape (leaves, len(t_grid)) and returns one
    value per leaf.
    """
    w = polymer_weights(forest, beta)
    y = interpolated_leaves(forest, t_grid)
    vals = np.asarray(F(y), dtype=float)
    return exact_sum(w * vals)


@dataclass
class OverlapReport:
    delta: float
    pair_mass: float
    n: int
    level: int


def overlap_level(n: int, delta: float) -> int:
    """First level k with k / n >= delta."""
    if delta < 0:
        raise ValueError("delta must be >= 0")
    if delta == 0:
        return 0
    return int(math.ceil(delta * n - 1e-12))


def overlap_pair_mass(forest: Forest, delta: float) -> OverlapReport:
    """Polymer mass of leaf pairs whose common ancestry reaches level ceil(delta n).

    Sums M_w^2 over nodes w at that level, with M_w the e^{-V} mass below w,
    divided by W_n^2. Diagonal pairs are included. For continuous laws equal
    positions along two paths mean equal ancestors (almost surely), so the
    ancestry overlap is used for the position overlap as well. ``delta = 0``
    is the root level (mass 1); ``delta > 1`` keeps only diagonal pairs.
    """
    n = forest.depth
    w = polymer_weights(forest, 1.0)
    k = overlap_level(n, delta)
    if k > n:
        return OverlapReport(delta, exact_sum(w**2), n, k)
    m = subtree_mass(forest, k, w).mass
    return OverlapReport(delta, exact_sum(m**2), n, k)


def overlap_pair_mass_bruteforce(forest: Forest, delta: float, use_positions: bool = False) -> float:
    """O(N^2) double loop over leaf pairs; reference for :func:`overlap_pair_mass`."""
    n = forest.depth
    w = polymer_weights(forest, 1.0)
    k = overlap_level(n, delta)
    m = len(w)
    if use_positions:
        anc = forest.ancestor_positions(range(n + 1))
    else:
        anc = {lvl: forest.ancestor_index(lvl) for lvl in range(n + 1)}
    total = []
    for a in range(m):
        for b in range(m):
            if a == b:
                total.append(w[a] * w[b])  # a leaf shares every level with itself
                continue
            shared = 0
            for lvl in range(1, n + 1):
                if anc[lvl][a] == anc[lvl][b]:
                    shared = lvl
                else:
                    break
            if shared >= k:
                total.append(w[a] * w[b])
    return exact_sum(total)
