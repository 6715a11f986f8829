"""Spine samplers for the truncated measure Q^(alpha) and the tilted measure Q_beta."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import forest as _forest
from .model import BoundaryModel
from .walk import RenewalTable, WeightCollapse, h_step


@dataclass
class SpineRealization:
    """One spine w_0..w_n with the brothers R_i of each spine vertex.

    ``brothers[i - 1]`` holds the absolute positions of the children of
    w_{i-1} other than w_i. ``spine_rank[i - 1]`` is the birth rank of w_i
    among its siblings.
    """

    spine_positions: np.ndarray
    brothers: list
    measure_tag: str
    weight: float = 1.0
    ess: list = field(default_factory=list)
    spine_rank: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.spine_positions) - 1


def sample_spine_Qalpha(
    model: BoundaryModel,
    table: RenewalTable,
    alpha: float,
    n: int,
    rng: np.random.Generator,
    method: str = "marked",
    batch: int = 64,
    max_batch: int = 2**14,
) -> SpineRealization:
    """Spine and brothers under Q^(alpha).

    ``method="marked"`` is exact for i.i.d. displacements with an independent
    count: the size-biased offspring number, one child moved by the
    h-transformed step, the others untilted. ``method="config"`` draws
    ``batch`` offspring configurations under P and resamples one with weight
    sum_x h_alpha(u + V(x)) e^{-V(x)} 1{u + V(x) >= -alpha}, then chooses the
    spine child within it by the same terms. Empty configurations have weight
    zero, so the spine never dies out.
    """
    return sample_spines_Qalpha(model, table, alpha, n, rng, 1, method, batch, max_batch)[0]


def sample_spines_Qalpha(
    model: BoundaryModel,
    table: RenewalTable,
    alpha: float,
    n: int,
    rng: np.random.Generator,
    count: int,
    method: str = "marked",
    batch: int = 64,
    max_batch: int = 2**14,
) -> list:
    """``count`` independent spines, advanced level by level in one batch."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if method not in ("marked", "config"):
        raise ValueError(f"unknown method {method!r}")
    pos = np.zeros((count, n + 1))
    brothers = [[None] * n for _ in range(count)]
    ranks = np.zeros((count, n), dtype=np.int64)
    ess = np.full((count, n), np.nan)
    u = np.zeros(count)
    for i in range(1, n + 1):
        if method == "marked":
            v = h_step(model, table, alpha, u, rng)
            k = model.offspring.sample_size_biased(rng.random(count))
            disp = model.displacement.quantile(rng.random(int(k.sum() - count)))
            cuts = np.cumsum(k - 1)[:-1]
            for j, d in enumerate(np.split(disp, cuts)):
                brothers[j][i - 1] = u[j] + d
            ranks[:, i - 1] = np.floor(rng.random(count) * k).astype(np.int64)
        else:
            v, others, r, e = _config_step(model, table, alpha, u, rng, batch, max_batch)
            for j in range(count):
                brothers[j][i - 1] = others[j]
            ranks[:, i - 1] = r
            ess[:, i - 1] = e
        pos[:, i] = v
        u = v
    tag = f"Q_alpha({alpha:g})"
    return [
        SpineRealization(pos[j], brothers[j], tag, 1.0, list(ess[j]), [int(r) for r in ranks[j]])
        for j in range(count)
    ]


def _config_step(model, table, alpha, u, rng, batch, max_batch):
    m = len(u)
    v_out = np.empty(m)
    r_out = np.zeros(m, dtype=np.int64)
    ess = np.empty(m)
    others = [None] * m
    todo = np.arange(m)
    b = batch
    while len(todo):
        mt = len(todo)
        keys = rng.integers(0, 2**64, size=mt * b, dtype=np.uint64)
        parent, disp, _ = model.offspring_from_keys(keys)
        v = u[todo][parent // b] + disp
        term = table.h_alpha(v, alpha) * np.exp(-disp) * (v >= -alpha)
        w = np.bincount(parent, term, minlength=mt * b).reshape(mt, b)
        tot = w.sum(axis=1)
        ok = tot > 0
        c = np.cumsum(w, axis=1)
        cfg = np.minimum((c <= (rng.random(mt) * tot)[:, None]).sum(axis=1), b - 1)
        cfg = np.arange(mt) * b + cfg
        start = np.searchsorted(parent, cfg, side="left")
        end = np.searchsorted(parent, cfg, side="right")
        csum = np.concatenate([[0.0], np.cumsum(term)])
        target = csum[start] + rng.random(mt) * (csum[end] - csum[start])
        pick = np.clip(np.searchsorted(csum, target, side="right") - 1, start, np.maximum(end - 1, start))
        for j in np.flatnonzero(ok):
            kids = v[start[j] : end[j]]
            r = int(pick[j] - start[j])
            dst = todo[j]
            v_out[dst] = kids[r]
            r_out[dst] = r
            others[dst] = np.delete(kids, r)
            ess[dst] = tot[j] ** 2 / np.sum(w[j] ** 2)
        todo = todo[~ok]
        if len(todo):
            b *= 2
            if b > max_batch:
                raise WeightCollapse(f"no offspring configuration above -alpha in {b // 2} draws")
    return v_out, others, r_out, ess


def sample_spine_Qbeta(model: BoundaryModel, beta: float, n: int, rng: np.random.Generator) -> SpineRealization:
    """Spine and brothers under Q_beta = W_beta . P.

    The offspring number is size-biased, the spine child's displacement has
    density proportional to e^{-beta x} against the displacement law, and the
    brothers are untilted. For the Gaussian families the spine increment is
    N(s2 (1 - beta), s2).
    """
    if not model.in_domain(beta):
        raise ValueError(f"beta={beta} outside the model domain")
    tilted = model.displacement.tilted(beta)
    pos = np.zeros(n + 1)
    brothers, ranks = [], []
    u = 0.0
    for i in range(1, n + 1):
        v = u + float(tilted.quantile(rng.random(1))[0])
        k = int(model.offspring.sample_size_biased(rng.random(1))[0])
        brothers.append(u + model.displacement.quantile(rng.random(k - 1)))
        ranks.append(int(rng.integers(0, k)))
        pos[i] = v
        u = v
    return SpineRealization(pos, brothers, f"Q_beta({beta:g})", 1.0, [], ranks)


# --------------------------------------------------------------- full trees


@dataclass
class SpineTree:
    """Leaves at depth n of a spine realization completed by P-subtrees."""

    position: np.ndarray
    path_min: np.ndarray
    spine_leaf: int


def complete_tree(model: BoundaryModel, spine: SpineRealization, rng: np.random.Generator, max_particles: int = 2**22) -> SpineTree:
    """Grow an independent P-tree from every brother down to generation n.

    Leaves are listed in depth-first birth order, so the spine leaf index
    also encodes its genealogy.
    """
    n = spine.n
    mins = np.minimum.accumulate(spine.spine_positions)
    pos_parts, min_parts = [], []
    spine_leaf = 0
    # the spine at level i splits the leaves below w_{i-1} into those of
    # earlier-born brothers, of w_i, and of later-born brothers
    before, after = [], []
    for i in range(1, n + 1):
        bro = spine.brothers[i - 1]
        r = spine.spine_rank[i - 1]
        keys = rng.integers(0, 2**64, size=len(bro), dtype=np.uint64)
        gens = _forest.grow(model, keys, n - i, max_particles=max_particles)
        leaf = gens[-1]
        root = _forest.root_of(gens, n - i)
        v = bro[root] + leaf.position
        m = np.minimum(mins[i - 1], bro[root] + leaf.path_min)
        order = np.argsort(root, kind="stable")
        v, m, root = v[order], m[order], root[order]
        before.append((v[root < r], m[root < r]))
        after.append((v[root >= r], m[root >= r]))
    for i in range(n):
        pos_parts.append(before[i][0])
        min_parts.append(before[i][1])
        spine_leaf += len(before[i][0])
    pos_parts.append(np.array([spine.spine_positions[-1]]))
    min_parts.append(np.array([mins[-1]]))
    for i in range(n - 1, -1, -1):
        pos_parts.append(after[i][0])
        min_parts.append(after[i][1])
    return SpineTree(np.concatenate(pos_parts), np.concatenate(min_parts), spine_leaf)


def spine_posterior(tree: SpineTree, table: RenewalTable, alpha: float) -> np.ndarray:
    """h_alpha(V(x)) e^{-V(x)} 1{min path >= -alpha} / D_n^(alpha) over the leaves."""
    w = table.h_alpha(tree.position, alpha) * np.exp(-tree.position) * (tree.path_min >= -alpha)
    return w / w.sum()


# -------------------------------------------------------------------- output


def write_spine_csv(spines: list, path) -> None:
    """Rows {level, spine_V, n_brothers, brother_Vs...}, one block per spine."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "level", "spine_V", "n_brothers", "brother_Vs"])
        for rep, s in enumerate(spines):
            w.writerow([rep, 0, repr(0.0), 0])
            for i in range(1, s.n + 1):
                b = s.brothers[i - 1]
                w.writerow([rep, i, repr(float(s.spine_positions[i])), len(b), *(repr(float(x)) for x in b)])


def write_spine_diagnostics(spines: list, path) -> None:
    with open(path, "w") as fh:
        for rep, s in enumerate(spines):
            ess = [None if math.isnan(e) else e for e in s.ess]
            fh.write(json.dumps({"replicate": rep, "measure": s.measure_tag, "weight": s.weight, "ess": ess}) + "\n")
