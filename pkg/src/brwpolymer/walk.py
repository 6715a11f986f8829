"""The many-to-one random walk, its renewal function and its h-transform."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import forest as _forest
from .model import BoundaryModel, DiscreteDisplacement, GaussianDisplacement


class HorizonTooSmall(RuntimeError):
    pass


class WeightCollapse(RuntimeError):
    pass


# --------------------------------------------------------------- S_1 sampling


@dataclass(frozen=True)
class ManyToOneLaw:
    """Step law of S_n: E f(S_1) = E sum_{|z|=1} f(V(z)) e^{-V(z)}."""

    model: BoundaryModel

    @property
    def step(self):
        return self.model.step_law()

    @property
    def sigma2(self) -> float:
        return self.model.sigma2

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        step = self.step
        if isinstance(step, GaussianDisplacement):
            return step.mean + math.sqrt(step.var) * rng.standard_normal(size)
        return step.quantile(rng.random(size))

    def walks(self, rng: np.random.Generator, paths: int, n: int) -> np.ndarray:
        """``paths`` walks of length n, as an array (paths, n+1) starting at 0."""
        out = np.zeros((paths, n + 1))
        if n:
            np.cumsum(self.sample(rng, (paths, n)), axis=1, out=out[:, 1:])
        return out


def sample_S1(model: BoundaryModel, rng: np.random.Generator, size=None, method: str = "exact"):
    """Draws of S_1.

    ``method="exact"`` uses the closed-form tilt of the displacement law
    (for the Gaussian families S_1 ~ N(0, s2)). ``method="size_biased"``
    samples offspring configurations, picks a child with probability
    proportional to e^{-V}, and returns ``(draws, weights)`` where the
    weights sum_z e^{-V(z)} must be self-normalised by the caller.
    """
    if method == "exact":
        law = ManyToOneLaw(model)
        return law.sample(rng, 1 if size is None else size) if size is not None else float(law.sample(rng, 1)[0])
    if method != "size_biased":
        raise ValueError(f"unknown method {method!r}")
    m = 1 if size is None else int(size)
    keys = rng.integers(0, 2**64, size=m, dtype=np.uint64)
    parent, disp, _ = model.offspring_from_keys(keys)
    e = np.exp(-disp)
    tot = np.bincount(parent, e, minlength=m)
    # one child per configuration, chosen by cumulative mass within its parent
    csum = np.cumsum(e)
    start = np.searchsorted(parent, np.arange(m), side="left")
    before = np.where(start > 0, csum[np.maximum(start - 1, 0)], 0.0)
    target = before + rng.random(m) * tot
    pick = np.searchsorted(csum, target, side="right")
    end = np.searchsorted(parent, np.arange(m), side="right")
    empty = start == end
    pick = np.clip(pick, start, np.maximum(end - 1, start))
    draws = np.where(empty, 0.0, disp[np.minimum(pick, len(disp) - 1)] if len(disp) else 0.0)
    weights = np.where(empty, 0.0, tot)
    return draws, weights


# -------------------------------------------------------------- many-to-one


@dataclass
class IdentityCheck:
    """Two independent estimates of one number."""

    name: str
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    k_se: float = 3.0

    @property
    def overlap(self) -> bool:
        return abs(self.lhs - self.rhs) <= self.k_se * (self.lhs_se + self.rhs_se) + 1e-12

    @property
    def z(self) -> float:
        s = math.hypot(self.lhs_se, self.rhs_se)
        return (self.lhs - self.rhs) / s if s > 0 else (0.0 if self.lhs == self.rhs else math.inf)


def _mean_se(x: np.ndarray) -> tuple:
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return float(x.mean()) if len(x) else math.nan, math.inf
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


def tree_sums(
    model: BoundaryModel,
    n: int,
    g: Callable[[np.ndarray], np.ndarray],
    trees: int,
    rng: np.random.Generator,
    chunk_leaves: int = 2**21,
) -> np.ndarray:
    """Per-tree values of sum_{|x|=n} g(V(x_1), ..., V(x_n)) for independent trees.

    ``g`` may return one value per path or a (paths, k) array, in which case
    the result has shape (trees, k).
    """
    out = None
    per_chunk = max(1, int(chunk_leaves / max(model.mean_offspring, 1.0) ** n))
    done = 0
    while done < trees:
        m = min(per_chunk, trees - done)
        keys = rng.integers(0, 2**64, size=m, dtype=np.uint64)
        gens = _forest.grow(model, keys, n, max_particles=2**62)
        paths = np.empty((len(gens[n]), n))
        idx = np.arange(len(gens[n]))
        for k in range(n, 0, -1):
            paths[:, k - 1] = gens[k].position[idx]
            idx = gens[k].parent[idx]
        vals = np.asarray(g(paths), dtype=float)
        if out is None:
            out = np.empty((trees,) + vals.shape[1:])
        if vals.ndim == 1:
            out[done : done + m] = np.bincount(idx, vals, minlength=m)
        else:
            for j in range(vals.shape[1]):
                out[done : done + m, j] = np.bincount(idx, vals[:, j], minlength=m)
        done += m
    return out


def many_to_one_check(
    model: BoundaryModel,
    n: int,
    g: Callable[[np.ndarray], np.ndarray],
    samples: int,
    rng: np.random.Generator,
    name: str = "many_to_one",
) -> IdentityCheck:
    """E sum_{|x|=n} g(path of x)  vs  E e^{S_n} g(S_1..S_n), each with a standard error.

    ``g`` maps an array of paths (rows = V(x_1..x_n)) to one value per row.
    """
    if n > 12:
        raise ValueError("n <= 12: the left side simulates whole trees")
    return many_to_one_checks(model, n, [g], samples, rng, [name])[0]


def many_to_one_checks(
    model: BoundaryModel,
    n: int,
    gs: list,
    samples: int,
    rng: np.random.Generator,
    names: Optional[list] = None,
) -> list:
    """:func:`many_to_one_check` for several functions sharing the same trees and walks."""
    if n > 12:
        raise ValueError("n <= 12: the left side simulates whole trees")
    names = names or [f"many_to_one[{j}]" for j in range(len(gs))]
    stack = lambda p: np.column_stack([np.asarray(g(p), dtype=float) for g in gs])
    left = tree_sums(model, n, stack, samples, rng)
    s = ManyToOneLaw(model).walks(rng, samples, n)[:, 1:]
    right = np.exp(s[:, -1])[:, None] * stack(s)
    out = []
    for j, name in enumerate(names):
        lhs, lhs_se = _mean_se(left[:, j])
        rhs, rhs_se = _mean_se(right[:, j])
        out.append(IdentityCheck(name, lhs, lhs_se, rhs, rhs_se))
    return out


# ----------------------------------------------------------- renewal function


@dataclass
class RenewalTable:
    u_grid: np.ndarray
    h0: np.ndarray
    se: np.ndarray
    c0: float
    theta: float = math.nan
    c0_se: float = math.nan
    theta_se: float = math.nan
    n_ladders: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None
    theta_by_u: Optional[np.ndarray] = None
    theta_se_by_u: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def h(self, u):
        """h_0 by linear interpolation; 0 below 0; slope c0 beyond the grid."""
        u = np.asarray(u, dtype=float)
        out = np.interp(u, self.u_grid, self.h0)
        top = self.u_grid[-1]
        out = np.where(u > top, self.h0[-1] + self.c0 * (u - top), out)
        return np.where(u < 0, 0.0, out)

    def h_alpha(self, v, alpha: float):
        return self.h(np.asarray(v, dtype=float) + alpha)

    @property
    def lipschitz(self) -> float:
        slopes = np.diff(self.h0) / np.diff(self.u_grid)
        return float(max(np.max(slopes, initial=0.0), self.c0, 0.0))

    def repinned(self, h0_at_0: float) -> "RenewalTable":
        """Copy shifted so that h0(0) equals ``h0_at_0`` (fault injection)."""
        return replace(self, h0=self.h0 - self.h0[0] + h0_at_0)

    def write_csv(self, path) -> None:
        n_lad = self.n_ladders if self.n_ladders is not None else np.zeros(len(self.u_grid), int)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["u", "h0", "se", "n_ladders"])
            for row in zip(self.u_grid, self.h0, self.se, n_lad):
                w.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])), int(row[3])])

    @classmethod
    def read_csv(cls, path, c0: float) -> "RenewalTable":
        data = np.genfromtxt(path, delimiter=",", names=True)
        return cls(
            np.atleast_1d(data["u"]),
            np.atleast_1d(data["h0"]),
            np.atleast_1d(data["se"]),
            c0,
            n_ladders=np.atleast_1d(data["n_ladders"]).astype(int),
        )


def lattice_renewal_table(u_max: int) -> RenewalTable:
    """Exact h_0(u) = 1 + floor(u) for a walk whose only downward step is -1."""
    u = np.arange(u_max + 1, dtype=float)
    return RenewalTable(u, 1.0 + u, np.zeros_like(u), 1.0, meta={"exact": True})


def _equilibrium_draws(heights: np.ndarray, rng: np.random.Generator, size: int) -> np.ndarray:
    """Stationary undershoot: size-biased ladder height times an independent uniform."""
    if len(heights) == 0:
        return np.zeros(size)
    p = heights / heights.sum()
    return heights[rng.choice(len(heights), size=size, p=p)] * rng.random(size)


def _ladder_walks(
    law: ManyToOneLaw,
    walks: int,
    horizon: int,
    level_floor: float,
    rng: np.random.Generator,
    pool: Optional[np.ndarray],
    first_only: bool = False,
):
    """Run walks from 0 until their minimum is below ``level_floor``.

    Ladder epochs longer than ``horizon`` steps are censored: the walk is
    moved to a new minimum drawn from the equilibrium undershoot law of
    ``pool`` and its clock is set to infinity.

    Returns per-ladder arrays (walk id, level, height, time, censored).
    """
    S = np.zeros(walks)
    m = np.zeros(walks)
    epoch = np.zeros(walks, dtype=np.int64)
    clock = np.zeros(walks)
    active = np.arange(walks)
    rec_w, rec_lvl, rec_h, rec_t, rec_c = [], [], [], [], []
    while len(active):
        b = int(min(horizon, max(64, 2_000_000 // len(active))))
        z = law.sample(rng, (len(active), b))
        path = S[active, None] + np.cumsum(z, axis=1)
        run_min = np.minimum(np.minimum.accumulate(path, axis=1), m[active, None])
        prev_min = np.concatenate([m[active, None], run_min[:, :-1]], axis=1)
        is_ladder = path < prev_min
        has = is_ladder.any(axis=1)
        first = np.where(has, is_ladder.argmax(axis=1) + 1, b + 1)  # 1-based step
        cap = horizon - epoch[active]  # steps allowed before censoring
        censor = first > cap
        if first_only:
            # only the first ladder epoch of each walk is wanted
            keep_to = np.where(censor, cap, np.minimum(first, b))
        else:
            keep_to = np.where(censor, cap, b)
        steps = np.arange(1, b + 1)
        valid = steps[None, :] <= keep_to[:, None]
        lad = is_ladder & valid
        r, c = np.nonzero(lad)
        if len(r):
            wid = active[r]
            lvl = path[r, c]
            # height below the previous minimum
            h = prev_min[r, c] - lvl
            t = clock[wid] + c + 1
            rec_w.append(wid)
            rec_lvl.append(lvl)
            rec_h.append(h)
            rec_t.append(t)
            rec_c.append(np.zeros(len(r), bool))
        # state at the end of the kept stretch
        last = keep_to - 1
        rows = np.arange(len(active))
        new_S = np.where(keep_to > 0, path[rows, np.maximum(last, 0)], S[active])
        new_m = np.where(keep_to > 0, run_min[rows, np.maximum(last, 0)], m[active])
        # epoch counter: steps since the last ladder in the kept stretch
        last_lad = np.where(lad.any(axis=1), b - 1 - np.argmax(lad[:, ::-1], axis=1), -1)
        new_epoch = np.where(last_lad >= 0, keep_to - 1 - last_lad, epoch[active] + keep_to)
        clock[active] += keep_to
        S[active], m[active], epoch[active] = new_S, new_m, new_epoch
        if censor.any():
            cw = active[censor]
            drop = _equilibrium_draws(pool, rng, len(cw)) if pool is not None else np.full(len(cw), np.nan)
            lvl = m[cw] - drop
            rec_w.append(cw)
            rec_lvl.append(lvl)
            rec_h.append(drop)
            rec_t.append(np.full(len(cw), np.inf))
            rec_c.append(np.ones(len(cw), bool))
            S[cw] = lvl
            m[cw] = lvl
            epoch[cw] = 0
            clock[cw] = np.inf
        if first_only:
            finished = active[(has & (first <= keep_to)) | censor]
            alive = np.ones(walks, bool)
            alive[finished] = False
            active = active[alive[active]]
        else:
            active = active[m[active] >= level_floor]
    cat = lambda xs, dt=float: np.concatenate(xs) if xs else np.empty(0, dt)
    return cat(rec_w, np.int64), cat(rec_lvl), cat(rec_h), cat(rec_t), cat(rec_c, bool)


def estimate_renewal(
    model: BoundaryModel,
    u_grid,
    walks: int,
    horizon: int,
    rng: np.random.Generator,
    check_bias: bool = True,
) -> RenewalTable:
    """Monte Carlo renewal function h_0 of the many-to-one walk.

    h_0(u) is 1 plus the mean number of strict descending ladder epochs whose
    level is >= -u. Each walk runs until its minimum passes below -max(u_grid).
    A ladder epoch that lasts longer than ``horizon`` steps is censored and
    replaced by an undershoot drawn from the equilibrium ladder law (fitted on
    a pilot run); the fraction of censored epochs times h_0(u) - 1 is reported
    as the bias bar. c0 is the weighted least-squares slope on the upper third
    of the grid; theta is sqrt(n) P(min_{j<=n} S_j >= -u) / h_0(u) at
    n = horizon, averaged over the grid points u > 0.
    """
    u = np.asarray(u_grid, dtype=float)
    if horizon < 1000:
        raise ValueError("horizon must be >= 1000")
    if u[0] != 0 or np.any(np.diff(u) <= 0):
        raise ValueError("u_grid must start at 0 and increase")
    law = ManyToOneLaw(model)
    # pilot: first ladder heights, for the censoring replacement law
    _, _, h_pilot, _, c_pilot = _ladder_walks(law, max(2000, walks // 4), horizon, 0.0, rng, None, first_only=True)
    pool = h_pilot[~c_pilot]
    wid, lvl, hgt, tim, cen = _ladder_walks(law, walks, horizon, -u[-1], rng, pool)

    counts = np.empty((len(u), walks))
    for i, ui in enumerate(u):
        counts[i] = np.bincount(wid, lvl >= -ui, minlength=walks)
    h0 = 1.0 + counts.mean(axis=1)
    se = counts.std(axis=1, ddof=1) / math.sqrt(walks)
    h0[0], se[0] = 1.0, 0.0  # only j = 0 can have S_j >= 0 below all earlier values
    n_ladders = counts.sum(axis=1).astype(int)

    cens_frac = float(cen.mean()) if len(cen) else 0.0
    bias = cens_frac * (h0 - 1.0)

    top = u >= u[-1] * 2 / 3
    wts = 1.0 / np.maximum(se[top], 1e-12) ** 2
    X = np.column_stack([np.ones(top.sum()), u[top]])
    cov = np.linalg.inv(X.T @ (X * wts[:, None]))
    coef = cov @ (X.T @ (wts * h0[top]))
    # se correlated along the grid; inflate by the number of points for an honest bar
    c0, c0_se = float(coef[1]), float(math.sqrt(cov[1, 1] * top.sum()))

    # theta: tau_u = time of the first ladder below -u
    theta_u = np.full(len(u), np.nan)
    theta_se = np.full(len(u), np.nan)
    order = np.lexsort((tim, wid))
    for i, ui in enumerate(u):
        below = lvl < -ui
        tau = np.full(walks, np.inf)
        np.minimum.at(tau, wid[below], tim[below])
        surv = (tau > horizon).astype(float)
        p, p_se = _mean_se(surv)
        theta_u[i] = math.sqrt(horizon) * p / h0[i]
        theta_se[i] = math.sqrt(horizon) * p_se / h0[i]
    pos = u > 0
    wt = 1.0 / np.maximum(theta_se[pos], 1e-12) ** 2
    theta = float(np.sum(wt * theta_u[pos]) / wt.sum())
    theta_bar = float(np.min(theta_se[pos]))

    table = RenewalTable(
        u, h0, se, c0, theta, c0_se, theta_bar, n_ladders, bias, theta_u, theta_se,
        meta={"walks": walks, "horizon": horizon, "censored_fraction": cens_frac},
    )
    if check_bias:
        bad = bias[1:] > se[1:]
        if np.any(bad):
            j = int(np.argmax(bad)) + 1
            raise HorizonTooSmall(
                f"truncation bias {bias[j]:.3g} exceeds standard error {se[j]:.3g} at u={u[j]}; "
                f"increase horizon (censored fraction {cens_frac:.2g})"
            )
    return table


def harmonic_residual(
    table: RenewalTable,
    model: BoundaryModel,
    u: float,
    samples: int,
    rng: np.random.Generator,
) -> IdentityCheck:
    """h_0(u) against a Monte Carlo estimate of E[h_0(S_1 + u); S_1 >= -u]."""
    s = ManyToOneLaw(model).sample(rng, samples)
    vals = np.where(s >= -u, table.h(s + u), 0.0)
    rhs, rhs_se = _mean_se(vals)
    # table noise enters the right side through h at the shifted points
    reach = s[s >= -u] + u
    tab_se = float(np.mean(np.interp(reach, table.u_grid, table.se))) if len(reach) else 0.0
    lhs = float(table.h(u))
    lhs_se = float(np.interp(u, table.u_grid, table.se))
    return IdentityCheck(f"harmonic(u={u})", lhs, lhs_se, rhs, math.hypot(rhs_se, tab_se))


# ------------------------------------------------------------- h-transform walk


def h_step(
    model: BoundaryModel,
    table: RenewalTable,
    alpha: float,
    u: np.ndarray,
    rng: np.random.Generator,
    method: str = "auto",
    batch: int = 64,
    max_batch: int = 2**14,
) -> np.ndarray:
    """One step of the kernel 1{v >= -alpha} h_alpha(v)/h_alpha(u) p(u, dv) from each u.

    ``method``:
      * ``"exact"`` enumerates finite-support step laws;
      * ``"rejection"`` (Gaussian steps) uses the envelope
        h_alpha(u) + L (v - u)^+ with L the largest slope of the table,
        a mixture of the step law and its Rayleigh-shaped upper half;
      * ``"sir"`` proposes ``batch`` steps and resamples one with weights
        h_alpha(v) 1{v >= -alpha}, doubling the batch when all weights vanish.
      * ``"auto"`` picks exact, then rejection, then sir.
    """
    u = np.asarray(u, dtype=float)
    step = model.step_law()
    if method == "auto":
        if isinstance(step, DiscreteDisplacement):
            method = "exact"
        elif isinstance(step, GaussianDisplacement) and step.mean == 0.0:
            method = "rejection"
        else:
            method = "sir"
    if method == "exact":
        x = np.asarray(step.support, dtype=float)
        v = u[:, None] + x[None, :]
        w = np.asarray(step.probs)[None, :] * table.h_alpha(v, alpha) * (v >= -alpha)
        return _pick(v, w, rng)
    if method == "rejection":
        return _h_step_rejection(step, table, alpha, u, rng)
    if method == "sir":
        out = np.empty_like(u)
        todo = np.arange(len(u))
        b = batch
        law = ManyToOneLaw(model)
        while len(todo):
            v = u[todo, None] + law.sample(rng, (len(todo), b))
            w = table.h_alpha(v, alpha) * (v >= -alpha)
            ok = w.sum(axis=1) > 0
            out[todo[ok]] = _pick(v[ok], w[ok], rng)
            todo = todo[~ok]
            if len(todo):
                b *= 2
                if b > max_batch:
                    raise WeightCollapse(f"all {b // 2} proposals fell below -alpha={-alpha}")
        return out
    raise ValueError(f"unknown method {method!r}")


def _pick(v: np.ndarray, w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    c = np.cumsum(w, axis=1)
    r = rng.random(len(v)) * c[:, -1]
    j = np.minimum((c <= r[:, None]).sum(axis=1), v.shape[1] - 1)
    return v[np.arange(len(v)), j]


def _h_step_rejection(step: GaussianDisplacement, table: RenewalTable, alpha, u, rng):
    sd = math.sqrt(step.var)
    L = table.lipschitz
    out = np.empty_like(u)
    todo = np.arange(len(u))
    while len(todo):
        uu = u[todo]
        hu = table.h_alpha(uu, alpha)
        mass_lin = L * sd / math.sqrt(2 * math.pi)
        use_lin = rng.random(len(todo)) * (hu + mass_lin) >= hu
        z = np.where(use_lin, np.sqrt(-2.0 * np.log(rng.random(len(todo)))), rng.standard_normal(len(todo)))
        v = uu + sd * z
        env = hu + L * np.maximum(v - uu, 0.0)
        target = table.h_alpha(v, alpha) * (v >= -alpha)
        acc = rng.random(len(todo)) * env < target
        out[todo[acc]] = v[acc]
        todo = todo[~acc]
    return out


def conditioned_walk(
    model: BoundaryModel,
    renewal_table: RenewalTable,
    alpha: float,
    n: int,
    rng: np.random.Generator,
    paths: int = 1,
    method: str = "auto",
    batch: int = 64,
) -> np.ndarray:
    """Paths (S_0..S_n) of the walk conditioned, in Doob's sense, to stay >= -alpha.

    Returns an array of shape (paths, n+1).
    """
    out = np.zeros((paths, n + 1))
    cur = np.zeros(paths)
    for k in range(1, n + 1):
        cur = h_step(model, renewal_table, alpha, cur, rng, method=method, batch=batch)
        out[:, k] = cur
    return out


def conditioned_endpoints(
    model: BoundaryModel,
    renewal_table: RenewalTable,
    alpha: float,
    n: int,
    rng: np.random.Generator,
    paths: int,
    method: str = "auto",
    batch: int = 64,
) -> np.ndarray:
    """S_n only, without storing whole paths."""
    cur = np.zeros(paths)
    for _ in range(n):
        cur = h_step(model, renewal_table, alpha, cur, rng, method=method, batch=batch)
    return cur
