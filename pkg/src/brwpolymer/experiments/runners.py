"""Experiment runners: one function per CLI subcommand, each returning a RunReport."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional

import numpy as np

from .. import forest as _forest
from .. import meander as _meander
from .. import rng as krng
from .. import spine as _spine
from .. import walk as _walk
from ..model import DiscreteDisplacement, GaussianDisplacement, lattice_toy_model
from ..martingale import compute_series, exact_sum
from ..polymer import overlap_pair_mass, polymer_weights
from ..forest import interpolated_leaves
from .config import ExperimentConfig, build_model
from .report import RunReport
from .stats import bonferroni_z, bootstrap_median_se, ks_two_sample, mean_se, weighted_ecdf


class BudgetExceeded(ValueError):
    pass


# ------------------------------------------------------------------ plumbing


def map_ordered(fn: Callable, items: list, threads: int = 1) -> list:
    """``[fn(x) for x in items]``, possibly on a thread pool; order is preserved."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def surviving_replicates(cfg: ExperimentConfig, per_forest: Callable, threads: int = 1, depth: Optional[int] = None) -> list:
    """Apply ``per_forest`` to the first ``replicates`` forests alive at ``depth``.

    Attempt ``a`` uses seed ``derive_seed(seed, a)``. Attempts run in chunks
    and survivors are kept in attempt order, so the selection does not depend
    on the number of threads. Returns a list of ``(seed, result)``.
    """
    model = cfg.build_model()
    depth = cfg.sim.max_gen if depth is None else depth
    want = cfg.sim.replicates

    def work(s):
        f = _forest.simulate(model, depth, s, cfg.sim.barrier_alpha, cfg.sim.max_particles)
        return per_forest(f) if f.alive else None

    out = []
    attempt = 0
    while len(out) < want:
        seeds = [krng.derive_seed(cfg.sim.seed, a) for a in range(attempt, attempt + want)]
        attempt += want
        for s, r in zip(seeds, map_ordered(work, seeds, threads)):
            if r is not None and len(out) < want:
                out.append((s, r))
        if not out and attempt >= 1000 * want:
            raise _forest.AllExtinct(f"no surviving forest in {attempt} attempts")
    return out


def _report(cfg: ExperimentConfig) -> RunReport:
    return RunReport(cfg.name, cfg.as_dict(), cfg.sim.seed, cfg.config_hash)


def _median_stat(values, rng) -> tuple:
    v = np.asarray(values, dtype=float)
    return float(np.median(v)), bootstrap_median_se(v, rng)


def skip_free_lattice(model) -> bool:
    """Integer steps whose only negative value is -1: then h_0(u) = 1 + floor(u) exactly."""
    step = model.step_law()
    if not isinstance(step, DiscreteDisplacement):
        return False
    x = np.asarray(step.support, dtype=float)
    return bool(np.all(x == np.round(x)) and x[x < 0].tolist() == [-1.0])


def renewal_for(model, block: dict, rng) -> _walk.RenewalTable:
    """Exact table for skip-free lattice walks, a Monte Carlo estimate otherwise."""
    if skip_free_lattice(model):
        return _walk.lattice_renewal_table(int(math.ceil(block["u_max"])) + 40)
    u = np.round(np.arange(0.0, block["u_max"] + 1e-9, block["u_step"]), 10)
    return _walk.estimate_renewal(model, u, block["walks"], block["horizon"], rng)


# ---------------------------------------------------------------- simulate


def run_simulate(cfg: ExperimentConfig, threads: int = 1) -> RunReport:
    """Martingale series of every surviving forest."""
    t0 = time.perf_counter()
    model = cfg.build_model()
    ex = cfg.experiment
    alpha = ex.get("alpha")

    def per_forest(f):
        s = compute_series(f, ex["betas"], model, alpha=alpha)
        return list(s.rows())

    res = surviving_replicates(cfg, per_forest, threads)
    rep = _report(cfg)
    cols = ["seed", "generation", "beta", "W_beta", "W", "D", "W_alpha"]
    rows = []
    for seed, series in res:
        for r in series:
            rows.append([seed, r["generation"], float(r["beta"]), float(r["W_beta"]), float(r["W"]), float(r["D"]),
                         "" if r["W_alpha"] == "" else float(r["W_alpha"])])
    rep.tables["series"] = (cols, rows)
    last = [r for _, s in res for r in s if r["generation"] == cfg.sim.max_gen and r["beta"] == ex["betas"][0]]
    m, se = mean_se([r["W_beta"] for r in last])
    rep.add(f"mean_W_beta{ex['betas'][0]:g}_n{cfg.sim.max_gen}", m, se)
    rep.wall_clock = time.perf_counter() - t0
    return rep


# ---------------------------------------------------------------- theorem A


def theorem_a_target(sigma2: float) -> float:
    return math.sqrt(2.0 / (math.pi * sigma2))


def run_theorem_a(cfg: ExperimentConfig, threads: int = 1) -> RunReport:
    """Medians of sqrt(n) W_n / D_n over surviving forests against sqrt(2/(pi s2))."""
    t0 = time.perf_counter()
    model = cfg.build_model()
    ns = sorted(int(n) for n in cfg.experiment["n_values"])
    if ns[-1] > cfg.sim.max_gen:
        raise BudgetExceeded(f"n={ns[-1]} exceeds max_gen={cfg.sim.max_gen}")
    if cfg.sim.max_gen > 22:
        raise BudgetExceeded("max_gen <= 22")

    def per_forest(f):
        out = []
        for n in ns:
            v = f.generations[n].position
            e = np.exp(-v)
            out.append((exact_sum(e), exact_sum(v * e)))
        return out

    res = surviving_replicates(cfg, per_forest, threads)
    target = theorem_a_target(model.sigma2)
    rep = _report(cfg)
    brng = krng.generator(cfg.sim.seed, 7)
    rows, errs, ses = [], [], []
    for j, n in enumerate(ns):
        ratio = np.array([math.sqrt(n) * r[j][0] / r[j][1] for _, r in res])
        for (seed, r), q in zip(res, ratio):
            rows.append([seed, n, r[j][0], r[j][1], float(q)])
        med, se = _median_stat(ratio, brng)
        errs.append(abs(med - target))
        ses.append(se)
        flagged = n == ns[-1] and n > 1
        tol = cfg.experiment["tolerance"]
        rep.add(f"median_ratio_n{n}", med, se, target, tol if flagged else None,
                (abs(med - target) <= tol * target) if flagged else None)
    for j, n in enumerate(ns):
        rep.add(f"abs_error_n{n}", errs[j], ses[j])
    if cfg.experiment.get("trend", True) and len(ns) > 1 and ns[-1] > 1:
        steps = np.diff(errs)
        rep.add("error_nonincreasing", float(np.max(steps)), float(max(ses)), 0.0, 0.0, bool(np.all(steps <= 0)))
    rep.tables["ratios"] = (["seed", "n", "W", "D", "ratio"], rows)
    rep.wall_clock = time.perf_counter() - t0
    return rep


# -------------------------------------------------------------- first order


def run_first_order(cfg: ExperimentConfig, threads: int = 1) -> RunReport:
    """(1/alpha) W_{beta, n(alpha, C)} against 2 D_n, with n(alpha, C) = floor(C / alpha^2)."""
    t0 = time.perf_counter()
    model = cfg.build_model()
    ex = cfg.experiment
    sigma = math.sqrt(model.sigma2)
    combos = []
    for C in ex["C"]:
        for b in ex["betas"]:
            a = 1.0 - b
            n = int(math.floor(C / a**2 + 1e-9))
            if n > cfg.sim.max_gen:
                raise BudgetExceeded(f"beta={b}, C={C}: n={n} > max_gen={cfg.sim.max_gen}")
            combos.append((float(b), float(C), n))

    def per_forest(f):
        dn = f.leaves.position
        D = exact_sum(dn * np.exp(-dn))
        out = []
        for b, C, n in combos:
            v = f.generations[n].position
            ph = float(model.phi(b))
            direct = exact_sum(np.exp(-b * v - ph * n))
            e = np.exp(-v)
            W = exact_sum(e)
            stat = exact_sum(e * np.exp((1 - b) * v)) / W
            factored = math.exp(-ph * n) * W * stat
            out.append((direct, factored, stat, D))
        return out

    res = surviving_replicates(cfg, per_forest, threads)
    rep = _report(cfg)
    brng = krng.generator(cfg.sim.seed, 7)
    rows = []
    worst = 0.0
    for j, (b, C, n) in enumerate(combos):
        direct = np.array([r[j][0] for _, r in res])
        fact = np.array([r[j][1] for _, r in res])
        stat = np.array([r[j][2] for _, r in res])
        D = np.array([r[j][3] for _, r in res])
        a = 1.0 - b
        worst = max(worst, float(np.max(np.abs(direct - fact) / np.abs(direct))))
        scaled = direct / a
        for (seed, _), x, d, s in zip(res, scaled, D, stat):
            rows.append([seed, b, C, n, float(x), float(2 * d), float(s)])
        tag = f"beta{b:g}_C{C:g}"
        rep.add(f"median_scaled_W_{tag}", *_median_stat(scaled, brng))
        rep.add(f"median_2D_{tag}", *_median_stat(2 * D, brng))
        rep.add(f"median_ratio_{tag}", *_median_stat(scaled / (2 * D), brng), target=1.0)
        target = _meander.meander_exp_moment(sigma * math.sqrt(C))
        # the exponent alpha V equals sqrt(C) V / sqrt(n) only up to the floor in n
        rep.add(f"median_tilt_statistic_{tag}", *_median_stat(stat, brng), target=target)
    tol = ex["identity_tolerance"]
    rep.add("two_way_identity_max_rel_diff", worst, 0.0, 0.0, tol, worst <= tol)
    Cc = ex["chain_C"]
    f = _meander.constants_chain(Cc, model.sigma2)
    rep.add(f"constants_chain_C{Cc:g}", f, 0.0, 2.0, 1e-6, abs(f - 2.0) < 1e-6)
    rep.tables["forests"] = (["seed", "beta", "C", "n", "scaled_W", "two_D", "tilt_statistic"], rows)
    rep.wall_clock = time.perf_counter() - t0
    return rep


# ------------------------------------------------------------ meander fdd


def run_meander_fdd(cfg: ExperimentConfig, threads: int = 1) -> RunReport:
    """Polymer-averaged CDFs of V_t / sigma against the meander marginals."""
    t0 = time.perf_counter()
    model = cfg.build_model()
    ex = cfg.experiment
    t = np.asarray(ex["t_grid"], dtype=float)
    if np.any(t <= 0) or np.any(t > 1):
        raise ValueError("t_grid must lie in (0, 1]")
    if cfg.sim.max_gen > 22:
        raise BudgetExceeded("max_gen <= 22")
    sigma = math.sqrt(model.sigma2)
    x = np.round(np.arange(0.0, ex["x_max"] + 1e-9, ex["x_step"]), 10)
    pt = [float(s) for s in ex["product_t"]]
    # product test thresholds: the meander medians at the two times
    med = [_meander_quantile(s, 0.5) for s in pt]

    def per_forest(f):
        w = polymer_weights(f, 1.0)
        y = interpolated_leaves(f, np.concatenate([t, pt])) / sigma
        cdf = np.stack([_wcdf(y[:, j], w, x) for j in range(len(t))])
        fv = exact_sum(w * (y[:, len(t)] <= med[0]))
        gv = exact_sum(w * (y[:, len(t) + 1] <= med[1]))
        return cdf, fv, gv

    res = surviving_replicates(cfg, per_forest, threads)
    rep = _report(cfg)
    cdfs = np.stack([r[0] for _, r in res])  # (forests, t, x)
    mean = cdfs.mean(axis=0)
    se = cdfs.std(axis=0, ddof=1) / math.sqrt(len(res))
    rows = []
    for j, tj in enumerate(t):
        target = np.array([_meander.meander_marginal_cdf(float(tj), float(xi)) for xi in x])
        diff = np.abs(mean[j] - target)
        k = int(np.argmax(diff))
        is_end = tj == 1.0
        tol = ex["endpoint_tolerance"]
        rep.add(f"cdf_distance_t{tj:g}", diff[k], se[j, k], 0.0, tol if is_end else None,
                (diff[k] < tol) if is_end else None)
        for xi, m, s, tg in zip(x, mean[j], se[j], target):
            rows.append([float(tj), float(xi), float(m), float(s), float(tg)])
    fv = np.array([r[1] for _, r in res])
    gv = np.array([r[2] for _, r in res])
    m_prod, se_prod = mean_se(fv * gv)
    mf, sf = mean_se(fv)
    mg, sg = mean_se(gv)
    cov = np.cov(fv, gv, ddof=1)[0, 1] / len(fv)
    fact = mf * mg
    fact_se = math.sqrt(max(mg**2 * sf**2 + mf**2 * sg**2 + 2 * mf * mg * cov, 0.0))
    overlap = abs(m_prod - fact) <= 3 * (se_prod + fact_se)
    rep.add("product_mean", m_prod, se_prod, target=0.25)
    rep.add("product_of_means", fact, fact_se, target=0.25)
    rep.add("product_factorises", abs(m_prod - fact), se_prod + fact_se, 0.0, 3.0, overlap)
    rep.tables["cdf"] = (["t", "x", "polymer_cdf", "se", "meander_cdf"], rows)
    rep.wall_clock = time.perf_counter() - t0
    return rep


def _wcdf(y, w, x):
    return weighted_ecdf(y, w, x)


def _meander_quantile(t: float, p: float) -> float:
    from scipy.optimize import brentq

    if t == 1.0:
        return math.sqrt(-2 * math.log1p(-p))
    return brentq(lambda z: _meander.meander_marginal_cdf(t, z) - p, 1e-9, 10.0, xtol=1e-12)


# ------------------------------------------------------------------ overlap


def run_overlap(cfg: ExperimentConfig, threads: int = 1) -> RunReport:
    """Median polymer pair mass sharing ancestry up to level ceil(delta n)."""
    t0 = time.perf_counter()
    ex = cfg.experiment
    ns = sorted(int(n) for n in ex["n_values"])
    deltas = [float(d) for d in ex["deltas"]]
    if ns[-1] > cfg.sim.max_gen:
        raise BudgetExceeded(f"n={ns[-1]} exceeds max_gen={cfg.sim.max_gen}")

    def per_forest(f):
        return [[overlap_pair_mass(f.truncated(n), d).pair_mass for d in deltas] for n in ns]

    res = surviving_replicates(cfg, per_forest, threads, depth=ns[-1])
    rep = _report(cfg)
    brng = krng.generator(cfg.sim.seed, 7)
    rows = []
    meds = {}
    for i, n in enumerate(ns):
        for j, d in enumerate(deltas):
            vals = np.array([r[i][j] for _, r in res])
            m, se = _median_stat(vals, brng)
            meds[(n, d)] = (m, se)
            rep.add(f"median_pair_mass_n{n}_delta{d:g}", m, se, target=1.0 if d == 0 else None)
            rows.extend([seed, n, d, float(v)] for (seed, _), v in zip(res, vals))
    td = float(ex["trend_delta"])
    if td in deltas and len(ns) > 1:
        m = np.array([meds[(n, td)][0] for n in ns])
        steps = np.diff(m)
        rep.add(f"decreasing_delta{td:g}", float(np.max(steps)), max(meds[(n, td)][1] for n in ns), 0.0, 0.0,
                bool(np.all(steps < 0)))
    rep.tables["pair_mass"] = (["seed", "n", "delta", "pair_mass"], rows)
    rep.wall_clock = time.perf_counter() - t0
    return rep


# ----------------------------------------------------------------- prop exp


def run_prop_exp(cfg: ExperimentConfig, threads: int = 1) -> RunReport:
    """(1/W_n) sum e^{-V} e^{C V / sqrt(n)} against E[e^{sigma C R_1}]."""
    t0 = time.perf_counter()
    model = cfg.build_model()
    ex = cfg.experiment
    C = float(ex["C"])
    ps = sorted(float(p) for p in ex["p_values"])
    n = cfg.sim.max_gen
    if n < 1 or n > 22:
        raise BudgetExceeded("1 <= max_gen <= 22")

    def per_forest(f):
        v = f.leaves.position
        e = np.exp(-v)
        W = exact_sum(e)
        terms = e * np.exp(C * v / math.sqrt(n))
        stat = exact_sum(terms) / W
        tails = [exact_sum(terms[v / math.sqrt(n) >= p]) / W for p in ps]
        return stat, tails

    res = surviving_replicates(cfg, per_forest, threads)
    rep = _report(cfg)
    brng = krng.generator(cfg.sim.seed, 7)
    stat = np.array([r[0] for _, r in res])
    tails = np.array([r[1] for _, r in res])
    target = _meander.meander_exp_moment(math.sqrt(model.sigma2) * C)
    m, se = _median_stat(stat, brng)
    tol = ex["tolerance"]
    rep.add(f"median_statistic_C{C:g}", m, se, target, tol, abs(m - target) <= tol * target)
    for j, p in enumerate(ps):
        rep.add(f"median_tail_share_p{p:g}", *_median_stat(tails[:, j] / stat, brng))
    if len(ps) > 1:
        mono = bool(np.all(np.diff(tails, axis=1) <= 0))
        rep.add("tail_monotone_in_p", float(np.max(np.diff(tails, axis=1))), 0.0, 0.0, 0.0, mono)
    rows = [[seed, float(s), *map(float, tl)] for (seed, _), s, tl in zip(res, stat, tails)]
    rep.tables["forests"] = (["seed", "statistic", *[f"tail_p{p:g}" for p in ps]], rows)
    rep.wall_clock = time.perf_counter() - t0
    return rep


# ------------------------------------------------------------------ renewal


def symmetric_gaussian_oracles(model) -> Optional[dict]:
    """c0 = sqrt(2)/sigma and theta = 1/sqrt(pi) when S_1 is a centred Gaussian."""
    step = model.step_law()
    if isinstance(step, GaussianDisplacement) and step.mean == 0.0:
        return {"c0": math.sqrt(2.0 / step.var), "theta": 1.0 / math.sqrt(math.pi)}
    return None


def run_renewal(cfg: ExperimentConfig, threads: int = 1) -> RunReport:
    t0 = time.perf_counter()
    model = cfg.build_model()
    ex = cfg.experiment
    table = renewal_for(model, ex, krng.generator(cfg.sim.seed, 1))
    rep = _report(cfg)
    orc = symmetric_gaussian_oracles(model)
    k = ex["k_se"]
    for name, est, se in (("c0", table.c0, table.c0_se), ("theta", table.theta, table.theta_se)):
        if orc is not None and math.isfinite(se):
            rep.add(name, est, se, orc[name], k, abs(est - orc[name]) <= k * se)
        else:
            rep.add(name, est, 0.0 if not math.isfinite(se) else se)
    rep.add("censored_fraction", table.meta.get("censored_fraction", 0.0), 0.0)
    n_lad = table.n_ladders if table.n_ladders is not None else np.zeros(len(table.u_grid), int)
    rows = [[float(u), float(h), float(s), int(c)] for u, h, s, c in zip(table.u_grid, table.h0, table.se, n_lad)]
    rep.tables["table"] = (["u", "h0", "se", "n_ladders"], rows)
    rep.wall_clock = time.perf_counter() - t0
    return rep


# -------------------------------------------------------------- identities


def _check_rows(rep: RunReport, checks: list, k: float, prefix: str = "") -> bool:
    ok = True
    for c in checks:
        c.k_se = k
        rep.add(prefix + c.name, c.lhs - c.rhs, c.lhs_se + c.rhs_se, 0.0, k, c.overlap)
        ok &= c.overlap
    return ok


def spine_identity_checks(model, table, alpha, n, draws, rng) -> list:
    """Spine averages under Q^(alpha) against h-weighted plain walks, three functions."""
    gs = {
        "Sn_over_sqrt_n": lambda p: p[:, -1] / math.sqrt(n),
        "Sn_below_3": lambda p: (p[:, -1] <= 3.0).astype(float),
        "path_min": lambda p: p.min(axis=1),
    }
    sp = np.stack([s.spine_positions for s in _spine.sample_spines_Qalpha(model, table, alpha, n, rng, draws)])
    w = _walk.ManyToOneLaw(model).walks(rng, draws, n)
    wt = table.h_alpha(w[:, -1], alpha) * (w.min(axis=1) >= -alpha) / float(table.h_alpha(0.0, alpha))
    out = []
    for name, g in gs.items():
        l, ls = mean_se(g(sp))
        r, rs = mean_se(wt * g(w))
        out.append(_walk.IdentityCheck(f"spine[{name}]", l, ls, r, rs))
    return out


def posterior_checks(model, table, alpha, depth, draws, rng) -> list:
    """Spine leaf frequencies against the posterior h_alpha(V) e^{-V} / D_n^(alpha)."""
    sp = _spine.sample_spines_Qalpha(model, table, alpha, depth, rng, draws)
    fns = {
        "lowest": lambda tr: (tr.position == tr.position.min()).astype(float),
        "first_born": lambda tr: (np.arange(len(tr.position)) == 0).astype(float),
        "above_1": lambda tr: (tr.position > 1.0).astype(float),
    }
    lhs = {k: [] for k in fns}
    rhs = {k: [] for k in fns}
    for s in sp:
        tr = _spine.complete_tree(model, s, rng)
        p = _spine.spine_posterior(tr, table, alpha)
        for k, g in fns.items():
            v = g(tr)
            lhs[k].append(v[tr.spine_leaf])
            rhs[k].append(float(np.dot(p, v)))
    out = []
    for k in fns:
        l, ls = mean_se(lhs[k])
        r, rs = mean_se(rhs[k])
        out.append(_walk.IdentityCheck(f"posterior[{k}]", l, ls, r, rs))
    return out


def martingale_checks(model, table, alpha, n, betas, trees, rng) -> list:
    """E W_{beta,n} = 1 and E D_n^(alpha) = h_0(alpha) over independent trees."""
    keys = rng.integers(0, 2**64, size=trees, dtype=np.uint64)
    gens = _forest.grow(model, keys, n, max_particles=2**62)
    leaf = gens[n]
    root = _forest.root_of(gens, n)
    v = leaf.position
    out = []
    for b in betas:
        vals = np.bincount(root, np.exp(-b * v - float(model.phi(b)) * n), minlength=trees)
        m, se = mean_se(vals)
        out.append(_walk.IdentityCheck(f"E_W_beta{b:g}_n{n}", m, se, 1.0, 0.0))
    d = table.h_alpha(v, alpha) * np.exp(-v) * (leaf.path_min >= -alpha)
    m, se = mean_se(np.bincount(root, d, minlength=trees))
    h_se = float(np.interp(alpha, table.u_grid, table.se))
    out.append(_walk.IdentityCheck(f"E_D_alpha{alpha:g}_n{n}", m, se, float(table.h(alpha)), h_se))
    return out


def identity_checks(cfg: ExperimentConfig, table=None) -> tuple:
    """All exact-identity checks for the configured model; returns (checks, table)."""
    model = cfg.build_model()
    ex = cfg.experiment
    seed = cfg.sim.seed
    if table is None:
        table = renewal_for(model, ex["renewal"], krng.generator(seed, 1))
    checks = []
    gs = [
        lambda p: ((p[:, -1] >= 0) & (p[:, -1] <= 3)).astype(float),
        lambda p: np.maximum(p[:, -1], 0.0) * np.exp(-p[:, -1]),
        lambda p: np.exp(-p[:, -1]) * (p.min(axis=1) >= -1.0),
    ]
    names = ["count_in_0_3", "positive_part_D", "barrier_W"]
    for n in ex["many_to_one_n"]:
        checks += _walk.many_to_one_checks(
            model, int(n), gs, ex["many_to_one_samples"], krng.generator(seed, 2, int(n)),
            [f"many_to_one[{nm},n={n}]" for nm in names],
        )
    for i, u in enumerate(ex["harmonic_u"]):
        checks.append(_walk.harmonic_residual(table, model, float(u), ex["harmonic_samples"], krng.generator(seed, 3, i)))
    checks += spine_identity_checks(model, table, ex["alpha"], ex["spine_n"], ex["spine_draws"], krng.generator(seed, 4))
    checks += martingale_checks(
        model, table, ex["alpha"], ex["martingale_n"], ex["martingale_betas"], ex["martingale_trees"], krng.generator(seed, 5)
    )
    # the posterior identity needs exact enumeration of small trees: lattice model, exact h
    toy = lattice_toy_model()
    checks += posterior_checks(
        toy, _walk.lattice_renewal_table(60), ex["alpha"], ex["posterior_depth"], ex["posterior_draws"], krng.generator(seed, 6)
    )
    return checks, table


def negative_control_checks(cfg: ExperimentConfig, table) -> list:
    """The suite's h-dependent checks rerun with h_0(0) forced to 2."""
    model = cfg.build_model()
    ex = cfg.experiment
    bad = table.repinned(2.0)
    seed = cfg.sim.seed
    checks = []
    for i, u in enumerate([0.0] + list(ex["harmonic_u"])):
        checks.append(_walk.harmonic_residual(bad, model, float(u), ex["harmonic_samples"], krng.generator(seed, 13, i)))
    checks += martingale_checks(model, bad, ex["alpha"], ex["martingale_n"], [], ex["martingale_trees"], krng.generator(seed, 15))
    return checks


def run_identity_suite(cfg: ExperimentConfig, threads: int = 1, table=None) -> RunReport:
    """Every exact identity with Bonferroni-adjusted pass flags, plus the negative control."""
    t0 = time.perf_counter()
    ex = cfg.experiment
    checks, table = identity_checks(cfg, table)
    rep = _report(cfg)
    k = max(3.0, bonferroni_z(len(checks), ex["family_level"]))
    _check_rows(rep, checks, k)
    if ex.get("negative_control", True):
        neg = negative_control_checks(cfg, table)
        kn = max(3.0, bonferroni_z(len(neg), ex["family_level"]))
        caught = sum(not c.overlap for c in [_with_k(c, kn) for c in neg])
        for c in neg:
            rep.add("negative_control:" + c.name, c.lhs - c.rhs, c.lhs_se + c.rhs_se, 0.0, kn)
        rep.add("negative_control_detected", caught, 0.0, None, None, caught > 0)
    rep.wall_clock = time.perf_counter() - t0
    return rep


def _with_k(c, k):
    c.k_se = k
    return c


# -------------------------------------------------------------- spine check


def run_spine_check(cfg: ExperimentConfig, threads: int = 1, table=None) -> RunReport:
    t0 = time.perf_counter()
    model = cfg.build_model()
    ex = cfg.experiment
    seed = cfg.sim.seed
    if table is None:
        table = renewal_for(model, ex["renewal"], krng.generator(seed, 1))
    rep = _report(cfg)
    a, n, m = ex["alpha"], ex["n"], ex["draws"]
    r1 = krng.generator(seed, 20)
    sp = _spine.sample_spines_Qalpha(model, table, a, n, r1, m, method=ex["method"], batch=ex["batch"])
    ends = np.array([s.spine_positions[-1] for s in sp])
    walk_ends = _walk.conditioned_endpoints(model, table, a, n, krng.generator(seed, 21), m)
    ks = ks_two_sample(ends, walk_ends)
    rep.add(f"ks_spine_vs_conditioned_walk_n{n}", ks, 1.0 / math.sqrt(m), 0.0, ex["ks_tolerance"], ks < ex["ks_tolerance"])
    if ex["method"] == "config":
        ess = np.array([e for s in sp for e in s.ess])
        rep.add("mean_config_ess", float(ess.mean()), float(ess.std(ddof=1) / math.sqrt(len(ess))))

    checks = spine_identity_checks(model, table, a, n, m, krng.generator(seed, 22))

    b, bn, bd = ex["beta"], ex["beta_n"], ex["beta_draws"]
    r3 = krng.generator(seed, 23)
    qb = np.stack([_spine.sample_spine_Qbeta(model, b, bn, r3).spine_positions for _ in range(bd)])
    inc = np.diff(qb, axis=1).ravel()
    mu = float(model.displacement.tilted(b).mean)
    l, ls = mean_se(inc)
    checks.append(_walk.IdentityCheck(f"Qbeta_increment_mean[beta={b:g}]", l, ls, mu, 0.0))
    ph = float(model.phi(b))
    g = lambda p: np.exp(-b * p[:, -1] - ph * bn) * (p[:, -1] <= 1.0)
    lhs, lhs_se = mean_se(qb[:, -1] <= 1.0)
    rhs, rhs_se = mean_se(_walk.tree_sums(model, bn, g, bd, krng.generator(seed, 24)))
    checks.append(_walk.IdentityCheck(f"Qbeta_identity[V_n<=1,n={bn}]", lhs, lhs_se, rhs, rhs_se))

    checks += posterior_checks(
        lattice_toy_model(), _walk.lattice_renewal_table(60), a, ex["posterior_depth"], ex["posterior_draws"],
        krng.generator(seed, 25),
    )
    k = max(3.0, bonferroni_z(len(checks), 0.01))
    _check_rows(rep, checks, k)
    dump_rows = []
    for rep_i, s in enumerate(sp[: min(len(sp), 100)]):
        for i in range(1, s.n + 1):
            bro = s.brothers[i - 1]
            dump_rows.append([rep_i, i, float(s.spine_positions[i]), len(bro), " ".join(repr(float(x)) for x in bro)])
    rep.tables["spines"] = (["replicate", "level", "spine_V", "n_brothers", "brother_Vs"], dump_rows)
    rep.wall_clock = time.perf_counter() - t0
    return rep


RUNNERS = {
    "simulate": run_simulate,
    "theorem-a": run_theorem_a,
    "first-order": run_first_order,
    "meander-fdd": run_meander_fdd,
    "overlap": run_overlap,
    "prop-exp": run_prop_exp,
    "renewal": run_renewal,
    "spine-check": run_spine_check,
    "identities": run_identity_suite,
}
