"""Acceptance gate: one test per criterion, at the stated tolerances.

Each test prints a single ``CRITERION k: PASS|FAIL`` line with the numbers
behind the verdict (visible with ``pytest -s``) and asserts the verdict.
"""

import math
import time

import numpy as np
import pytest
import yaml
from scipy import integrate, stats

from brwpolymer import forest as F
from brwpolymer import martingale as MG
from brwpolymer import meander as MD
from brwpolymer import model as M
from brwpolymer import polymer as P
from brwpolymer import walk as W
from brwpolymer.experiments import load_config, run_identity_suite, run_meander_fdd, run_overlap, run_prop_exp, run_theorem_a
from brwpolymer.experiments.cli import main
from brwpolymer.experiments.stats import weighted_ks

pytestmark = pytest.mark.acceptance

LN2 = math.log(2.0)
K_SE = 3.0


def verdict(k: int, ok: bool, detail: str) -> None:
    print(f"\nCRITERION {k}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def within_k_se(stat) -> bool:
    # identity rows store lhs - rhs as the estimate and se_lhs + se_rhs as the error
    return abs(stat.estimate) <= K_SE * stat.standard_error + 1e-12


@pytest.fixture(scope="module")
def identity_report():
    t0 = time.perf_counter()
    rep = run_identity_suite(load_config("identities"))
    return rep, time.perf_counter() - t0


def test_criterion_01_exact_identities(identity_report):
    rep, secs = identity_report
    rows = [s for s in rep.statistics if not s.name.startswith("negative_control")]
    groups = {
        "many_to_one": [s for s in rows if s.name.startswith("many_to_one[")],
        "harmonic": [s for s in rows if s.name.startswith("harmonic(")],
        "spine": [s for s in rows if s.name.startswith("spine[")],
        "W_beta": [s for s in rows if s.name.startswith("E_W_beta")],
        "D_alpha": [s for s in rows if s.name.startswith("E_D_alpha")],
    }
    counts = {k: len(v) for k, v in groups.items()}
    assert counts == {"many_to_one": 9, "harmonic": 4, "spine": 3, "W_beta": 2, "D_alpha": 1}, counts
    bad = [s.name for g in groups.values() for s in g if not within_k_se(s)]
    ok = not bad and secs < 300
    verdict(1, ok, f"{sum(counts.values())} identities at 3 SE, failures {bad}, {secs:.0f}s (< 300s)")


def test_criterion_02_bruteforce_oracles():
    rng = np.random.default_rng(2024)
    model = M.poisson_gaussian(2 * LN2)
    worst, forests = 0.0, 0
    seed = 0
    while forests < 100:
        seed += 1
        n = int(rng.integers(1, 7))
        f = F.simulate(model, n, seed)
        if not f.alive or len(f.leaves) > 400:
            continue
        forests += 1
        for d in (0.0, 0.2, 0.5, 0.8, 1.0):
            fast = P.overlap_pair_mass(f, d).pair_mass
            slow = P.overlap_pair_mass_bruteforce(f, d)
            worst = max(worst, abs(fast - slow) / abs(slow))
    bg = M.binary_gaussian()
    pvals = []
    for s in range(5):
        f = F.simulate(bg, 3, 100 + s)
        w = P.polymer_weights(f, 1.0)
        idx = P.sample_polymer_indices(f, 1.0, 100000, np.random.default_rng(s))
        obs = np.bincount(idx, minlength=len(w))
        pvals.append(stats.chisquare(obs, w * obs.sum()).pvalue)
    two_way = 0.0
    for s in range(50):
        f = F.simulate(bg, 10, 500 + s)
        for b in (0.5, 0.7, 1.0):
            ser = MG.compute_series(f, [b], bg)
            v = f.leaves.position
            other = math.exp(-bg.phi(b) * 10) * MG.exact_sum(np.exp(-v) * np.exp((1 - b) * v))
            two_way = max(two_way, abs(ser.W_beta[-1, 0] - other) / other)
    ok = worst <= 1e-12 and min(pvals) > 0.01 and two_way <= 1e-10
    verdict(2, ok, f"overlap rel err {worst:.2e} (<=1e-12), chi2 min p {min(pvals):.3f} (>0.01), two-way W {two_way:.2e} (<=1e-10)")


def test_criterion_03_deterministic_numerics():
    t0 = time.perf_counter()
    errs = []
    for a in (0.5, 1.0, 2.0, 5.0):
        q, _ = integrate.quad(lambda x: x * math.exp(a * x - x * x / 2), 0, np.inf, epsabs=0, epsrel=1e-13)
        errs.append(abs(MD.meander_exp_moment(a) - q) / q)
    chain = abs(MD.constants_chain(50.0, 2 * LN2) - 2.0)
    secs = time.perf_counter() - t0
    ok = max(errs) <= 1e-9 and chain < 1e-6 and secs < 1.0
    verdict(3, ok, f"max rel err vs quadrature {max(errs):.1e} (<=1e-9), |f(50)-2| = {chain:.1e} (<1e-6), {secs:.2f}s")


def test_criterion_04_theorem_a():
    rep = run_theorem_a(load_config("theorem-a"))
    target = (1 / (math.pi * LN2)) ** 0.5
    meds = {n: rep.stat(f"median_ratio_n{n}").estimate for n in (12, 16, 20)}
    errs = [abs(meds[n] - target) for n in (12, 16, 20)]
    nonincreasing = errs[0] >= errs[1] >= errs[2]
    within = errs[2] <= 0.35 * target
    verdict(
        4,
        nonincreasing and within and rep.params["sim"]["replicates"] >= 200,
        f"medians {', '.join(f'n={n}: {m:.4f}' for n, m in meds.items())}, target {target:.5f}, "
        f"|err| {[round(e, 4) for e in errs]} non-increasing={nonincreasing}, n=20 rel err {errs[2] / target:.3f} (<=0.35)",
    )


def test_criterion_05_meander_endpoint():
    rep = run_meander_fdd(load_config("meander-fdd"))
    d = rep.stat("cdf_distance_t1").estimate
    prod = rep.stat("product_factorises")
    ok = d < 0.15 and prod.passed and rep.params["sim"]["replicates"] >= 200 and rep.params["sim"]["max_gen"] == 20
    verdict(5, ok, f"endpoint CDF distance {d:.4f} (<0.15), product vs factorised |diff| {prod.estimate:.4f} vs 3x{prod.standard_error:.4f}")


def test_criterion_06_overlap_decreasing():
    rep = run_overlap(load_config("overlap"))
    meds = [rep.stat(f"median_pair_mass_n{n}_delta0.5").estimate for n in (8, 12, 16)]
    ok = meds[0] > meds[1] > meds[2] and rep.params["sim"]["replicates"] >= 200
    verdict(6, ok, f"median pair mass at delta=0.5, n=8/12/16: {[round(m, 4) for m in meds]}")


def test_criterion_07_prop_exp():
    rep = run_prop_exp(load_config("prop-exp"))
    med = rep.stat("median_statistic_C1").estimate
    closed = MD.meander_exp_moment(math.sqrt(2 * LN2))
    # the brief quotes about 6.858 for the same closed form, which evaluates to 6.197; both are checked
    quoted = 6.858
    mono = rep.stat("tail_monotone_in_p").passed
    ok = abs(med - closed) <= 0.3 * closed and abs(med - quoted) <= 0.3 * quoted and mono
    verdict(7, ok, f"median {med:.4f}; closed form {closed:.4f} (rel {med / closed - 1:+.3f}), quoted {quoted} (rel {med / quoted - 1:+.3f}); tail monotone in p: {mono}")


def test_criterion_08_conditioned_walk_rayleigh():
    bg = M.binary_gaussian()
    rng = np.random.default_rng(8)
    u = np.round(np.arange(0.0, 12.0 + 1e-9, 0.1), 10)
    table = W.estimate_renewal(bg, u, 20000, 2**18, rng)
    n, paths = 10**4, 10**4
    s = W.conditioned_endpoints(bg, table, 0.0, n, rng, paths)
    # the h-transform tilts the endpoint by h_0(S_n); undo it to condition on {min >= 0} up to n
    w = 1.0 / table.h(s)
    ks = weighted_ks(s / math.sqrt(bg.sigma2 * n), w, MD.rayleigh_cdf)
    ess = w.sum() ** 2 / np.sum(w**2)
    verdict(8, ks < 0.05, f"weighted KS vs Rayleigh {ks:.4f} (<0.05), n={n}, paths={paths}, ESS {ess:.0f}")


def test_criterion_09_negative_control(identity_report):
    rep, _ = identity_report
    s = rep.stat("negative_control_detected")
    caught = [x.name for x in rep.statistics if x.name.startswith("negative_control:") and not within_k_se(x)]
    verdict(9, bool(s.passed) and len(caught) > 0, f"corrupted h0(0)=2 flagged by {caught}")


def test_criterion_10_determinism(tmp_path):
    runs = {
        "theorem-a": {"sim": {"max_gen": 12, "replicates": 40}, "experiment": {"n_values": [8, 10, 12]}},
        "overlap": {"sim": {"max_gen": 10, "replicates": 40}, "experiment": {"n_values": [6, 8, 10]}},
        "prop-exp": {"sim": {"max_gen": 12, "replicates": 40}},
        "meander-fdd": {"sim": {"max_gen": 10, "replicates": 40}},
        "first-order": {"sim": {"max_gen": 12, "replicates": 40}, "experiment": {"betas": [0.5, 0.7]}},
    }
    mismatched = []
    for cmd, body in runs.items():
        cfg = tmp_path / f"{cmd}.yaml"
        cfg.write_text(yaml.safe_dump(body))
        outs = []
        for i, threads in enumerate((1, 8, 1)):
            d = tmp_path / f"{cmd}_{i}"
            main([cmd, "--config", str(cfg), "--seed", "12345", "--out", str(d), "--threads", str(threads)])
            outs.append({p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))})
        if not (outs[0] and outs[0] == outs[1] == outs[2]):
            mismatched.append(cmd)
    verdict(10, not mismatched, f"byte-identical CSVs at 1/8/1 threads for {list(runs)}; mismatched {mismatched}")
