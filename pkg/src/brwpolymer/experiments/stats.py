"""Small statistics helpers shared by the experiment runners."""

from __future__ import annotations

import math

import numpy as np
from scipy import stats as _st


def mean_se(x) -> tuple:
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return (float(x.mean()) if len(x) else math.nan), math.inf
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


def bootstrap_median_se(x, rng: np.random.Generator, resamples: int = 2000) -> float:
    """Bootstrap standard error of the sample median."""
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return math.inf
    idx = rng.integers(0, len(x), size=(resamples, len(x)))
    return float(np.median(x[idx], axis=1).std(ddof=1))


def weighted_ecdf(x, w, at) -> np.ndarray:
    """Weighted empirical CDF of ``x`` evaluated at the points ``at``."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    order = np.argsort(x, kind="stable")
    cw = np.concatenate([[0.0], np.cumsum(w[order])])
    cw /= cw[-1]
    return cw[np.searchsorted(x[order], np.asarray(at, dtype=float), side="right")]


def weighted_ks(x, w, cdf) -> float:
    """sup |F_w - F| for a weighted sample against a continuous CDF."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    cw = np.cumsum(w[order])
    cw /= cw[-1]
    below = np.concatenate([[0.0], cw[:-1]])
    f = np.asarray(cdf(xs), dtype=float)
    return float(max(np.max(np.abs(cw - f)), np.max(np.abs(below - f))))


def ks_two_sample(a, b) -> float:
    return float(_st.ks_2samp(a, b).statistic)


def chi2_pvalue(observed, expected_prob) -> float:
    """Pearson chi-square goodness of fit; cells with zero probability must be empty."""
    obs = np.asarray(observed, dtype=float)
    p = np.asarray(expected_prob, dtype=float)
    keep = p > 0
    if np.any(obs[~keep] > 0):
        return 0.0
    if keep.sum() < 2:
        return 1.0
    exp = p[keep] / p[keep].sum() * obs.sum()
    return float(_st.chisquare(obs[keep], exp).pvalue)


def bonferroni_z(tests: int, family_level: float = 0.01) -> float:
    """Two-sided normal threshold for ``tests`` comparisons at a family-wise level."""
    return float(_st.norm.isf(family_level / (2 * max(tests, 1))))
