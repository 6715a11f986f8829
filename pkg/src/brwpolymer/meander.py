"""Brownian meander reference laws: marginals, exponential moments, sampler."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import erf, log_ndtr, ndtr

SQRT_2PI = math.sqrt(2 * math.pi)


class DomainError(ValueError):
    pass


def meander_density(t: float, x):
    """Density of R_t: x t^{-3/2} e^{-x^2/2t} erf(x / sqrt(2(1-t)))."""
    x = np.asarray(x, dtype=float)
    if t == 1.0:
        return np.where(x >= 0, x * np.exp(-0.5 * x**2), 0.0)
    return np.where(
        x >= 0, x * t**-1.5 * np.exp(-0.5 * x**2 / t) * erf(x / math.sqrt(2 * (1 - t))), 0.0
    )


def meander_marginal_cdf(t: float, x: float) -> float:
    """P(R_t <= x) for the standard Brownian meander on [0, 1]."""
    if not 0 < t <= 1:
        raise DomainError(f"t={t} outside (0, 1]")
    if x < 0 or math.isnan(x):
        raise DomainError(f"x={x} must be >= 0")
    if t == 1.0:
        return -math.expm1(-0.5 * x * x)
    if math.isinf(x):
        return 1.0
    # the mass sits within a few sqrt(t) of 0; split there for quad
    s = math.sqrt(t)
    hi = min(x, 12 * s)
    val = 0.0
    lo = 0.0
    for b in (s, 3 * s, 6 * s, hi):
        b = min(b, hi)
        if b > lo:
            v, _ = integrate.quad(lambda y: float(meander_density(t, y)), lo, b, epsabs=1e-13, epsrel=1e-12)
            val += v
            lo = b
    return min(val, 1.0)


def rayleigh_cdf(x):
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, -np.expm1(-0.5 * x**2), 0.0)


def maxwell_cdf(x):
    """Law of a Bessel-3 process (norm of 3-d Brownian motion) at time 1."""
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, erf(x / math.sqrt(2)) - math.sqrt(2 / math.pi) * x * np.exp(-0.5 * x**2), 0.0)


def log_meander_exp_moment(a: float) -> float:
    """log E[e^{a R_1}] = log(1 + a sqrt(2 pi) e^{a^2/2} Phi(a))."""
    if a < 0:
        raise DomainError("a must be >= 0")
    if a == 0:
        return 0.0
    return float(np.logaddexp(0.0, math.log(a * SQRT_2PI) + 0.5 * a * a + log_ndtr(a)))


def meander_exp_moment(a: float) -> float:
    """E[e^{a R_1}] where R_1 is Rayleigh distributed."""
    if a < 0:
        raise DomainError("a must be >= 0")
    if a < 30:
        return 1.0 + a * SQRT_2PI * math.exp(0.5 * a * a) * float(ndtr(a))
    lg = log_meander_exp_moment(a)
    return math.exp(lg) if lg < 709.0 else math.inf


def constants_chain(C: float, sigma2: float) -> float:
    """e^{-C s2/2} sqrt(2/(pi s2 C)) E[e^{sigma sqrt(C) R_1}], which tends to 2 as C grows.

    Evaluated in log space. Note the 1/sqrt(C): without it the expression
    grows like 2 sqrt(C).
    """
    sigma = math.sqrt(sigma2)
    log_f = (
        -0.5 * C * sigma2
        + 0.5 * math.log(2 / (math.pi * sigma2 * C))
        + log_meander_exp_moment(sigma * math.sqrt(C))
    )
    return math.exp(log_f)


def constants_chain_closed(C: float, sigma2: float) -> float:
    """The same quantity as 2 Phi(sigma sqrt C) + sqrt(2/(pi s2 C)) e^{-s2 C/2}."""
    a = math.sqrt(sigma2 * C)
    return 2 * float(ndtr(a)) + math.sqrt(2 / (math.pi * sigma2 * C)) * math.exp(-0.5 * a * a)


@dataclass
class MeanderSample:
    t_grid: np.ndarray
    values: np.ndarray  # (batch, len(t_grid)), Bessel-3 values
    raw_weight: np.ndarray  # sqrt(pi/2) / R_1, mean 1 in expectation
    weight: np.ndarray  # self-normalised to average 1 over the batch
    path: np.ndarray = None  # optional full path on the fine grid

    @property
    def ess(self) -> float:
        w = self.weight
        return float(w.sum() ** 2 / np.sum(w**2))


def sample_meander(
    t_grid,
    rng: np.random.Generator,
    batch: int,
    steps: int = 2**10,
    keep_path: bool = False,
) -> MeanderSample:
    """Weighted Bessel-3 paths whose weighted law is the Brownian meander.

    The norm of a 3-d Brownian motion is sampled at ``t_grid`` and t = 1;
    reweighting by 1/R_1 turns its law into the meander's. Increments are
    exact Gaussians, so marginals do not depend on ``steps``; the fine
    uniform grid of ``steps`` steps is only used when ``keep_path`` is set.
    """
    t = np.asarray(t_grid, dtype=float)
    if np.any(t <= 0) or np.any(t > 1) or np.any(np.diff(t) <= 0):
        raise DomainError("t_grid must be ascending in (0, 1]")
    coarse = np.union1d(t, [1.0])
    times = np.union1d(np.linspace(0, 1, steps + 1)[1:], coarse) if keep_path else coarse
    dt = np.diff(np.concatenate([[0.0], times]))
    pos = np.zeros((batch, 3))
    idx = np.searchsorted(times, t)
    want = np.zeros(len(times), bool)
    want[idx] = True
    vals = []
    path = np.empty((batch, len(times))) if keep_path else None
    for j, d in enumerate(dt):
        pos += math.sqrt(d) * rng.standard_normal((batch, 3))
        r = np.sqrt(np.einsum("ij,ij->i", pos, pos))
        if keep_path:
            path[:, j] = r
        if want[j]:
            vals.append(r)
    r1 = r
    raw = math.sqrt(math.pi / 2) / r1
    w = raw / raw.mean()
    return MeanderSample(t, np.column_stack(vals), raw, w, path)
