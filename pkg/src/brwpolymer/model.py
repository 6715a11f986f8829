"""Offspring point-process laws normalised to the boundary case.

A model is an offspring count law together with an i.i.d. displacement law
for the children. The log-Laplace transform is

    phi(beta) = log E[sum_{|x|=1} exp(-beta V(x))]
              = log E[N] + log E[exp(-beta X)],

and the boundary case asks phi(1) = phi'(1) = 0 with E[N] > 1.
Only continuous displacement laws are supported as model families; the
discrete displacement law exists for exact-enumeration test scaffolding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp, ndtri

from . import rng as krng

LN2 = math.log(2.0)

FD_STEP_1 = 1e-5
FD_STEP_2 = 1e-4


class NoSolution(ValueError):
    """The requested family cannot be put in the boundary case."""


class Unbounded(ValueError):
    """phi is infinite on the whole neighbourhood of beta = 1."""


# ---------------------------------------------------------------- count laws


@dataclass(frozen=True)
class FixedCount:
    k: int

    @property
    def mean(self) -> float:
        return float(self.k)

    def sample(self, u: np.ndarray) -> np.ndarray:
        return np.full(np.shape(u), self.k, dtype=np.int64)

    def sample_size_biased(self, u: np.ndarray) -> np.ndarray:
        return self.sample(u)

    def pmf(self) -> np.ndarray:
        p = np.zeros(self.k + 1)
        p[self.k] = 1.0
        return p

    def extinction_probability(self, generations: int) -> float:
        return 1.0 if self.k == 0 else 0.0


def _poisson_cdf_table(lam: float) -> np.ndarray:
    kmax = int(lam + 12 * math.sqrt(lam) + 30)
    k = np.arange(kmax + 1)
    logp = -lam + k * math.log(lam) - np.array([math.lgamma(i + 1) for i in k])
    return np.cumsum(np.exp(logp))


@dataclass(frozen=True)
class PoissonCount:
    lam: float
    _cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_cdf", _poisson_cdf_table(self.lam))

    @property
    def mean(self) -> float:
        return self.lam

    def sample(self, u: np.ndarray) -> np.ndarray:
        k = np.searchsorted(self._cdf, u, side="right")
        return np.minimum(k, len(self._cdf) - 1).astype(np.int64)

    def sample_size_biased(self, u: np.ndarray) -> np.ndarray:
        # size-biased Poisson is 1 + Poisson
        return self.sample(u) + 1

    def pmf(self) -> np.ndarray:
        return np.diff(self._cdf, prepend=0.0)

    def extinction_probability(self, generations: int) -> float:
        q = 0.0
        for _ in range(generations):
            q = math.exp(self.lam * (q - 1.0))
        return q


@dataclass(frozen=True)
class DiscreteCount:
    probs: tuple

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(len(self.probs)), self.probs))

    def pmf(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)

    def sample(self, u: np.ndarray) -> np.ndarray:
        cdf = np.cumsum(self.pmf())
        return np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1).astype(np.int64)

    def sample_size_biased(self, u: np.ndarray) -> np.ndarray:
        p = self.pmf() * np.arange(len(self.probs))
        cdf = np.cumsum(p / p.sum())
        return np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1).astype(np.int64)

    def extinction_probability(self, generations: int) -> float:
        p = self.pmf()
        q = 0.0
        for _ in range(generations):
            q = float(np.polynomial.polynomial.polyval(q, p))
        return q


# --------------------------------------------------------- displacement laws


@dataclass(frozen=True)
class GaussianDisplacement:
    mean: float
    var: float

    def quantile(self, u: np.ndarray) -> np.ndarray:
        return self.mean + math.sqrt(self.var) * ndtri(u)

    def log_mgf(self, beta):
        """log E[exp(-beta X)]."""
        beta = np.asarray(beta, dtype=float)
        return -beta * self.mean + 0.5 * beta**2 * self.var

    def tilted(self, beta: float) -> "GaussianDisplacement":
        """Law of X under exp(-beta X) / E[exp(-beta X)]."""
        return GaussianDisplacement(self.mean - beta * self.var, self.var)

    @property
    def finite_support(self) -> bool:
        return False

    @property
    def variance(self) -> float:
        return self.var

    def cdf(self, x):
        from scipy.stats import norm

        return norm.cdf(x, loc=self.mean, scale=math.sqrt(self.var))


@dataclass(frozen=True)
class DiscreteDisplacement:
    support: tuple
    probs: tuple

    def __post_init__(self):
        if len(self.support) != len(self.probs):
            raise ValueError("support and probs differ in length")
        if np.any(np.asarray(self.probs) < 0) or abs(sum(self.probs) - 1.0) > 1e-12:
            raise ValueError("probs must be a probability vector")

    @property
    def mean(self) -> float:
        return float(np.dot(self.support, self.probs))

    @property
    def variance(self) -> float:
        x = np.asarray(self.support)
        return float(np.dot(x**2, self.probs) - self.mean**2)

    def quantile(self, u: np.ndarray) -> np.ndarray:
        cdf = np.cumsum(self.probs)
        idx = np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)
        return np.asarray(self.support, dtype=float)[idx]

    def log_mgf(self, beta):
        beta = np.asarray(beta, dtype=float)
        x = np.asarray(self.support, dtype=float)
        logp = np.log(np.asarray(self.probs, dtype=float))
        return logsumexp(logp - np.multiply.outer(beta, x), axis=-1)

    def tilted(self, beta: float) -> "DiscreteDisplacement":
        x = np.asarray(self.support, dtype=float)
        w = np.asarray(self.probs) * np.exp(-beta * x)
        return DiscreteDisplacement(self.support, tuple(w / w.sum()))

    @property
    def finite_support(self) -> bool:
        return True

    def cdf(self, x):
        s = np.asarray(self.support, dtype=float)
        p = np.asarray(self.probs)
        return np.sum(p * (s <= np.asarray(x)[..., None]), axis=-1)


# --------------------------------------------------------------------- model


@dataclass(frozen=True)
class BoundaryModel:
    """A branching random walk law in the boundary case.

    Attributes
    ----------
    family : str
        ``"binary_gaussian"``, ``"poisson_gaussian"`` or ``"custom"``.
    offspring : count law
        Law of the number of children.
    displacement : displacement law
        Law of each child's displacement from its parent (i.i.d.).
    log_laplace : callable, optional
        Overrides the closed-form phi (custom models with a pre-verified phi).
    domain : (float, float)
        Interval of beta on which phi is finite.
    """

    family: str
    offspring: object
    displacement: object
    log_laplace: Optional[Callable] = field(default=None, compare=False)
    domain: tuple = (-math.inf, math.inf)

    def phi(self, beta):
        if self.log_laplace is not None:
            return self.log_laplace(beta)
        return math.log(self.offspring.mean) + self.displacement.log_mgf(beta)

    def dphi(self, beta, h: float = FD_STEP_1):
        return (self.phi(beta + h) - self.phi(beta - h)) / (2 * h)

    def d2phi(self, beta, h: float = FD_STEP_2):
        return (self.phi(beta + h) - 2 * self.phi(beta) + self.phi(beta - h)) / h**2

    @property
    def sigma2(self) -> float:
        """E[sum V^2 e^{-V}], the variance of the many-to-one step."""
        if self.log_laplace is not None:
            return float(self.d2phi(1.0))
        step = self.step_law()
        return float(step.variance + step.mean**2)

    @property
    def mean_offspring(self) -> float:
        return self.offspring.mean

    def step_law(self):
        """Law of S_1: E f(S_1) = E sum f(V) e^{-V}, exact for i.i.d. displacements."""
        return self.displacement.tilted(1.0)

    def in_domain(self, beta: float) -> bool:
        return self.domain[0] < beta < self.domain[1]

    def offspring_from_keys(self, keys: np.ndarray):
        """Children of the particles carrying ``keys``.

        Returns ``(parent, displacement, child_keys)`` with ``parent`` indexing
        into ``keys``; children appear grouped by parent, in birth order.
        """
        keys = np.asarray(keys, dtype=np.uint64)
        counts = self.offspring.sample(krng.uniforms(keys, krng.STREAM_COUNT))
        parent = np.repeat(np.arange(len(keys)), counts)
        starts = np.cumsum(counts) - counts
        ranks = np.arange(len(parent)) - np.repeat(starts, counts)
        ck = krng.child_keys(keys[parent], ranks)
        disp = self.displacement.quantile(krng.uniforms(ck, krng.STREAM_DISPLACEMENT))
        return parent, disp, ck

    def to_config(self) -> dict:
        out = {"family": self.family}
        if self.family in ("binary_gaussian", "poisson_gaussian"):
            out["s2"] = self.displacement.var
        if self.family == "poisson_gaussian":
            out["poisson_mean"] = self.offspring.lam
        return out


def binary_gaussian(children: int = 2) -> BoundaryModel:
    """Deterministic ``children``-ary branching with N(2 ln b, 2 ln b) steps."""
    if children <= 1:
        raise NoSolution(f"mean offspring {children} <= 1: not supercritical")
    s2 = 2.0 * math.log(children)
    return BoundaryModel("binary_gaussian", FixedCount(children), GaussianDisplacement(s2, s2))


def poisson_gaussian(s2: float) -> BoundaryModel:
    """Poisson(e^{s2/2}) children with N(s2, s2) displacements."""
    if not s2 > 0:
        raise NoSolution(f"s2 must be positive, got {s2}")
    return BoundaryModel(
        "poisson_gaussian", PoissonCount(math.exp(s2 / 2)), GaussianDisplacement(s2, s2)
    )


def normalize_boundary(family, **params) -> BoundaryModel:
    """Return the boundary-case model for ``family``.

    ``binary_gaussian`` accepts the raw displacement law (``mean``, ``s2``)
    and optional ``children``; the raw walk is mapped to the boundary case by
    the affine change V -> t V + phi_raw(t) with t phi_raw'(t) = phi_raw(t),
    which leaves displacement variance 2 ln(children).

    ``poisson_gaussian`` is parametrised by the boundary variance ``s2`` or
    equivalently the offspring mean ``poisson_mean`` = exp(s2 / 2).

    ``custom`` takes ``offspring`` and ``displacement`` laws (and optionally
    ``log_laplace``, ``domain``); it is checked, never solved for.

    Passing an existing :class:`BoundaryModel` returns it unchanged.
    """
    if isinstance(family, BoundaryModel):
        _verify(family)
        return family
    if family == "binary_gaussian":
        children = int(params.pop("children", 2))
        mean = params.pop("mean", None)
        s2 = params.pop("s2", None)
        _no_extra(params)
        if children <= 1:
            raise NoSolution(f"mean offspring {children} <= 1: not supercritical")
        if s2 is not None and not s2 > 0:
            raise NoSolution(f"s2 must be positive, got {s2}")
        # every raw Gaussian law maps to the same boundary model
        return binary_gaussian(children)
    if family == "poisson_gaussian":
        s2 = params.pop("s2", None)
        lam = params.pop("poisson_mean", None)
        _no_extra(params)
        if lam is not None:
            if not lam > 1:
                raise NoSolution(f"poisson_mean {lam} <= 1: not supercritical")
            s2_from_lam = 2.0 * math.log(lam)
            if s2 is not None and not math.isclose(s2, s2_from_lam, rel_tol=1e-12):
                raise NoSolution(
                    f"s2={s2} and poisson_mean={lam} cannot both hold (need s2 = 2 ln mean)"
                )
            s2 = s2_from_lam
        if s2 is None:
            raise NoSolution("poisson_gaussian needs s2 or poisson_mean")
        return poisson_gaussian(float(s2))
    if family == "custom":
        model = BoundaryModel(
            "custom",
            params.pop("offspring"),
            params.pop("displacement"),
            params.pop("log_laplace", None),
            tuple(params.pop("domain", (-math.inf, math.inf))),
        )
        _no_extra(params)
        _verify(model)
        return model
    raise ValueError(f"unknown model family {family!r}")


def _no_extra(params):
    if params:
        raise ValueError(f"unexpected model parameters {sorted(params)}")


def _verify(model: BoundaryModel) -> None:
    if model.mean_offspring <= 1:
        raise NoSolution(f"mean offspring {model.mean_offspring} <= 1")
    grid = 1.0 + np.array([-0.5, -0.1, -1e-3, 0.0, 1e-3, 0.1])
    vals = np.array([model.phi(b) for b in grid], dtype=float)
    if not np.any(np.isfinite(vals)):
        raise Unbounded("phi is infinite around beta = 1")
    if not (abs(model.phi(1.0)) < 1e-10 and abs(model.dphi(1.0)) < 1e-8):
        raise NoSolution(
            f"not in the boundary case: phi(1)={model.phi(1.0):.3g}, phi'(1)={model.dphi(1.0):.3g}"
        )


def model_from_config(block: dict) -> BoundaryModel:
    """Build a model from the ``model`` config block (keys: family, s2, poisson_mean)."""
    block = dict(block)
    family = block.pop("family")
    return normalize_boundary(family, **block)


def lattice_toy_model() -> BoundaryModel:
    """Binary branching with displacements on {-1, 1, 2}, in the boundary case.

    Test scaffolding only: the walk S_n is skip-free downwards so its renewal
    function is exactly 1 + floor(u), and offspring configurations are finite.
    """
    x = np.array([-1.0, 1.0, 2.0])
    a = np.array([np.ones(3), 2 * np.exp(-x), x * np.exp(-x)])
    p = np.linalg.solve(a, np.array([1.0, 1.0, 0.0]))
    return BoundaryModel("custom", FixedCount(2), DiscreteDisplacement(tuple(x), tuple(p)))


# ------------------------------------------------------- integrability report


@dataclass
class MomentEstimate:
    name: str
    mean: float
    se: float
    max_share: float

    @property
    def ci(self) -> tuple:
        return (self.mean - 1.96 * self.se, self.mean + 1.96 * self.se)


@dataclass
class ConditionReport:
    samples: int
    eps0: float
    delta_minus: float
    moments: list
    flag: str  # "finite" or "inconclusive"

    def as_dict(self) -> dict:
        return {
            "samples": self.samples,
            "eps0": self.eps0,
            "delta_minus": self.delta_minus,
            "flag": self.flag,
            "moments": {
                m.name: {"mean": m.mean, "se": m.se, "max_share": m.max_share} for m in self.moments
            },
        }


def check_conditions(
    model: BoundaryModel,
    samples: int,
    rng: np.random.Generator,
    eps0: float = 0.1,
    delta_minus: float = 0.04,
    rel_se_max: float = 0.05,
    max_share_max: float = 0.01,
) -> ConditionReport:
    """Monte Carlo check of the integrability conditions on the first generation.

    Estimates E[X log+^2 X], E[Xt log+ Xt] and E[(sum e^{-(1-2 delta)V})^{1+2 eps}]
    where X = sum e^{-V}, Xt = sum max(V, 0) e^{-V}. A moment is called finite
    when its relative standard error is small and no single sample carries a
    large share of the sum (a heavy tail shows up as one dominating draw).
    This is advisory: finiteness cannot be decided from samples.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if not (0 < eps0 < 0.25 and 0 < delta_minus < eps0 / 2):
        raise ValueError("need 0 < eps0 < 1/4 and 0 < delta_minus < eps0/2")
    keys = rng.integers(0, 2**64, size=samples, dtype=np.uint64)
    parent, disp, _ = model.offspring_from_keys(keys)
    x = np.bincount(parent, np.exp(-disp), minlength=samples)
    xt = np.bincount(parent, np.maximum(disp, 0.0) * np.exp(-disp), minlength=samples)
    y = np.bincount(parent, np.exp(-(1 - 2 * delta_minus) * disp), minlength=samples)
    terms = {
        "X_log2X": x * np.log(np.maximum(x, 1.0)) ** 2,
        "Xt_logXt": xt * np.log(np.maximum(xt, 1.0)),
        "extra_moment": y ** (1 + 2 * eps0),
    }
    moments = []
    finite = samples >= 2
    for name, t in terms.items():
        mean = float(t.mean())
        se = float(t.std(ddof=1) / math.sqrt(samples)) if samples > 1 else math.inf
        total = float(t.sum())
        share = float(t.max() / total) if total > 0 else 0.0
        moments.append(MomentEstimate(name, mean, se, share))
        if total > 0 and not (se <= rel_se_max * mean and share <= max_share_max):
            finite = False
    return ConditionReport(samples, eps0, delta_minus, moments, "finite" if finite else "inconclusive")
