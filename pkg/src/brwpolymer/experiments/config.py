"""Experiment configuration: model, simulation and per-experiment blocks."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from .. import model as _model


class ConfigError(ValueError):
    pass


@dataclass
class SimConfig:
    max_gen: int
    replicates: int
    seed: int
    barrier_alpha: Optional[float] = None
    max_particles: int = 2**24

    def __post_init__(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or not 0 <= self.seed < 2**64:
            raise ConfigError(f"sim.seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if self.max_gen < 0 or self.replicates < 1 or self.max_particles < 1:
            raise ConfigError("sim.max_gen >= 0, sim.replicates >= 1 and sim.max_particles >= 1 required")


@dataclass
class ExperimentConfig:
    name: str
    model: dict
    sim: SimConfig
    experiment: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"name": self.name, "model": self.model, "sim": asdict(self.sim), "experiment": self.experiment}

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"), default=_jsonable)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def build_model(self) -> _model.BoundaryModel:
        return build_model(self.model)


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    raise TypeError(f"not serialisable: {x!r}")


def build_model(block: dict) -> _model.BoundaryModel:
    """Model from its config block; ``family: lattice_toy`` gives the test lattice model."""
    block = dict(block)
    if block.get("family") == "lattice_toy":
        if len(block) > 1:
            raise ConfigError("lattice_toy takes no parameters")
        return _model.lattice_toy_model()
    try:
        return _model.model_from_config(block)
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"bad model block {block}: {exc}") from exc


_SIM = {"max_gen": 20, "replicates": 200, "seed": 1, "barrier_alpha": None, "max_particles": 2**24}
_BG = {"family": "binary_gaussian"}
_RENEWAL = {"u_max": 12.0, "u_step": 0.1, "walks": 20000, "horizon": 2**18}

# Tolerances of the trend checks come from pilot runs (see configs/README.md).
DEFAULTS = {
    "simulate": {
        "model": _BG,
        "sim": {**_SIM, "max_gen": 12, "replicates": 20},
        "experiment": {"betas": [0.5, 1.0], "alpha": None},
    },
    "theorem-a": {
        "model": _BG,
        "sim": _SIM,
        "experiment": {"n_values": [12, 16, 20], "tolerance": 0.35, "trend": True},
    },
    "first-order": {
        "model": _BG,
        "sim": _SIM,
        "experiment": {"betas": [0.5, 0.6, 0.7, 0.75], "C": [1.0], "identity_tolerance": 1e-10, "chain_C": 50.0},
    },
    "meander-fdd": {
        "model": _BG,
        "sim": _SIM,
        "experiment": {
            "t_grid": [0.25, 0.5, 0.75, 1.0],
            "x_max": 5.0,
            "x_step": 0.02,
            "endpoint_tolerance": 0.15,
            "product_t": [0.5, 1.0],
        },
    },
    "overlap": {
        "model": _BG,
        "sim": {**_SIM, "max_gen": 16},
        "experiment": {"n_values": [8, 12, 16], "deltas": [0.0, 0.25, 0.5, 0.75, 1.0], "trend_delta": 0.5},
    },
    "prop-exp": {
        "model": _BG,
        "sim": _SIM,
        "experiment": {"C": 1.0, "p_values": [2.0, 4.0], "tolerance": 0.30},
    },
    "renewal": {
        "model": _BG,
        "sim": {**_SIM, "max_gen": 0, "replicates": 1},
        "experiment": {**_RENEWAL, "k_se": 3.0},
    },
    "spine-check": {
        "model": _BG,
        "sim": {**_SIM, "max_gen": 0, "replicates": 1},
        "experiment": {
            "alpha": 2.0,
            "n": 10,
            "draws": 10000,
            "method": "config",
            "batch": 64,
            "ks_tolerance": 0.03,
            "beta": 0.5,
            "beta_n": 4,
            "beta_draws": 20000,
            "posterior_depth": 4,
            "posterior_draws": 4000,
            "renewal": _RENEWAL,
        },
    },
    "identities": {
        "model": _BG,
        "sim": {**_SIM, "max_gen": 0, "replicates": 1},
        "experiment": {
            "many_to_one_n": [3, 6, 9],
            "many_to_one_samples": 100000,
            "harmonic_u": [0.5, 1.0, 2.0, 5.0],
            "harmonic_samples": 400000,
            "spine_n": 10,
            "alpha": 2.0,
            "spine_draws": 20000,
            "martingale_n": 8,
            "martingale_betas": [0.5, 1.0],
            "martingale_trees": 20000,
            "posterior_depth": 4,
            "posterior_draws": 4000,
            "family_level": 0.01,
            "negative_control": True,
            "renewal": _RENEWAL,
        },
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def read_config_file(path) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def load_config(name: str, path=None, seed: Optional[int] = None) -> ExperimentConfig:
    """Defaults for experiment ``name``, overlaid by the file at ``path`` and ``seed``.

    A file replaces the model block wholesale (families take different
    parameters) and overlays the sim and experiment blocks key by key.
    """
    if name not in DEFAULTS:
        raise ConfigError(f"unknown experiment {name!r}")
    base = copy.deepcopy(DEFAULTS[name])
    if path is not None:
        try:
            user = read_config_file(path)
        except (OSError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        unknown = set(user) - {"model", "sim", "experiment"}
        if unknown:
            raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
        if "model" in user:
            base["model"] = user["model"]
        for blk in ("sim", "experiment"):
            if blk in user:
                extra = set(user[blk]) - set(base[blk])
                if extra:
                    raise ConfigError(f"unknown {blk} keys {sorted(extra)}")
                base[blk] = _merge(base[blk], user[blk])
    if seed is not None:
        base["sim"]["seed"] = seed
    if "family" not in base["model"]:
        raise ConfigError("model block needs a family")
    try:
        sim = SimConfig(**base["sim"])
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    cfg = ExperimentConfig(name, base["model"], sim, base["experiment"])
    try:
        cfg.build_model()
    except (_model.NoSolution, _model.Unbounded, ValueError) as exc:
        raise ConfigError(f"model block rejected: {exc}") from exc
    return cfg
