import json
import math
from pathlib import Path

import numpy as np
import pytest
import yaml

from brwpolymer.experiments import DEFAULTS, ConfigError, load_config, run_overlap, run_prop_exp, run_theorem_a
from brwpolymer.experiments import runners as R
from brwpolymer.experiments import stats as ST
from brwpolymer.experiments.cli import main


def _cfg(tmp_path, body, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(body))
    return str(p)


def test_defaults_load():
    for name in DEFAULTS:
        cfg = load_config(name)
        assert cfg.sim.seed == 1 and len(cfg.config_hash) == 16


def test_seed_override_changes_hash():
    assert load_config("overlap").config_hash != load_config("overlap", seed=2).config_hash


@pytest.mark.parametrize(
    "body",
    [
        {"sim": {"seed": -1}},
        {"sim": {"nonsense": 1}},
        {"model": {"family": "binary_gaussian", "children": 1}},
        {"model": {"s2": 1.0}},
        {"extra": {}},
    ],
)
def test_bad_configs(tmp_path, body):
    with pytest.raises(ConfigError):
        load_config("theorem-a", _cfg(tmp_path, body))


def test_json_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"sim": {"replicates": 3}}))
    assert load_config("overlap", str(p)).sim.replicates == 3


def test_cli_exit_codes(tmp_path):
    assert main(["theorem-a", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path)]) == 2
    assert main(["no-such-command"]) == 2
    assert main(["theorem-a", "--threads", "0"]) == 2
    small = _cfg(tmp_path, {"sim": {"max_gen": 4, "replicates": 5}, "experiment": {"n_values": [2, 5]}})
    assert main(["theorem-a", "--config", small, "--out", str(tmp_path)]) == 2  # n beyond max_gen


def test_theorem_a_degenerate_n1(tmp_path):
    cfg = load_config("theorem-a", _cfg(tmp_path, {"sim": {"max_gen": 1, "replicates": 10}, "experiment": {"n_values": [1]}}))
    rep = run_theorem_a(cfg)
    s = rep.stat("median_ratio_n1")
    assert s.passed is None and math.isfinite(s.estimate)
    assert rep.all_pass


def test_theorem_a_target():
    assert R.theorem_a_target(2 * math.log(2)) == pytest.approx(0.67766, abs=1e-5)


def test_prop_exp_C0_is_one(tmp_path):
    cfg = load_config("prop-exp", _cfg(tmp_path, {"sim": {"max_gen": 6, "replicates": 10}, "experiment": {"C": 0.0}}))
    rep = run_prop_exp(cfg)
    assert rep.stat("median_statistic_C0").estimate == pytest.approx(1.0, abs=1e-14)
    assert rep.stat("tail_monotone_in_p").passed


def test_overlap_delta0_is_one(tmp_path):
    cfg = load_config("overlap", _cfg(tmp_path, {"sim": {"max_gen": 6, "replicates": 10}, "experiment": {"n_values": [4, 6]}}))
    rep = run_overlap(cfg)
    assert rep.stat("median_pair_mass_n6_delta0").estimate == pytest.approx(1.0, abs=1e-14)


def test_first_order_budget(tmp_path):
    cfg = load_config("first-order", _cfg(tmp_path, {"sim": {"max_gen": 10}, "experiment": {"betas": [0.8]}}))
    with pytest.raises(R.BudgetExceeded):
        R.run_first_order(cfg)


def test_first_order_identity(tmp_path):
    cfg = load_config("first-order", _cfg(tmp_path, {"sim": {"max_gen": 12, "replicates": 10}, "experiment": {"betas": [0.5, 0.7]}}))
    rep = R.run_first_order(cfg)
    assert rep.stat("two_way_identity_max_rel_diff").passed
    assert rep.stat("constants_chain_C50").passed


def test_meander_fdd_constant_functional(tmp_path):
    body = {"sim": {"max_gen": 6, "replicates": 8}, "experiment": {"x_max": 60.0, "x_step": 0.5}}
    cfg = load_config("meander-fdd", _cfg(tmp_path, body))
    rep = R.run_meander_fdd(cfg)
    cols, rows = rep.tables["cdf"]
    # F = 1 everywhere at the top of the grid: estimate exactly 1
    top = [r for r in rows if r[1] == max(x[1] for x in rows)]
    assert all(r[2] == pytest.approx(1.0) for r in top)


def test_determinism_across_threads(tmp_path):
    body = {"sim": {"max_gen": 8, "replicates": 12}, "experiment": {"n_values": [4, 8]}}
    c = _cfg(tmp_path, body)
    outs = []
    for threads in (1, 8, 1):
        d = tmp_path / f"out{threads}_{len(outs)}"
        main(["theorem-a", "--config", c, "--out", str(d), "--threads", str(threads)])
        outs.append({p.name: p.read_bytes() for p in d.glob("*.csv")})
    assert outs[0] == outs[1] == outs[2] and outs[0]


def test_survival_selection_thread_independent(tmp_path):
    body = {"model": {"family": "poisson_gaussian", "s2": 0.6}, "sim": {"max_gen": 6, "replicates": 15}, "experiment": {"n_values": [6]}}
    cfg = load_config("theorem-a", _cfg(tmp_path, body))
    a = R.surviving_replicates(cfg, lambda f: f.leaves.position.sum(), threads=1)
    b = R.surviving_replicates(cfg, lambda f: f.leaves.position.sum(), threads=4)
    assert a == b and len(a) == 15


def test_jsonl_format(tmp_path):
    c = _cfg(tmp_path, {"sim": {"max_gen": 4, "replicates": 4}, "experiment": {"n_values": [4]}})
    main(["theorem-a", "--config", c, "--out", str(tmp_path / "o"), "--format", "jsonl"])
    lines = (tmp_path / "o" / "theorem_a_statistics.jsonl").read_text().splitlines()
    assert json.loads(lines[0])["statistic"] == "median_ratio_n4"
    meta = json.loads((tmp_path / "o" / "theorem_a_run.jsonl").read_text().splitlines()[-1])
    assert set(meta) >= {"config_hash", "seed", "version", "wall_clock"}


def test_every_statistic_has_se(tmp_path):
    cfg = load_config("prop-exp", _cfg(tmp_path, {"sim": {"max_gen": 6, "replicates": 10}}))
    for s in run_prop_exp(cfg).statistics:
        assert s.standard_error is not None and not math.isnan(s.standard_error)


def test_weighted_ks_and_ecdf():
    x = np.array([0.0, 1.0, 2.0])
    w = np.array([1.0, 1.0, 2.0])
    assert list(ST.weighted_ecdf(x, w, [-1, 0, 1.5, 3])) == [0.0, 0.25, 0.5, 1.0]
    u = np.random.default_rng(0).random(20000)
    assert ST.weighted_ks(u, np.ones_like(u), lambda t: np.clip(t, 0, 1)) < 0.02


def test_bonferroni_grows():
    assert ST.bonferroni_z(1) < ST.bonferroni_z(10) < ST.bonferroni_z(100)


def test_chi2_zero_cells():
    assert ST.chi2_pvalue([5, 0], [1.0, 0.0]) == 1.0
    assert ST.chi2_pvalue([5, 1], [1.0, 0.0]) == 0.0


def test_skip_free_detection(toy, bg):
    assert R.skip_free_lattice(toy) and not R.skip_free_lattice(bg)


def test_shipped_configs_match_defaults():
    root = Path(__file__).resolve().parent.parent / "configs"
    for name, cfg in DEFAULTS.items():
        path = root / f"{name.replace('-', '_')}.yaml"
        assert yaml.safe_load(path.read_text()) == cfg, name
        assert load_config(name, path).config_hash == load_config(name).config_hash
