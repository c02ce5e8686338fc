import numpy as np
import pytest

from kylebridge.config import (ConfigError, parse_config, load_config,
                               DEFAULT_CONFIG)


def test_defaults_from_empty_text():
    cfg = parse_config("")
    assert cfg.kernel["family"] == "brownian"
    assert cfg.kernel["ell"] == float("-inf")
    assert cfg.grid["nodes"] == 1601
    assert cfg.solver["eps"] is None        # commands demand it at use time
    assert cfg.solver["tol"] == 1e-10
    assert cfg.sim["tag"] == "reference"
    assert cfg.sim["snapshot_times"] == [0.25, 0.5, 0.75]
    assert cfg.sim["store_paths"] is False
    assert cfg.sweep["paths"] == 0
    assert cfg.output["dir"] == "out"
    assert cfg.section("grid") is cfg.grid


def test_default_config_round_trips():
    cfg = parse_config(DEFAULT_CONFIG)
    assert cfg.kernel["family"] == "brownian"
    ref = parse_config("")
    for sec in ("kernel", "grid", "solver", "sim", "sweep", "output"):
        assert cfg.section(sec) == ref.section(sec), sec


def test_value_parsing():
    cfg = parse_config("""
[solver]
eps = 0.5
eps_list = 1.0, 0.5, 0.25   # trailing comment
max_iter = 500

[kernel]
family = killed
ell = -1.0
z0 = 0.5

[sim]
store_paths = yes
dump_paths = off
seed = 42
snapshot_times = 0.1, 0.9
""")
    assert cfg.solver["eps"] == 0.5
    assert cfg.solver["eps_list"] == [1.0, 0.5, 0.25]
    assert cfg.solver["max_iter"] == 500
    assert cfg.kernel["ell"] == -1.0
    assert cfg.sim["store_paths"] is True
    assert cfg.sim["dump_paths"] is False
    assert cfg.sim["seed"] == 42
    assert cfg.sim["snapshot_times"] == [0.1, 0.9]


def test_unknown_section_names_the_line():
    with pytest.raises(ConfigError, match=r"<config>:2: unknown section"):
        parse_config("\n[solvers]\neps = 0.5\n")


def test_unknown_key_names_key_and_line():
    with pytest.raises(ConfigError, match=r"conf.cfg:3: unknown key 'epz'"):
        parse_config("\n[solver]\nepz = 0.5\n", name="conf.cfg")


def test_key_outside_section():
    with pytest.raises(ConfigError, match=r":1: key outside"):
        parse_config("eps = 0.5\n[solver]\n")


def test_missing_equals_sign():
    with pytest.raises(ConfigError, match=r":2: expected 'key = value'"):
        parse_config("[solver]\neps 0.5\n")


def test_bad_values_name_the_key():
    with pytest.raises(ConfigError, match=r"solver\.eps"):
        parse_config("[solver]\neps = lots\n")
    with pytest.raises(ConfigError, match=r"integer"):
        parse_config("[grid]\nnodes = 12.5\n")
    with pytest.raises(ConfigError, match=r"boolean"):
        parse_config("[sim]\nstore_paths = maybe\n")
    with pytest.raises(ConfigError, match=r"empty list"):
        parse_config("[solver]\neps_list = ,\n")


def test_validation_rules():
    with pytest.raises(ConfigError, match="family"):
        parse_config("[kernel]\nfamily = heat\n")
    with pytest.raises(ConfigError, match="finite ell"):
        parse_config("[kernel]\nfamily = killed\n")
    with pytest.raises(ConfigError, match="above ell"):
        parse_config("[kernel]\nfamily = killed\nell = 0.0\nz0 = -1.0\n")
    with pytest.raises(ConfigError, match="sigma"):
        parse_config("[kernel]\nsigma = 0.0\n")
    with pytest.raises(ConfigError, match="nodes"):
        parse_config("[grid]\nnodes = 4\n")
    with pytest.raises(ConfigError, match="eps must be positive"):
        parse_config("[solver]\neps = -0.5\n")
    with pytest.raises(ConfigError, match="decreasing"):
        parse_config("[solver]\neps_list = 0.5, 1.0\n")
    with pytest.raises(ConfigError, match="tag"):
        parse_config("[sim]\ntag = quantum\n")
    with pytest.raises(ConfigError, match="steps"):
        parse_config("[sim]\nsteps = 10\n")
    with pytest.raises(ConfigError, match="delta_sim"):
        parse_config("[sim]\ndelta_sim = 0.5\n")
    with pytest.raises(ConfigError, match="seed"):
        parse_config("[sim]\nseed = -3\n")


def test_config_error_is_value_error():
    assert issubclass(ConfigError, ValueError)


def test_load_config_uses_path_in_diagnostics(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("[solver]\neps = 0.5\n")
    cfg = load_config(p)
    assert cfg.solver["eps"] == 0.5
    p.write_text("[solver]\nepz = 0.5\n")
    with pytest.raises(ConfigError, match=r"run\.cfg:2"):
        load_config(p)
