import os

import pytest

from golf.config import RunConfig, format_config, parse_config, read_config
from golf.errors import ConfigError


def test_parse_basic():
    cfg = parse_config("""
        # comment
        data = d.csv   # trailing comment
        iterations = 50
        d = none
        kron = 2, 3
        family_x = Exponential
        shared_kernel = yes
        sim_gamma_x = inverse_index
        sim_gamma_s = 0.5, 0.25
    """, base_dir="/base")
    assert cfg.iterations == 50 and cfg.d is None and cfg.kron == (2, 3)
    assert cfg.family_x == "exponential" and cfg.shared_kernel is True
    assert cfg.sim_gamma_x == "inverse_index" and cfg.sim_gamma_s == (0.5, 0.25)
    assert cfg.path("data") == "/base/d.csv"
    assert cfg.path("truth") is None


@pytest.mark.parametrize("text, msg", [
    ("iteratons = 5", "cfg:1: unknown key 'iteratons'"),
    ("seed = 1\nseed = 2", "cfg:2: duplicate key 'seed'"),
    ("just text", "cfg:1: expected 'key = value'"),
    ("iterations = many", "cfg:1: bad value for 'iterations'"),
    ("shared_kernel = maybe", "not a boolean"),
    ("mean = quadratic", "expected one of"),
    ("burn_in = nan", "NaN"),
])
def test_rejections(text, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config(text, source="cfg")


def test_invalid_sampler_values_surface_as_config_errors():
    with pytest.raises(ConfigError):
        parse_config("burn_in = 1.5").mcmc()
    with pytest.raises(ConfigError):
        parse_config("sim_missing_fraction = 0").sim_spec()


def test_round_trip():
    cfg = parse_config("data = x/d.csv\niterations = 7\nprior_c3 = 0.3\nkron = 2,2\nlevel = 0.9\n"
                       "sim_gamma_s = 0.1, 0.2\nsim_factor_var = 1.5", base_dir="/b")
    again = parse_config(format_config(cfg), base_dir="/b")
    assert vars(again) == vars(cfg)
    assert parse_config(format_config(RunConfig())) == RunConfig()


def test_read_config_relative_paths(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("data = data.csv\n")
    assert read_config(p).path("data") == os.path.join(str(tmp_path), "data.csv")
    with pytest.raises(ConfigError, match="cannot read"):
        read_config(tmp_path / "missing.cfg")


def test_mcmc_and_prior_views():
    cfg = parse_config("iterations = 12\nd = 3\nprior_decay = -0.5\nbeta0_shape = 2")
    m = cfg.mcmc()
    assert (m.iterations, m.d) == (12, 3)
    p = cfg.prior()
    assert p.decay_coef == -0.5 and p.beta0_shape == 2.0
