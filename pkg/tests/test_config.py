import math

import pytest

from tagdiff.config import ConfigError, RunConfig, parse_config, parse_modes


def test_empty_config_takes_defaults():
    cfg = parse_config("")
    assert cfg.echo() == RunConfig().echo()
    assert cfg.gas_config().N == 500
    assert cfg.pruning_profile().A == 2


def test_alpha_replaces_eps():
    cfg = parse_config("[gas]\nN = 400\nalpha = 4\n")
    assert cfg.gas_config().eps == pytest.approx(0.01)
    assert cfg.alpha == pytest.approx(4.0)


@pytest.mark.parametrize("text, key", [
    ("[gas]\neps = 0.6\n", "gas.eps"),
    ("[pruning]\nA = 1\n", "pruning.A"),
    ("[gas]\nspeed = 3\n", "gas.speed"),
    ("[nonsense]\nx = 1\n", "[nonsense]"),
    ("[gas]\nN = many\n", "gas.N"),
    ("[rho0]\nmodes = 1:0.5\n", "rho0.modes"),
    ("[tightness]\netas = 0.1, 0.2\n", "tightness.etas"),
])
def test_invalid_values_name_the_key(text, key):
    with pytest.raises(ConfigError, match=key.replace("[", r"\[").replace("]", r"\]")):
        parse_config(text)


def test_echo_round_trip():
    cfg = parse_config("[gas]\nN = 300\neps = 0.01\n[md]\ntimes = 0.5, 1.5\n"
                       "[rho0]\nmodes = 1,0:0.3; 0,2:0.1\n[run]\nseed = 9\n")
    again = parse_config(cfg.echo())
    assert again.echo() == cfg.echo()      # NaN defaults defeat dataclass equality
    assert again.md.times == (0.5, 1.5)


def test_parse_modes():
    assert parse_modes("1,0:0.5; 0,1:0.25", 2) == (((1, 0), 0.5), ((0, 1), 0.25))
    with pytest.raises(ConfigError):
        parse_modes("1,0,0:0.5", 2)


def test_seed_override():
    cfg = parse_config("[gas]\nseed = 4\n")
    assert cfg.seed == 4
    assert cfg.with_seed(11).seed == 11
    assert not math.isnan(cfg.v_max)
