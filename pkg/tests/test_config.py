import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modeflux.config import (
    PRESETS,
    config_hash,
    load_preset,
    parse_config,
    preset_path,
    to_ini,
    with_overrides,
)
from modeflux.errors import ParseError, ValidationError

MINIMAL = """
[geometry]
profile = constant
d = 2.6
z_max = 100

[physics]
k = 6.283185307179586
sigma = 0.05
epsilon = 0.01
"""


def test_minimal_config_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.physics.corr_length == 1.0
    assert cfg.physics.correlation == "gaussian"
    assert cfg.sector_scale == pytest.approx(100.0)
    lay = cfg.layout()
    assert lay.n0 == 5 and not lay.left_turning_points


@pytest.mark.parametrize("name", PRESETS)
def test_presets_round_trip(name):
    cfg = load_preset(name)
    again = parse_config(to_ini(cfg))
    assert again == cfg
    assert config_hash(again) == config_hash(cfg)
    assert preset_path(name + ".cfg") == preset_path(name)


def test_point_source_preset_values():
    cfg = load_preset("paper-fig3")
    assert cfg.physics.k == 2 * math.pi
    assert cfg.physics.sigma ** 2 == pytest.approx(0.003)
    assert cfg.physics.corr_length == 3.0
    assert cfg.source_spec().rho_star == pytest.approx(20.49 / 7)
    assert load_preset("paper-fig6-left").source.mode == 39
    assert load_preset("paper-fig6-right").source.mode == 40


@given(st.floats(1e-3, 1.0), st.floats(1e-4, 0.1), st.integers(0, 2**31), st.booleans())
@settings(max_examples=40, deadline=None)
def test_round_trip_arbitrary_values(sigma, eps, seed, right):
    text = MINIMAL.replace("sigma = 0.05", f"sigma = {sigma!r}").replace(
        "epsilon = 0.01", f"epsilon = {eps!r}")
    text += f"\n[mc]\nseed = {seed}\n\n[numerics]\nright_side = {str(right).lower()}\n"
    cfg = parse_config(text)
    assert parse_config(to_ini(cfg)) == cfg


def test_inline_comments_and_case():
    cfg = parse_config(MINIMAL.replace("d = 2.6", "D = 2.6  # width"))
    assert cfg.geometry.d == 2.6


def test_unknown_key_reports_position():
    with pytest.raises(ParseError) as e:
        parse_config(MINIMAL + "bogus = 1\n")
    assert e.value.line == MINIMAL.count("\n") + 1
    assert e.value.column == 1


def test_unknown_section_rejected():
    with pytest.raises(ParseError) as e:
        parse_config(MINIMAL + "\n[extra]\nx = 1\n")
    assert e.value.line is not None


@pytest.mark.parametrize("old,new", [
    ("sigma = 0.05", "sigma = lots"),
    ("k = 6.283185307179586", "k = 6.28 6.28"),
])
def test_unreadable_values(old, new):
    with pytest.raises(ParseError):
        parse_config(MINIMAL.replace(old, new))


@pytest.mark.parametrize("old,new", [
    ("epsilon = 0.01", "epsilon = 0.5"),
    ("sigma = 0.05", "sigma = -0.1"),
    ("k = 6.283185307179586", "k = 0"),
    ("profile = constant", "profile = wiggly"),
    ("d = 2.6", "d_start = 2.6"),
    ("z_max = 100", "z_max = -1"),
])
def test_invariant_violations(old, new):
    with pytest.raises(ValidationError):
        parse_config(MINIMAL.replace(old, new))


def test_missing_required_keys():
    with pytest.raises(ValidationError):
        parse_config(MINIMAL.replace("k = 6.283185307179586\n", ""))
    with pytest.raises(ValidationError):
        parse_config("[geometry]\nprofile = constant\nd = 1\nz_max = 1\n")
    with pytest.raises(ParseError):
        parse_config("k = 1\n" + MINIMAL)


def test_source_position_exclusive():
    text = MINIMAL + "\n[source]\nrho_star = 0.1\nrho_fraction = 0.1\n"
    with pytest.raises(ValidationError):
        parse_config(text)


def test_mc_step_bound():
    with pytest.raises(ValidationError):
        parse_config(MINIMAL + "\n[mc]\nstep = 0.01\n")


def test_overrides():
    cfg = load_preset("paper-fig3")
    out = with_overrides(cfg, seed=9, trajectories=50)
    assert (out.mc.seed, out.mc.n_trajectories) == (9, 50)
    assert config_hash(out) != config_hash(cfg)
    with pytest.raises(ValidationError):
        with_overrides(cfg, trajectories=1)


def test_unknown_preset():
    with pytest.raises(ValidationError):
        preset_path("nope")
