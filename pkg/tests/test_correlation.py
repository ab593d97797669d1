import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from modeflux.correlation import (
    GaussianCorrelation,
    TabulatedSpectrumCorrelation,
    autocorrelation,
    kappa_laplace_integral,
    power_spectral_density,
    sine_half_transform,
    spectral_weights,
    synthesize_path,
)
from modeflux.errors import PathCoverage, SpectrumTruncationTooCoarse, ValidationError

G = GaussianCorrelation()


def test_gaussian_normalization():
    assert autocorrelation(G, 0.0) == 1.0
    assert G.R2_at_0 == -1.0
    # (1/pi) int_0^inf R_hat = R(0)
    assert quad(lambda b: float(G.psd(b)), 0, np.inf)[0] / math.pi == pytest.approx(1.0, abs=1e-9)


@given(st.floats(0.0, 9.0))
@settings(max_examples=25, deadline=None)
def test_psd_against_quadrature(beta):
    assert float(G.psd(beta)) == pytest.approx(power_spectral_density(G, beta), abs=1e-11)


@given(st.floats(-9.0, 9.0))
@settings(max_examples=25, deadline=None)
def test_sine_half_against_quadrature(beta):
    assert float(G.sine_half(beta)) == pytest.approx(sine_half_transform(G, beta), abs=1e-11)


@pytest.mark.parametrize("bj,bl", [(0.3, 0.5), (2.0, 1.0), (5.0, 0.2), (14.0, 3.0),
                                   (0.0, 20.0), (18.0, 9.0)])
def test_kappa_kernel_against_quadrature(bj, bl):
    ref = kappa_laplace_integral(G, bj, bl)
    assert float(G.kappa_kernel(bj, bl)) == pytest.approx(ref, abs=1e-9 * max(1, abs(ref)))
    bracket = -bl * G.R2_at_0 + ref
    assert float(G.kappa_bracket(bj, bl)) == pytest.approx(bracket, abs=1e-9 * max(1, bl))


def test_kappa_integral_guards():
    with pytest.raises(ValidationError):
        kappa_laplace_integral(G, 1.0, 0.0)


def test_tabulated_gaussian_matches_closed_form():
    b = np.linspace(0, 9, 400)
    tab = TabulatedSpectrumCorrelation(tuple(b), tuple(G.psd(b)))
    assert tab.scale == pytest.approx(1.0, rel=1e-6)
    for z in (0.0, 0.7, 1.5):
        assert float(tab.R(z)) == pytest.approx(float(G.R(z)), abs=1e-6)
    for x in (0.5, 2.0):
        assert float(tab.sine_half(x)) == pytest.approx(float(G.sine_half(x)), abs=1e-5)


def test_tabulated_rejects_bad_tables():
    with pytest.raises(ValidationError):
        TabulatedSpectrumCorrelation((0.0, 1.0), (1.0, 0.5))
    with pytest.raises(ValidationError):
        TabulatedSpectrumCorrelation((0.5, 1.0, 2.0), (1.0, 0.5, 0.1))


def test_path_statistics_match_model():
    path = synthesize_path(G, 400.0, 0.05, seed=7, batch=200)
    v = path.values
    assert v.shape == (4, 200, path.n_points)
    # nu, nu', nu'' have variances R(0), -R''(0), R''''(0) = 1, 1, 3
    for p, var in ((0, 1.0), (1, 1.0), (2, 3.0)):
        assert np.var(v[p]) == pytest.approx(var, rel=0.05)
    assert abs(np.mean(v[0])) < 0.05
    lag = 20
    c = np.mean(v[0][:, :-lag] * v[0][:, lag:])
    assert c == pytest.approx(float(G.R(lag * 0.05)), abs=0.05)


def test_path_derivative_is_consistent():
    path = synthesize_path(G, 20.0, 0.01, seed=3)
    nu, d1 = path.values[0], path.values[1]
    fd = np.gradient(nu, path.dzeta)
    assert np.max(np.abs(fd[2:-2] - d1[2:-2])) < 1e-3


def test_streams_are_batch_independent():
    seeds = [np.random.SeedSequence([5, i]) for i in range(4)]
    all4 = synthesize_path(G, 30.0, 0.1, streams=seeds, period=80.0)
    one = synthesize_path(G, 30.0, 0.1, streams=seeds[2:3], period=80.0)
    np.testing.assert_array_equal(all4.values[:, 2], one.values[:, 0])


def test_fixed_period_keeps_path_under_refinement():
    seeds = [np.random.SeedSequence(11)]
    a = synthesize_path(G, 10.0, 0.1, streams=seeds, period=40.0)
    b = synthesize_path(G, 10.0, 0.05, streams=seeds, period=40.0)
    np.testing.assert_allclose(a.values[0, 0], b.values[0, 0, ::2], atol=1e-12)


def test_clip_bounds_values_only():
    path = synthesize_path(G, 200.0, 0.05, seed=1, clip=0.5)
    assert np.abs(path.values[0]).max() <= 0.5
    assert np.abs(path.values[1]).max() > 0.5


def test_path_indexing():
    path = synthesize_path(G, 10.0, 0.1, seed=0, zeta0=2.0)
    assert path.index(2.0) == 0
    assert path.at(2.5) == path.values[0, 5]
    with pytest.raises(PathCoverage):
        path.index(2.05)
    with pytest.raises(PathCoverage):
        path.index(50.0)


def test_coarse_grid_loses_spectrum():
    with pytest.raises(SpectrumTruncationTooCoarse):
        spectral_weights(G, 10.0, 1.5)
    with pytest.raises(ValidationError):
        spectral_weights(G, 10.0, 0.1, period=5.0)
