import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modeflux.correlation import GaussianCorrelation, power_spectral_density, sine_half_transform
from modeflux.coupling import (
    CouplingProvider,
    coupling_set,
    forward_scattering_diagnostic,
    gamma_matrix,
    gamma_theta,
    length_scales,
    slow_coupling,
    slow_coupling_matrices,
)
from modeflux.errors import (
    EqualIndices,
    LayoutMismatch,
    NonConvergedTail,
    TurningPointTooClose,
    ValidationError,
)
from modeflux.geometry import WidthProfile

K = 2 * math.pi
G = GaussianCorrelation()
SIG = math.sqrt(0.003)


def check_generator(Gc):
    scale = np.abs(Gc).max()
    assert np.max(np.abs(Gc - Gc.T)) <= 1e-14 * scale
    off = Gc - np.diag(np.diag(Gc))
    assert off.min() >= 0
    assert np.max(np.abs(Gc.sum(axis=1))) <= 1e-14 * scale * Gc.shape[0]
    w, v = np.linalg.eigh(Gc)
    assert abs(w[-1]) <= 1e-12 * scale
    assert np.all(w[:-1] < 0)
    # eigenvector accuracy scales like 1/gap; skip when couplings are negligible
    if -w[-2] > 1e-6 * scale:
        null = v[:, -1] / v[0, -1]
        np.testing.assert_allclose(null, 1.0, atol=1e-8)


@given(st.floats(1.05, 6.9), st.floats(0.01, 0.3), st.floats(0.3, 3.0))
@settings(max_examples=40, deadline=None)
def test_generator_structure(D, sigma, ell):
    x = K * D / math.pi
    if abs(x - round(x)) < 0.02:
        return
    cs = coupling_set(K, sigma, G, D, corr_length=ell, with_kappa=False)
    if cs.n_prop > 1:
        check_generator(cs.Gc)


def test_entries_against_quadrature_oracle():
    ell, D = 3.0, 20.25
    cs = coupling_set(K, SIG, G, D, corr_length=ell, with_kappa=False)
    kt, Dt = K * ell, D / ell
    for j, l in ((1, 2), (5, 17), (39, 40)):
        mj, ml = math.pi * j / Dt, math.pi * l / Dt
        bj, bl = math.sqrt(kt * kt - mj * mj), math.sqrt(kt * kt - ml * ml)
        c = SIG**2 * mj**2 * ml**2 / (4 * bj * bl)
        assert cs.Gc[j - 1, l - 1] == pytest.approx(c * power_spectral_density(G, bj - bl) / ell,
                                                    rel=1e-9)
        assert cs.G0[j - 1, l - 1] == pytest.approx(c * power_spectral_density(G, 0.0) / ell,
                                                    rel=1e-9)
        assert cs.Gs[j - 1, l - 1] == pytest.approx(2 * c * sine_half_transform(G, bj - bl) / ell,
                                                    rel=1e-8)


def test_diagonal_closures():
    cs = coupling_set(K, SIG, G, 20.25, corr_length=3.0, with_kappa=False)
    np.testing.assert_allclose(np.diag(cs.Gc), -(cs.Gc - np.diag(np.diag(cs.Gc))).sum(1))
    off = cs.Gs - np.diag(np.diag(cs.Gs))
    np.testing.assert_allclose(off, -off.T, atol=1e-15 * np.abs(off).max())
    np.testing.assert_allclose(np.diag(cs.Gs), -off.sum(0))


def test_rates_scale_with_sigma_squared():
    a = coupling_set(K, 0.01, G, 3.3, with_kappa=True)
    b = coupling_set(K, 0.02, G, 3.3, with_kappa=True)
    np.testing.assert_allclose(b.Gc, 4 * a.Gc, rtol=1e-12)
    np.testing.assert_allclose(b.kappa, 4 * a.kappa, rtol=1e-9)


def test_zero_sigma_gives_zero_rates():
    cs = coupling_set(K, 0.0, G, 3.3)
    assert not np.any(cs.Gc) and not np.any(cs.kappa)


def test_kappa_converges_with_cutoff():
    a = coupling_set(K, SIG, G, 20.25, corr_length=3.0, evanescent_cutoff=200)
    b = coupling_set(K, SIG, G, 20.25, corr_length=3.0, evanescent_cutoff=800)
    np.testing.assert_allclose(a.kappa, b.kappa, atol=1e-8 * np.abs(b.kappa).max())
    with pytest.raises(NonConvergedTail):
        coupling_set(K, SIG, G, 20.25, corr_length=3.0, evanescent_cutoff=20)
    with pytest.raises(NonConvergedTail):
        coupling_set(K, SIG, G, 20.25, corr_length=3.0, tail_correction=False)


def test_amplitude_rate_decays():
    cs = coupling_set(K, SIG, G, 20.25, corr_length=3.0)
    c = cs.amplitude_rate
    # negative real part: left going means shrink as z decreases
    assert np.all(c.real < 0)
    np.testing.assert_allclose(-2.0 / c.real, length_scales(cs).smf)


def test_guards():
    with pytest.raises(TurningPointTooClose):
        coupling_set(K, SIG, G, 20.0, corr_length=3.0)
    with pytest.raises(ValidationError):
        coupling_set(K, -0.1, G, 3.3)
    with pytest.raises(ValidationError):
        coupling_set(K, 0.1, G, 3.3, n_prop=7)
    with pytest.raises(EqualIndices):
        gamma_theta(2, 2)


def test_gamma_matrix_matches_scalar():
    M = gamma_matrix(6)
    for j in range(1, 7):
        for q in range(1, 7):
            if j != q:
                g, t = gamma_theta(j, q)
                assert M[j - 1, q - 1] == pytest.approx(g)
                assert t == 2 * g
    np.testing.assert_allclose(M, -M.T)


def test_slow_coupling_matrix_matches_scalar():
    p = WidthProfile.linear(-10.0, 0.0, 2.0, 2.5)
    D, dp = p.d_at(-4.0), p.d_prime_at(-4.0)
    g, t = slow_coupling_matrices(5, K, D, dp, curvature=0.3)
    for j in range(1, 6):
        for q in range(1, 6):
            if j == q:
                continue
            go, to = slow_coupling(j, q, -4.0, p, K, curvature_at=lambda z: 0.3)
            assert g[j - 1, q - 1] == pytest.approx(go)
            assert t[j - 1, q - 1] == pytest.approx(to)
    # width change couples only modes of equal parity
    assert t[0, 1] == 0.0 and t[0, 2] != 0.0


def test_length_scales_on_preset():
    cs = coupling_set(K, SIG, G, 20.25, corr_length=3.0, with_kappa=False)
    ls = length_scales(cs)
    assert np.all(np.diff(ls.smf) < 0)
    assert np.all(ls.tmf > 0)
    assert ls.equipartition > 1000.0
    assert ls.spectrum[0] == pytest.approx(0.0, abs=1e-12 * np.abs(cs.Gc).max())
    with pytest.raises(ValidationError):
        length_scales(coupling_set(K, 0.0, G, 20.25, with_kappa=False))


def test_forward_scattering_negligible_on_preset():
    rep = forward_scattering_diagnostic(K, G, 20.25, corr_length=3.0)
    assert not rep.flagged
    assert rep.ratio < 1e-6


def test_provider_caches_and_checks_modes():
    p = WidthProfile.linear(-10.0, 0.0, 2.0, 2.4)
    prov = CouplingProvider(K, 0.1, G, p, 4, with_kappa=False)
    assert prov(-5.0) is prov(-5.0)
    assert prov(-5.0).Gc.shape == (4, 4)
