"""Deterministic coupling coefficients between the waveguide modes.

Formulas are evaluated in units of the correlation length ``ell``: the
wavenumber becomes ``k ell``, the width ``D / ell`` and the fluctuation
``nu`` is a function of ``z / ell``. Rates are converted back to inverse
physical length at the end, so a :class:`CouplingSet` is directly usable in
``dP/dz = -Gc P`` with ``z`` in the same unit as ``D``.

``sigma`` is the standard deviation of the relative boundary fluctuation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .correlation import CorrelationModel
from .errors import (
    DegenerateSpectrum,
    EqualIndices,
    NonConvergedTail,
    TurningPointTooClose,
    ValidationError,
)
from .geometry import WidthProfile, mode_count

#: the propagating part of the phase drift is scaled by sigma^2 like its
#: neighbours; recorded in run manifests
KAPPA_SIGMA2_POLICY = "sigma2-on-propagating-sum"


def _sign(j, q):
    return np.where((np.asarray(j) + np.asarray(q)) % 2, -1.0, 1.0)


def gamma_theta(j: int, q: int) -> tuple[float, float]:
    """Leading coupling constants ``Gamma_jq`` and ``Theta_jq = 2 Gamma_jq``."""
    if j == q:
        raise EqualIndices("coupling constants need j != q")
    if j < 1 or q < 1:
        raise ValidationError("mode indices start at 1")
    g = j * q * (-1) ** (j + q) / (q * q - j * j)
    return g, 2.0 * g


def gamma_matrix(n: int) -> np.ndarray:
    """``Gamma_jq`` for ``j, q = 1..n`` with zero diagonal."""
    j = np.arange(1, n + 1, dtype=float)
    jj, qq = np.meshgrid(j, j, indexing="ij")
    den = qq * qq - jj * jj
    np.fill_diagonal(den, 1.0)
    out = jj * qq * _sign(jj.astype(int), qq.astype(int)) / den
    np.fill_diagonal(out, 0.0)
    return out


def slow_coupling(j: int, q: int, z: float, profile: WidthProfile, k: float,
                  curvature_at: Callable[[float], float] | None = None) -> tuple[float, float]:
    """Coupling from the slow changes of the guide at ``z``.

    Returns ``(gamma_o, theta_o)``: the curvature term multiplying ``u_q``
    (inverse length squared) and the width-change term multiplying
    ``d u_q / dz`` (inverse length).
    """
    if j == q:
        raise EqualIndices("slow coupling needs j != q")
    D = profile.d_at(z)
    dp = profile.d_prime_at(z)
    kap = 0.0 if curvature_at is None else float(curvature_at(z))
    s = (-1) ** (j + q)
    den = q * q - j * j
    n_eff = k * D / math.pi
    gamma_o = kap / D * 2 * j * q * (1 - s) * (j * j + 3 * q * q - 4 * n_eff**2) / den**2
    theta_o = dp / D * 2 * j * q * (1 + s) / den
    return gamma_o, theta_o


def slow_coupling_matrices(n: int, k: float, D: float, dprime: float, curvature: float = 0.0):
    """Matrices of ``gamma_o`` and ``theta_o`` for modes ``1..n`` (zero diagonal)."""
    j = np.arange(1, n + 1, dtype=float)
    jj, qq = np.meshgrid(j, j, indexing="ij")
    s = _sign(jj.astype(int), qq.astype(int))
    den = qq * qq - jj * jj
    np.fill_diagonal(den, 1.0)
    n_eff = k * D / math.pi
    g = curvature / D * 2 * jj * qq * (1 - s) * (jj**2 + 3 * qq**2 - 4 * n_eff**2) / den**2
    t = dprime / D * 2 * jj * qq * (1 + s) / den
    np.fill_diagonal(g, 0.0)
    np.fill_diagonal(t, 0.0)
    return g, t


@dataclass(frozen=True)
class CouplingSet:
    """Diffusion-limit coefficients at one position.

    All entries are rates per unit length of ``z``.
    """

    z: float
    D: float
    n_prop: int
    Gc: np.ndarray
    G0: np.ndarray
    Gs: np.ndarray
    kappa: np.ndarray
    kappa_tail: np.ndarray = field(repr=False)
    beta: np.ndarray = field(repr=False)

    @property
    def amplitude_rate(self) -> np.ndarray:
        """Complex rate ``c_j`` with ``d<b_j>/dz = -c_j <b_j> / 2``."""
        return (np.diag(self.Gc) - np.diag(self.G0)) + 1j * (np.diag(self.Gs) + 2 * self.kappa)


_GL_T, _GL_W = np.polynomial.legendre.leggauss(32)


def _evanescent_terms(x, beta, mu_, k_t, D_t, s2, model):
    """Series terms of the phase drift at (possibly fractional) mode index ``x``."""
    x = np.asarray(x, dtype=float)
    mu_e = math.pi * x / D_t
    be = np.sqrt((mu_e - k_t) * (mu_e + k_t))
    BJ = beta[:, None]
    BL = be[None, :]
    br = model.kappa_bracket(np.broadcast_to(BJ, (len(beta), len(x))),
                             np.broadcast_to(BL, (len(beta), len(x))))
    return s2 * mu_[:, None] ** 2 * mu_e[None, :] ** 2 / (2 * BJ * BL * (BJ**2 + BL**2) ** 2) * br


def _kappa(k_t, D_t, n, beta, mu_, sigma, model, cutoff, tail_correction=True):
    """Phase drift in correlation-length units, and a bound on the series error.

    The evanescent series is summed explicitly over ``cutoff`` terms. With
    ``tail_correction`` the remainder is added as the midpoint integral of
    the terms over a continuous index, and the reported bound is the next
    Euler-Maclaurin correction; otherwise the bound is the integral
    comparison estimate of the neglected remainder.
    """
    s2 = sigma * sigma
    R0 = 1.0
    R2 = model.R2_at_0
    j = np.arange(1, n + 1, dtype=float)
    line1 = s2 / (2 * beta) * ((math.pi**2 * j**2 / 12 + 1 / 16) * R2 - 0.75 * mu_**2 * R0)
    bj = beta[:, None]
    bl = beta[None, :]
    diff = bj - bl
    np.fill_diagonal(diff, 1.0)
    w = (mu_[:, None] ** 2 * mu_[None, :] ** 2) / (4 * bj * bl * diff) * (R0 + R2 / (bj + bl) ** 2)
    np.fill_diagonal(w, 0.0)
    line2 = -s2 * w.sum(axis=1)
    if cutoff <= 0:
        return line1 + line2, np.zeros(n)
    le = np.arange(n + 1, n + cutoff + 1, dtype=float)
    terms = _evanescent_terms(le, beta, mu_, k_t, D_t, s2, model)
    line3 = terms.sum(axis=1)
    a = n + cutoff + 0.5
    if tail_correction:
        # int_a^inf f(x) dx with x = 1/t; the integrand is smooth in t
        t = 0.5 * (_GL_T + 1.0) / a
        wt = 0.5 * _GL_W / a
        f = _evanescent_terms(1.0 / t, beta, mu_, k_t, D_t, s2, model)
        line3 = line3 + (f / t**2) @ wt
        h = 0.5
        fp = (_evanescent_terms([a + h], beta, mu_, k_t, D_t, s2, model)
              - _evanescent_terms([a - h], beta, mu_, k_t, D_t, s2, model))[:, 0] / (2 * h)
        tail = np.abs(fp) / 24.0
    elif cutoff >= 2:
        t1 = np.abs(terms[:, -2])
        t2 = np.abs(terms[:, -1])
        L = le[-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            p = np.log(t1 / t2) / math.log(L / (L - 1))
        p = np.where(np.isfinite(p) & (p > 2.0), p, 2.0)
        tail = t2 * L / (p - 1)
    else:
        tail = np.abs(terms[:, -1]) * (n + cutoff)
    return line1 + line2 + line3, tail


def coupling_set(
    k: float,
    sigma: float,
    model: CorrelationModel,
    D: float,
    n_prop: int | None = None,
    evanescent_cutoff: int = 200,
    *,
    corr_length: float = 1.0,
    beta_floor: float = 1e-6,
    with_kappa: bool = True,
    tail_rtol: float = 1e-8,
    tail_correction: bool = True,
    z: float = float("nan"),
) -> CouplingSet:
    """Diffusion-limit coefficient matrices at width ``D``.

    Parameters
    ----------
    k, D : float
        Wavenumber and width in physical units.
    sigma : float
        Standard deviation of the relative boundary fluctuation.
    model : CorrelationModel
        Correlation of the fluctuation in units of ``corr_length``.
    n_prop : int, optional
        Number of propagating modes; must equal ``floor(k D / pi)``.
    evanescent_cutoff : int
        Number of evanescent modes kept in the phase drift series.
    beta_floor : float
        Smallest admissible ``beta / k`` for propagating and kept evanescent modes.

    Raises
    ------
    TurningPointTooClose
        If a wavenumber falls below ``beta_floor * k``.
    NonConvergedTail
        If the estimated series remainder exceeds ``tail_rtol * max_j |kappa_j|``.
    """
    if sigma < 0:
        raise ValidationError("sigma must be non-negative")
    if not (k > 0 and D > 0 and corr_length > 0):
        raise ValidationError("k, D and corr_length must be positive")
    n_true = mode_count(k, D)
    if n_prop is None:
        n_prop = n_true
    # without the phase drift a sector may be evaluated up to the turning
    # point that ends it, where one more mode is about to propagate
    if n_prop > n_true or (with_kappa and n_prop != n_true):
        raise ValidationError(f"n_prop = {n_prop} but floor(kD/pi) = {n_true}")
    n = n_prop
    ell = corr_length
    k_t, D_t = k * ell, D / ell
    j = np.arange(1, n + 1, dtype=float)
    mu_ = math.pi * j / D_t
    beta = np.sqrt(np.clip((k_t - mu_) * (k_t + mu_), 0.0, None))
    if n and beta.min() < beta_floor * k_t:
        raise TurningPointTooClose(f"beta_{n} = {beta.min() / ell:.3e} is below the floor")
    if evanescent_cutoff > 0 and with_kappa:
        mu_e = math.pi * (n + 1) / D_t
        if math.sqrt((mu_e - k_t) * (mu_e + k_t)) < beta_floor * k_t:
            raise TurningPointTooClose(f"evanescent mode {n + 1} is at its turning point")

    s2 = sigma * sigma
    c = s2 * np.outer(mu_**2, mu_**2) / (4 * np.outer(beta, beta))
    dB = beta[:, None] - beta[None, :]
    Gc = c * model.psd(dB)
    np.fill_diagonal(Gc, 0.0)
    Gc = 0.5 * (Gc + Gc.T)
    np.fill_diagonal(Gc, -Gc.sum(axis=1))
    G0 = c * model.psd(0.0)
    Gs = 2 * c * model.sine_half(dB)
    np.fill_diagonal(Gs, 0.0)
    np.fill_diagonal(Gs, -Gs.sum(axis=0))
    if with_kappa and n:
        kappa, tail = _kappa(k_t, D_t, n, beta, mu_, sigma, model, evanescent_cutoff,
                             tail_correction)
        # measured against the largest drift: single entries may cross zero
        bad = tail > tail_rtol * np.abs(kappa).max()
        if np.any(bad & (tail > 0)):
            jj = int(np.nonzero(bad)[0][0]) + 1
            raise NonConvergedTail(
                f"phase drift series for mode {jj} not converged (tail {tail[jj - 1]:.2e}); "
                "raise evanescent_cutoff")
    else:
        kappa = np.zeros(n)
        tail = np.zeros(n)
    return CouplingSet(z=z, D=float(D), n_prop=n, Gc=Gc / ell, G0=G0 / ell, Gs=Gs / ell,
                       kappa=kappa / ell, kappa_tail=tail / ell, beta=beta / ell)


@dataclass(frozen=True)
class LengthScales:
    smf: np.ndarray
    tmf: np.ndarray
    equipartition: float
    spectrum: np.ndarray


def length_scales(cs: CouplingSet, rtol: float = 1e-10) -> LengthScales:
    """Scattering and transport mean free paths and the equipartition distance.

    Raises
    ------
    DegenerateSpectrum
        If the zero eigenvalue of ``Gc`` is not simple or its eigenvector is
        not the all-ones vector.
    """
    Gc = cs.Gc
    scale = np.abs(Gc).max() if Gc.size else 0.0
    if not scale > 0:
        raise ValidationError("length scales need sigma > 0")
    smf = 2.0 / (np.diag(cs.G0) - np.diag(Gc))
    tmf = -2.0 / np.diag(Gc)
    w, v = np.linalg.eigh(Gc)
    w = w[::-1]
    v = v[:, ::-1]
    if cs.n_prop == 1:
        return LengthScales(smf, tmf, math.inf, w)
    tol = rtol * scale * cs.n_prop
    if abs(w[0]) > tol or w[1] > -tol:
        raise DegenerateSpectrum(f"zero eigenvalue not simple: top eigenvalues {w[:2]}")
    null = v[:, 0] / v[0, 0]
    if np.max(np.abs(null - 1.0)) > 1e-8:
        raise DegenerateSpectrum("null vector of Gc is not constant")
    return LengthScales(smf, tmf, 1.0 / abs(w[1]), w)


@dataclass(frozen=True)
class ForwardScatteringReport:
    min_sum: float
    max_psd_at_sum: float
    ratio: float
    threshold: float

    @property
    def flagged(self) -> bool:
        return self.ratio > self.threshold


def forward_scattering_diagnostic(k: float, model: CorrelationModel, D: float,
                                  n_prop: int | None = None, *, corr_length: float = 1.0,
                                  threshold: float = 1e-3) -> ForwardScatteringReport:
    """Size of the spectrum at ``beta_j + beta_l`` relative to its peak.

    Backscattering between propagating modes is negligible when the ratio is
    small; the run is flagged above ``threshold``.
    """
    n = mode_count(k, D) if n_prop is None else n_prop
    k_t, D_t = k * corr_length, D / corr_length
    mu_ = math.pi * np.arange(1, n + 1) / D_t
    beta = np.sqrt((k_t - mu_) * (k_t + mu_))
    sums = beta[:, None] + beta[None, :]
    vals = model.psd(sums)
    peak = float(model.psd(0.0))
    mx = float(vals.max())
    return ForwardScatteringReport(float(sums.min()) / corr_length, mx, mx / peak, threshold)


class CouplingProvider:
    """Coefficient sets along a profile, cached by position.

    Parameters mirror :func:`coupling_set`; the width at ``z`` comes from
    ``profile``. The mode count is fixed per provider so that the caller
    controls which modes are active in a sector.
    """

    def __init__(self, k: float, sigma: float, model: CorrelationModel, profile: WidthProfile,
                 n_modes: int, *, corr_length: float = 1.0, evanescent_cutoff: int = 200,
                 with_kappa: bool = True, beta_floor: float = 1e-6, cache_size: int = 4096):
        self.k = k
        self.sigma = sigma
        self.model = model
        self.profile = profile
        self.n_modes = n_modes
        self.corr_length = corr_length
        self.evanescent_cutoff = evanescent_cutoff
        self.with_kappa = with_kappa
        self.beta_floor = beta_floor
        self._get = lru_cache(maxsize=cache_size)(self._build)

    def _build(self, z: float) -> CouplingSet:
        D = self.profile.d_at(z)
        return coupling_set(self.k, self.sigma, self.model, D, self.n_modes,
                            self.evanescent_cutoff, corr_length=self.corr_length,
                            beta_floor=self.beta_floor, with_kappa=self.with_kappa, z=z)

    def __call__(self, z: float) -> CouplingSet:
        return self._get(float(z))
