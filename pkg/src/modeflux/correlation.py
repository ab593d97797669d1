"""Statistics of the boundary fluctuation process ``nu``.

The fluctuation is a stationary, zero-mean Gaussian process in the fast
variable ``zeta`` (lengths in units of the correlation length) with
autocorrelation ``R`` normalized to ``R(0) = 1`` and power spectral density
``R_hat(beta) = 2 int_0^inf R(zeta) cos(beta zeta) dzeta``.

Two kinds of models are provided: the unit-width Gaussian, which has closed
forms for every transform used downstream, and a model defined by a
tabulated non-negative spectrum. The module-level transform functions
evaluate their defining integrals by adaptive quadrature and serve as the
reference for the fast model methods.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import fft as sfft
from scipy.integrate import IntegrationWarning, quad
from scipy.interpolate import PchipInterpolator
from scipy.special import dawsn, wofz

from .errors import PathCoverage, SpectrumTruncationTooCoarse, ValidationError

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)
_SQRT_HALF_PI = math.sqrt(math.pi / 2.0)

# beyond this |s| the Laplace transform of R'' is summed asymptotically
_ASYMPTOTIC_RADIUS = 12.0


class CorrelationModel:
    """Interface shared by the correlation models."""

    kind: str = "abstract"

    def R(self, zeta):
        """Autocorrelation ``R(zeta)``."""
        raise NotImplementedError

    def R2(self, zeta):
        """Second derivative ``R''(zeta)``."""
        raise NotImplementedError

    @property
    def R2_at_0(self) -> float:
        return float(self.R2(0.0))

    def psd(self, beta):
        """Power spectral density ``R_hat(beta)``."""
        raise NotImplementedError

    def sine_half(self, beta):
        """``int_0^inf R(zeta) sin(beta zeta) dzeta`` (vectorized)."""
        raise NotImplementedError

    def laplace_R2(self, s):
        """``int_0^inf R''(zeta) exp(-s zeta) dzeta`` for ``Re s > 0`` (vectorized)."""
        raise NotImplementedError

    def kappa_kernel(self, beta_j, beta_l):
        """Fast evaluation of :func:`kappa_laplace_integral` (vectorized)."""
        s = np.asarray(beta_l, dtype=float) - 1j * np.asarray(beta_j, dtype=float)
        return np.real(np.conj(s) ** 2 * self.laplace_R2(s))

    def kappa_bracket(self, beta_j, beta_l):
        """``-beta_l R''(0) + kappa_kernel(beta_j, beta_l)`` (vectorized).

        The two parts nearly cancel for large ``beta_l``; models override this
        with a cancellation-free form.
        """
        return -np.asarray(beta_l, dtype=float) * self.R2_at_0 + self.kappa_kernel(beta_j, beta_l)

    def spectral_cutoff(self, rel: float = 1e-12) -> float:
        """Smallest ``beta`` beyond which ``R_hat < rel * R_hat(0)``."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class GaussianCorrelation(CorrelationModel):
    """``R(zeta) = exp(-zeta^2 / 2)``, unit correlation length."""

    kind: str = "gaussian"

    def R(self, zeta):
        z = np.asarray(zeta, dtype=float)
        return np.exp(-0.5 * z * z)

    def R2(self, zeta):
        z = np.asarray(zeta, dtype=float)
        return (z * z - 1.0) * np.exp(-0.5 * z * z)

    @property
    def R2_at_0(self) -> float:
        return -1.0

    def psd(self, beta):
        b = np.asarray(beta, dtype=float)
        return _SQRT2PI * np.exp(-0.5 * b * b)

    def sine_half(self, beta):
        return _SQRT2 * dawsn(np.asarray(beta, dtype=float) / _SQRT2)

    def laplace_R(self, s):
        """``int_0^inf R exp(-s zeta) dzeta`` through the Faddeeva function."""
        s = np.asarray(s, dtype=complex)
        return _SQRT_HALF_PI * wofz(1j * s / _SQRT2)

    def laplace_R2(self, s):
        s = np.asarray(s, dtype=complex)
        out = np.empty(s.shape, dtype=complex)
        big = np.abs(s) > _ASYMPTOTIC_RADIUS
        small = ~big
        if np.any(small):
            ss = s[small]
            # R'' transforms to s^2 L(s) - s R(0) after two integrations by parts
            out[small] = ss * ss * self.laplace_R(ss) - ss
        if np.any(big):
            # Watson expansion: R^(2n+2)(0) = (-1)^(n+1) (2n+1)!!
            sb = s[big]
            inv2 = 1.0 / (sb * sb)
            term = -1.0 / sb
            acc = term.copy()
            for n in range(1, 40):
                term = term * (-(2 * n + 1)) * inv2
                acc += term
                if np.all(np.abs(term) < 1e-18 * np.abs(acc)):
                    break
            out[big] = acc
        return out

    def kappa_bracket(self, beta_j, beta_l):
        a = np.asarray(beta_j, dtype=float)
        b = np.asarray(beta_l, dtype=float)
        a, b = np.broadcast_arrays(a, b)
        s = b - 1j * a
        out = np.empty(s.shape)
        big = np.abs(s) > _ASYMPTOTIC_RADIUS
        small = ~big
        if np.any(small):
            ss = s[small]
            out[small] = b[small] + np.real(np.conj(ss) ** 2 * self.laplace_R2(ss))
        if np.any(big):
            # leading terms cancel analytically; sum the remainder of the series
            sb, ab, bb = s[big], a[big], b[big]
            m2 = np.abs(sb) ** 2
            acc = 4.0 * ab * ab * bb / m2
            lead = np.conj(sb) ** 2 / sb
            inv2 = 1.0 / (sb * sb)
            coef = -1.0
            term = lead
            for n in range(1, 40):
                coef *= -(2 * n + 1)
                term = term * inv2
                piece = np.real(coef * term)
                acc = acc + piece
                if np.all(np.abs(piece) < 1e-17 * np.maximum(np.abs(acc), 1e-300)):
                    break
            out[big] = acc
        return out

    def spectral_cutoff(self, rel: float = 1e-12) -> float:
        return math.sqrt(-2.0 * math.log(rel))


@dataclass(frozen=True)
class TabulatedSpectrumCorrelation(CorrelationModel):
    """Model defined by a tabulated non-negative spectrum.

    The table ``(beta, psd)`` starts at ``beta = 0`` and is interpolated with
    a shape-preserving cubic, so the interpolant stays non-negative. The
    spectrum is rescaled so that ``R(0) = (1/pi) int_0^inf R_hat = 1``.
    Transforms use composite Gauss-Legendre rules on the spectral support.
    """

    beta: tuple
    values: tuple
    kind: str = "user-tabulated-spectrum"
    scale: float = field(init=False, default=1.0)
    _interp: object = field(init=False, repr=False, compare=False, default=None)
    _nodes: object = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        b = np.asarray(self.beta, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if b.ndim != 1 or b.shape != v.shape or len(b) < 3:
            raise ValidationError("spectrum table needs at least three (beta, psd) rows")
        if b[0] != 0.0 or np.any(np.diff(b) <= 0):
            raise ValidationError("spectrum beta must start at 0 and increase strictly")
        if np.any(v < 0):
            raise ValidationError("spectrum values must be non-negative")
        interp = PchipInterpolator(b, v, extrapolate=False)
        # composite Gauss-Legendre nodes: 8 points per table interval, refined
        x, w = np.polynomial.legendre.leggauss(8)
        edges = np.linspace(0.0, b[-1], 4 * (len(b) - 1) + 1)
        mid = 0.5 * (edges[1:] + edges[:-1])
        half = 0.5 * np.diff(edges)
        nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
        weights = (half[:, None] * w[None, :]).ravel()
        raw = np.nan_to_num(interp(nodes))
        total = np.dot(weights, raw) / math.pi
        if not total > 0:
            raise ValidationError("spectrum integrates to zero")
        object.__setattr__(self, "scale", 1.0 / total)
        object.__setattr__(self, "_interp", interp)
        object.__setattr__(self, "_nodes", (nodes, weights, raw / total))

    @classmethod
    def from_csv(cls, path: str | Path) -> "TabulatedSpectrumCorrelation":
        """Read a two-column ``beta,psd`` CSV (header optional)."""
        bs, vs = [], []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    bs.append(float(row[0]))
                    vs.append(float(row[1]))
                except ValueError:
                    if bs:
                        raise ValidationError(f"bad row in spectrum table: {row}")
        return cls(tuple(bs), tuple(vs))

    def psd(self, beta):
        b = np.abs(np.asarray(beta, dtype=float))
        out = np.nan_to_num(self._interp(b)) * self.scale
        return out

    def _spectral(self, kernel):
        nodes, weights, vals = self._nodes
        return kernel(nodes) @ (weights * vals) / math.pi

    def R(self, zeta):
        z = np.atleast_1d(np.asarray(zeta, dtype=float))
        out = self._spectral(lambda b: np.cos(np.outer(z, b)))
        return out[0] if np.ndim(zeta) == 0 else out

    def R2(self, zeta):
        z = np.atleast_1d(np.asarray(zeta, dtype=float))
        out = self._spectral(lambda b: -(b * b) * np.cos(np.outer(z, b)))
        return out[0] if np.ndim(zeta) == 0 else out

    def sine_half(self, beta):
        # principal value of (1/pi) int R_hat(b) beta / (beta^2 - b^2) db
        bb = np.atleast_1d(np.asarray(beta, dtype=float))
        out = np.array([self._sine_half_one(x) for x in bb])
        return out[0] if np.ndim(beta) == 0 else out

    def _sine_half_one(self, x: float) -> float:
        if x == 0.0:
            return 0.0
        sgn = 1.0 if x > 0 else -1.0
        x = abs(x)
        top = float(self.beta[-1])
        f = lambda b: self.psd(b) * x / (x + b) / math.pi
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", IntegrationWarning)
            if x < top:
                # 1/(x^2 - b^2) = -1/((b - x)(x + b)): Cauchy weight at b = x
                val = -quad(f, 0.0, top, weight="cauchy", wvar=x, limit=400)[0]
            else:
                g = lambda b: self.psd(b) * x / (x * x - b * b) / math.pi
                val = quad(g, 0.0, top, limit=400, points=[top])[0]
        return sgn * val

    def laplace_R2(self, s):
        s = np.asarray(s, dtype=complex)
        flat = s.ravel()
        nodes, weights, vals = self._nodes
        b2 = nodes * nodes
        out = np.empty(flat.shape, dtype=complex)
        for i0 in range(0, flat.size, 256):
            ss = flat[i0:i0 + 256, None]
            out[i0:i0 + 256] = -(ss * b2 / (ss * ss + b2)) @ (weights * vals) / math.pi
        return out.reshape(s.shape)

    def kappa_bracket(self, beta_j, beta_l):
        a = np.asarray(beta_j, dtype=float)
        b = np.asarray(beta_l, dtype=float)
        a, b = np.broadcast_arrays(a, b)
        fa, fb = a.ravel(), b.ravel()
        nodes, weights, vals = self._nodes
        b2 = nodes * nodes
        wv = weights * vals * b2 / math.pi
        out = np.empty(fa.shape)
        for i0 in range(0, fa.size, 256):
            aa = fa[i0:i0 + 256, None]
            bb = fb[i0:i0 + 256, None]
            s = bb - 1j * aa
            num = bb * b2 - 2 * aa * aa * bb - 1j * aa * (aa * aa + 3 * bb * bb)
            out[i0:i0 + 256] = np.real(num / (s * s + b2)) @ wv
        return out.reshape(a.shape)

    @property
    def R2_at_0(self) -> float:
        return float(self.R2(0.0))

    def spectral_cutoff(self, rel: float = 1e-12) -> float:
        b = np.asarray(self.beta)
        v = np.asarray(self.values)
        above = np.nonzero(v >= rel * v[0])[0] if v[0] > 0 else np.nonzero(v > 0)[0]
        if len(above) == 0:
            return float(b[-1])
        i = above[-1]
        return float(b[min(i + 1, len(b) - 1)])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "beta": list(self.beta), "psd": list(self.values)}


def gaussian() -> GaussianCorrelation:
    return GaussianCorrelation()


# ------------------------------------------------------ reference transforms

def _tail_length(model: CorrelationModel, tol: float = 1e-16) -> float:
    """Length beyond which ``|R|`` and ``|R''|`` are below ``tol``."""
    if isinstance(model, GaussianCorrelation):
        return math.sqrt(-2.0 * math.log(tol)) + 2.0
    # bandlimited table: R decays slowly, integrate far
    return 400.0


def autocorrelation(model: CorrelationModel, zeta):
    """``R(zeta)``; normalized so that ``R(0) = 1``."""
    out = model.R(zeta)
    return float(out) if np.ndim(out) == 0 else out


def power_spectral_density(model: CorrelationModel, beta: float) -> float:
    """``2 int_0^inf R(zeta) cos(beta zeta) dzeta`` by adaptive quadrature."""
    top = _tail_length(model)
    f = lambda z: float(model.R(z))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        if beta == 0.0:
            val = quad(f, 0.0, top, epsabs=1e-13, limit=400)[0]
        else:
            val = quad(f, 0.0, top, weight="cos", wvar=abs(beta), epsabs=1e-13, limit=400)[0]
    return 2.0 * val


def sine_half_transform(model: CorrelationModel, beta: float) -> float:
    """``int_0^inf R(zeta) sin(beta zeta) dzeta`` by adaptive quadrature."""
    if beta == 0.0:
        return 0.0
    top = _tail_length(model)
    f = lambda z: float(model.R(z))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        val = quad(f, 0.0, top, weight="sin", wvar=abs(beta), epsabs=1e-13, limit=400)[0]
    return math.copysign(val, beta)


def kappa_laplace_integral(model: CorrelationModel, beta_j: float, beta_l: float) -> float:
    """Damped oscillatory integral of ``R''`` entering the phase drift.

    ``int_0^inf R''(z) e^{-b_l z} [(b_l^2 - b_j^2) cos(b_j z) - 2 b_j b_l sin(b_j z)] dz``
    evaluated by adaptive quadrature, split at the oscillation scale and
    truncated where ``exp(-b_l z) < 1e-14`` or the correlation has decayed.
    """
    if not beta_l > 0:
        raise ValidationError("beta_l must be positive")
    top = min(_tail_length(model), -math.log(1e-14) / beta_l)
    a, b = float(beta_j), float(beta_l)

    def f(z):
        r2 = float(model.R2(z)) * math.exp(-b * z)
        return r2 * ((b * b - a * a) * math.cos(a * z) - 2 * a * b * math.sin(a * z))

    period = 2 * math.pi / max(abs(a), 1e-3)
    panels = int(min(2000, max(1, math.ceil(top / period))))
    edges = np.linspace(0.0, top, panels + 1)
    total = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        for lo, hi in zip(edges[:-1], edges[1:]):
            total += quad(f, lo, hi, epsabs=1e-13 / panels, epsrel=1e-12, limit=200)[0]
    return total


# ------------------------------------------------------------- path synthesis

@dataclass(frozen=True)
class NoisePath:
    """Sampled realization of ``nu`` and its first three derivatives.

    ``values[p]`` holds the ``p``-th derivative on the uniform grid
    ``zeta0 + n * dzeta``. Leading axes beyond the last one index a batch of
    independent paths.
    """

    zeta0: float
    dzeta: float
    values: np.ndarray
    seed: object = None
    n_modes: int = 0
    omega_step: float = 0.0

    @property
    def n_points(self) -> int:
        return self.values.shape[-1]

    @property
    def zeta_end(self) -> float:
        return self.zeta0 + (self.n_points - 1) * self.dzeta

    def grid(self) -> np.ndarray:
        return self.zeta0 + self.dzeta * np.arange(self.n_points)

    def index(self, zeta: float) -> int:
        """Grid index of ``zeta``; raises if ``zeta`` is off the path."""
        i = (zeta - self.zeta0) / self.dzeta
        n = int(round(i))
        if n < 0 or n >= self.n_points or abs(i - n) > 1e-6:
            raise PathCoverage(f"zeta = {zeta} is not a grid point of the path")
        return n

    def at(self, zeta: float, order: int = 0):
        return self.values[order, ..., self.index(zeta)]


def spectral_weights(model: CorrelationModel, span: float, dzeta: float,
                     oversampling: float = 2.0, rel_cut: float = 1e-12,
                     period: float | None = None):
    """Frequencies and amplitudes of the spectral superposition.

    Returns ``(n_fft, omega_step, amplitudes)`` where the amplitudes are
    ``sqrt(R_hat(omega_m) d_omega / pi)`` (half weight at zero frequency) for
    the retained frequencies ``omega_m = m * omega_step``. The synthesis
    period is ``oversampling * span`` rounded up to a fast FFT length, or
    exactly ``period`` when given; a fixed period keeps the frequencies (and
    hence the path) unchanged when ``dzeta`` is refined.
    """
    if not (span > 0 and dzeta > 0):
        raise ValidationError("span and dzeta must be positive")
    n_grid = int(math.ceil(span / dzeta - 1e-9)) + 1
    if period is None:
        n_fft = sfft.next_fast_len(int(math.ceil(oversampling * n_grid)))
    else:
        n_fft = int(round(period / dzeta))
        if abs(n_fft * dzeta - period) > 1e-9 * period or n_fft < n_grid:
            raise ValidationError("period must be a multiple of dzeta covering the span")
    omega_step = 2 * math.pi / (n_fft * dzeta)
    cut = model.spectral_cutoff(rel_cut)
    nyquist = math.pi / dzeta
    top = min(cut, nyquist)
    m = np.arange(int(math.floor(top / omega_step)) + 1)
    w = model.psd(m * omega_step) * omega_step / math.pi
    w[0] *= 0.5
    captured = float(np.sum(w))
    if abs(captured - 1.0) > 1e-6:
        raise SpectrumTruncationTooCoarse(
            f"retained spectrum carries variance {captured:.9f}, expected 1 "
            f"(cutoff {top:.3g}, Nyquist {nyquist:.3g})")
    return n_fft, omega_step, np.sqrt(w)


def synthesize_path(model: CorrelationModel, span: float, dzeta: float, seed=0, *,
                    zeta0: float = 0.0, batch: int | None = None, derivatives: int = 3,
                    oversampling: float = 2.0, clip: float | None = None,
                    period: float | None = None, streams=None) -> NoisePath:
    """Stationary Gaussian sample path by spectral superposition.

    ``nu(zeta) = sum_m a_m [xi_m cos(omega_m zeta) + eta_m sin(omega_m zeta)]``
    with i.i.d. standard normal ``xi, eta``; derivatives come from the same
    sum differentiated term by term. The sum is evaluated with an FFT on a
    period of ``oversampling * span``.

    ``seed`` is anything accepted by :func:`numpy.random.default_rng`. With
    ``batch`` set, that many independent paths are drawn from the stream.
    ``streams`` instead gives one seed per path, so each path is the same
    whatever batch it is drawn in. ``clip`` bounds the values of ``nu``
    (not its derivatives).
    """
    n_fft, dw, amp = spectral_weights(model, span, dzeta, oversampling, period=period)
    n_grid = int(math.ceil(span / dzeta - 1e-9)) + 1
    nm = len(amp)
    if streams is not None:
        shape = (len(streams),)
        xi = np.empty(shape + (nm,))
        eta = np.empty(shape + (nm,))
        for i, st in enumerate(streams):
            r = np.random.default_rng(st)
            xi[i] = r.standard_normal(nm)
            eta[i] = r.standard_normal(nm)
    else:
        rng = np.random.default_rng(seed)
        shape = (batch,) if batch is not None else ()
        xi = rng.standard_normal(shape + (nm,))
        eta = rng.standard_normal(shape + (nm,))
    coef = amp * (xi - 1j * eta)
    omega = dw * np.arange(nm)
    # grid starts at zeta0: shift the phase so values are stationary in zeta
    coef = coef * np.exp(1j * omega * zeta0)
    out = np.empty((derivatives + 1,) + shape + (n_grid,))
    spec = np.zeros(shape + (n_fft,), dtype=complex)
    for p in range(derivatives + 1):
        spec[..., :nm] = coef * (1j * omega) ** p
        vals = sfft.ifft(spec, axis=-1, workers=1)[..., :n_grid].real * n_fft
        out[p] = vals
    if clip is not None:
        np.clip(out[0], -clip, clip, out=out[0])
    return NoisePath(zeta0=float(zeta0), dzeta=float(dzeta), values=out, seed=seed,
                     n_modes=nm, omega_step=dw)
