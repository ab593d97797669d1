"""Transverse eigenproblem of the Dirichlet strip ``|rho| <= D/2``.

Eigenfunctions are ``y_j = sqrt(2/D) sin((2 rho + D) mu_j / 2)`` with
``mu_j = pi j / D``; mode ``j`` propagates when ``mu_j < k``.

The module also carries a suite of closed-form eigenfunction integrals that
the coupling coefficients are built from, checked against adaptive
quadrature by :func:`identity_residuals`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
from scipy.integrate import IntegrationWarning, quad

from .errors import NotEvanescent, NotPropagating, OutOfCrossSection, ValidationError


def mu(j, D):
    """Transverse wavenumber ``pi j / D``."""
    return np.pi * np.asarray(j, dtype=float) / D if np.ndim(j) else math.pi * j / D


def beta_propagating(k: float, j: int, D: float) -> float:
    """Axial wavenumber ``sqrt(k^2 - mu_j^2)`` of a propagating mode."""
    m = mu(j, D)
    if not k > m:
        raise NotPropagating(f"mode {j} does not propagate (k = {k}, mu = {m})")
    return math.sqrt((k - m) * (k + m))


def beta_evanescent(k: float, j: int, D: float) -> float:
    """Decay rate ``sqrt(mu_j^2 - k^2)`` of an evanescent mode."""
    m = mu(j, D)
    if not m > k:
        raise NotEvanescent(f"mode {j} is not evanescent (k = {k}, mu = {m})")
    return math.sqrt((m - k) * (m + k))


def betas(k: float, D: float, n: int) -> np.ndarray:
    """Axial wavenumbers of modes ``1..n`` (all must propagate)."""
    m = mu(np.arange(1, n + 1), D)
    if n and not k > m[-1]:
        raise NotPropagating(f"mode {n} does not propagate at D = {D}")
    return np.sqrt((k - m) * (k + m))


def eigenfunction(j: int, rho, D: float):
    """Value of ``y_j(rho)`` on a strip of width ``D``."""
    r = np.asarray(rho, dtype=float)
    if np.any(np.abs(r) > D / 2 * (1 + 1e-14)):
        raise OutOfCrossSection(f"|rho| must not exceed D/2 = {D / 2}")
    out = math.sqrt(2.0 / D) * np.sin((2 * r + D) * (math.pi * j / D) / 2)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ModeBasis:
    """Local mode set at wavenumber ``k`` and width ``D``."""

    k: float
    D: float

    @property
    def n_prop(self) -> int:
        from .geometry import mode_count

        return mode_count(self.k, self.D)

    def mu(self, j):
        return mu(j, self.D)

    def beta(self, j: int) -> float:
        if j <= self.n_prop:
            return beta_propagating(self.k, j, self.D)
        return beta_evanescent(self.k, j, self.D)


# ---------------------------------------------------------------- identities
#
# Each identity is an integral over the cross-section, written in the
# reduced variable u = rho / D + 1/2 in [0, 1], paired with its closed form.
# ``dprime`` is the slope D'(z) used by the z-derivative identity.

def _sign(j: int, q: int) -> int:
    return -1 if (j + q) % 2 else 1


def _closed_orthog(j, q, D, dprime):
    return 1.0 if j == q else 0.0


def _closed_odd(j, q, D, dprime):
    return 0.0


def _closed_weighted_grad(j, q, D, dprime):
    # int (2 rho + D) y_j d_rho y_q
    if j == q:
        return -1.0
    return -4.0 * j * q * _sign(j, q) / (j * j - q * q)


def _closed_z_derivative(j, q, D, dprime):
    # int y_j d_z y_q
    if j == q:
        return 0.0
    return dprime / D * j * q * (_sign(j, q) + 1) / (j * j - q * q)


def _closed_quadratic_weight(j, q, D, dprime):
    # int (2 rho + D)^2 y_j y_q, off-diagonal
    if j == q:
        return _closed_diag_quadratic(j, q, D, dprime)
    return 32.0 * D * D / math.pi**2 * j * q * _sign(j, q) / (j * j - q * q) ** 2


def _closed_grad(j, q, D, dprime):
    # int y_j d_rho y_q
    if j == q:
        return 0.0
    return 2.0 * j * q * (1 - _sign(j, q)) / (D * (j * j - q * q))


def _closed_linear_weight(j, q, D, dprime):
    # int (2 rho + D) y_j y_q
    if j == q:
        return D
    return -8.0 * D * j * q * (1 - _sign(j, q)) / (math.pi**2 * (j * j - q * q) ** 2)


def _closed_diag_quadratic(j, q, D, dprime):
    # int (2 rho + D)^2 y_j^2
    return D * D * (4.0 / 3.0 - 2.0 / (math.pi * j) ** 2)


def _y(j, u, D):
    return math.sqrt(2.0 / D) * np.sin(math.pi * j * u)


def _dy_rho(j, u, D):
    return math.sqrt(2.0 / D) * np.cos(math.pi * j * u) * math.pi * j / D


def _dy_width(j, u, D):
    # d/dD of y_j at fixed rho, written in u = rho/D + 1/2
    rho = (u - 0.5) * D
    return -_y(j, u, D) / (2 * D) - math.sqrt(2.0 / D) * np.cos(math.pi * j * u) * math.pi * j * rho / D**2


_Integrand = Callable[[int, int, float, float], Callable[[float], float]]

_INTEGRANDS: dict[str, _Integrand] = {
    "orthog": lambda j, q, D, dp: lambda u: _y(j, u, D) * _y(q, u, D),
    "odd": lambda j, q, D, dp: lambda u: (u - 0.5) * D * _y(j, u, D) ** 2,
    "weighted_grad": lambda j, q, D, dp: lambda u: 2 * u * D * _y(j, u, D) * _dy_rho(q, u, D),
    "z_derivative": lambda j, q, D, dp: lambda u: _y(j, u, D) * dp * _dy_width(q, u, D),
    "quadratic_weight": lambda j, q, D, dp: lambda u: (2 * u * D) ** 2 * _y(j, u, D) * _y(q, u, D),
    "grad": lambda j, q, D, dp: lambda u: _y(j, u, D) * _dy_rho(q, u, D),
    "linear_weight": lambda j, q, D, dp: lambda u: 2 * u * D * _y(j, u, D) * _y(q, u, D),
    "diag_quadratic": lambda j, q, D, dp: lambda u: (2 * u * D) ** 2 * _y(j, u, D) ** 2,
}

_CLOSED = {
    "orthog": _closed_orthog,
    "odd": _closed_odd,
    "weighted_grad": _closed_weighted_grad,
    "z_derivative": _closed_z_derivative,
    "quadratic_weight": _closed_quadratic_weight,
    "grad": _closed_grad,
    "linear_weight": _closed_linear_weight,
    "diag_quadratic": _closed_diag_quadratic,
}

#: names of the eigenfunction integral identities, in report order
IDENTITIES = tuple(_CLOSED)


@dataclass(frozen=True)
class IdentityResidual:
    identity: str
    j: int
    q: int
    D: float
    quadrature: float
    closed_form: float

    @property
    def residual(self) -> float:
        return abs(self.quadrature - self.closed_form)


def closed_form(identity: str, j: int, q: int, D: float, dprime: float = 1.0) -> float:
    """Closed-form value of one eigenfunction integral."""
    return _CLOSED[identity](j, q, D, dprime)


def quadrature_value(identity: str, j: int, q: int, D: float, dprime: float = 1.0,
                     tol: float = 1e-12) -> float:
    """Adaptive Gauss-Kronrod quadrature of one eigenfunction integral."""
    f = _INTEGRANDS[identity](j, q, D, dprime)
    # split at the oscillation scale so each panel holds a few periods
    panels = max(1, (j + q) // 4)
    edges = np.linspace(0.0, 1.0, panels + 1)
    total = 0.0
    with warnings.catch_warnings():
        # vanishing integrals trip the round-off detector; the residual is what counts
        warnings.simplefilter("ignore", IntegrationWarning)
        for a, b in zip(edges[:-1], edges[1:]):
            val, _ = quad(f, a, b, epsabs=tol / panels, epsrel=1e-13, limit=200)
            total += val
    return total * D


def identity_residuals(j: int, q: int, D: float, dprime: float = 1.0,
                       identities: Iterable[str] = IDENTITIES) -> list[IdentityResidual]:
    """Quadrature versus closed form for every identity at ``(j, q, D)``.

    Identities that only make sense on the diagonal (``odd``,
    ``diag_quadratic``) use ``q = j`` regardless of the ``q`` passed.
    """
    if j < 1 or q < 1:
        raise ValidationError("mode indices start at 1")
    if not D > 0:
        raise ValidationError("D must be positive")
    out = []
    for name in identities:
        qq = j if name in ("odd", "diag_quadratic") else q
        out.append(IdentityResidual(name, j, qq, D, quadrature_value(name, j, qq, D, dprime),
                                    closed_form(name, j, qq, D, dprime)))
    return out


def identity_suite(max_index: int = 30, widths: Iterable[float] = (0.5, 1.0, 20.25)
                   ) -> list[IdentityResidual]:
    """All identities for ``1 <= j, q <= max_index`` and each width."""
    rows = []
    for D in widths:
        for j in range(1, max_index + 1):
            for q in range(1, max_index + 1):
                names = IDENTITIES if q == j else tuple(
                    n for n in IDENTITIES if n not in ("odd", "diag_quadratic"))
                rows.extend(identity_residuals(j, q, D, identities=names))
    return rows
