"""Slow waveguide geometry: width profiles, mode counts and turning points.

All lengths are in one consistent unit (wavelengths in the shipped presets).
The opening ``D(z)`` is non-decreasing in ``z``; the source sits at ``z = 0``
and the guide is considered on ``[-z_max, z_max]``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import bisect

from .errors import NonMonotoneProfile, SourceOnTurningPoint, ValidationError

PROFILE_KINDS = (
    "linear-ramp-with-cubic-caps",
    "piecewise-linear",
    "tabulated-with-monotone-interpolation",
    "constant",
)

# relative slack when deciding that k*D/pi sits exactly on an integer
_INTEGER_SNAP = 1e-12


def _hermite_cap(z0: float, z1: float, d0: float, s0: float, d1: float, s1: float):
    """Cubic Hermite polynomial on [z0, z1] matching values and slopes."""
    h = z1 - z0

    def value(z):
        u = (z - z0) / h
        h00 = 2 * u**3 - 3 * u**2 + 1
        h10 = u**3 - 2 * u**2 + u
        h01 = -2 * u**3 + 3 * u**2
        h11 = u**3 - u**2
        return h00 * d0 + h10 * h * s0 + h01 * d1 + h11 * h * s1

    def slope(z):
        u = (z - z0) / h
        dh00 = (6 * u**2 - 6 * u) / h
        dh10 = 3 * u**2 - 4 * u + 1
        dh01 = (-6 * u**2 + 6 * u) / h
        dh11 = 3 * u**2 - 2 * u
        return dh00 * d0 + dh10 * s0 + dh01 * d1 + dh11 * s1

    return value, slope


@dataclass(frozen=True)
class WidthProfile:
    """Opening of the waveguide as a function of arc length.

    Build instances with :meth:`linear`, :meth:`piecewise_linear`,
    :meth:`tabulated` or :meth:`constant`; the constructor is not meant to be
    called directly.

    Attributes
    ----------
    kind : str
        One of :data:`PROFILE_KINDS`.
    z_start, z_end : float
        Bounds of the region where ``D`` is strictly increasing.
    d_flat_left, d_flat_right : float
        Values of ``D`` on the flat extensions.
    cap : float
        Width of the transition caps (zero for kinds without caps).
    params : dict
        Kind-specific description, used for serialization.
    """

    kind: str
    z_start: float
    z_end: float
    d_flat_left: float
    d_flat_right: float
    cap: float
    params: dict
    _value: Callable = field(repr=False, compare=False)
    _slope: Callable = field(repr=False, compare=False)

    # ------------------------------------------------------------ builders
    @classmethod
    def constant(cls, d: float) -> "WidthProfile":
        """Straight guide of constant opening ``d``."""
        if not d > 0:
            raise ValidationError("width must be positive")
        d = float(d)
        return cls(
            "constant", 0.0, 0.0, d, d, 0.0, {"d": d},
            lambda z: np.full_like(np.asarray(z, dtype=float), d),
            lambda z: np.zeros_like(np.asarray(z, dtype=float)),
        )

    @classmethod
    def linear(
        cls,
        z_start: float,
        z_end: float,
        d_start: float,
        d_end: float,
        cap: float = 0.0,
        d_flat_left: float | None = None,
        d_flat_right: float | None = None,
    ) -> "WidthProfile":
        """Linear ramp from ``d_start`` to ``d_end`` with C1 cubic caps.

        The caps occupy ``[z_start - cap, z_start]`` and ``[z_end, z_end + cap]``
        and join the ramp to the flat values. When the flat values are not
        given they default to continuing the ramp for half a cap width, which
        makes the cap a quadratic easing.
        """
        if not z_end > z_start:
            raise ValidationError("linear profile needs z_end > z_start")
        if not (d_start > 0 and d_end > d_start):
            raise ValidationError("linear profile needs 0 < d_start < d_end")
        if cap < 0:
            raise ValidationError("cap width must be non-negative")
        s = (d_end - d_start) / (z_end - z_start)
        if d_flat_left is None:
            d_flat_left = d_start - 0.5 * s * cap
        if d_flat_right is None:
            d_flat_right = d_end + 0.5 * s * cap
        if cap == 0 and (d_flat_left != d_start or d_flat_right != d_end):
            raise ValidationError("flat values must equal the ramp ends when cap = 0")
        if not (0 < d_flat_left <= d_start and d_flat_right >= d_end):
            raise ValidationError("flat values must bracket the ramp")
        pieces = []
        if cap > 0:
            lv, ls = _hermite_cap(z_start - cap, z_start, d_flat_left, 0.0, d_start, s)
            rv, rs = _hermite_cap(z_end, z_end + cap, d_end, s, d_flat_right, 0.0)
            pieces = [(lv, ls), (rv, rs)]
            # a Hermite cap may overshoot; monotone caps are required
            for (fv, fs), a in zip(pieces, (z_start - cap, z_end)):
                uu = np.linspace(a, a + cap, 2001)
                if np.any(fs(uu) < -1e-15):
                    raise NonMonotoneProfile("cubic cap is not monotone for these flat values")

        def value(z):
            z = np.asarray(z, dtype=float)
            out = d_start + s * (z - z_start)
            out = np.where(z <= z_start - cap, d_flat_left, out)
            out = np.where(z >= z_end + cap, d_flat_right, out)
            if cap > 0:
                lmask = (z > z_start - cap) & (z < z_start)
                rmask = (z > z_end) & (z < z_end + cap)
                out = np.where(lmask, pieces[0][0](z), out)
                out = np.where(rmask, pieces[1][0](z), out)
            return out

        def slope(z):
            z = np.asarray(z, dtype=float)
            out = np.full_like(z, s)
            out = np.where((z <= z_start - cap) | (z >= z_end + cap), 0.0, out)
            if cap > 0:
                lmask = (z > z_start - cap) & (z < z_start)
                rmask = (z > z_end) & (z < z_end + cap)
                out = np.where(lmask, pieces[0][1](z), out)
                out = np.where(rmask, pieces[1][1](z), out)
            return out

        params = dict(z_start=z_start, z_end=z_end, d_start=d_start, d_end=d_end,
                      cap=cap, d_flat_left=d_flat_left, d_flat_right=d_flat_right)
        return cls("linear-ramp-with-cubic-caps", float(z_start), float(z_end),
                   float(d_flat_left), float(d_flat_right), float(cap), params, value, slope)

    @classmethod
    def piecewise_linear(cls, z: Sequence[float], d: Sequence[float]) -> "WidthProfile":
        """Continuous piecewise-linear profile through the nodes ``(z, d)``.

        The slope is discontinuous at interior nodes; at a node the slope of
        the segment to its right is reported.
        """
        z = np.asarray(z, dtype=float)
        d = np.asarray(d, dtype=float)
        _check_nodes(z, d)
        slopes = np.diff(d) / np.diff(z)

        def value(x):
            return np.interp(x, z, d)

        def slope(x):
            x = np.asarray(x, dtype=float)
            idx = np.searchsorted(z, x, side="right") - 1
            inside = (idx >= 0) & (idx < len(slopes))
            return np.where(inside, slopes[np.clip(idx, 0, len(slopes) - 1)], 0.0)

        return cls("piecewise-linear", float(z[0]), float(z[-1]), float(d[0]), float(d[-1]),
                   0.0, {"z": z.tolist(), "d": d.tolist()}, value, slope)

    @classmethod
    def tabulated(cls, z: Sequence[float], d: Sequence[float]) -> "WidthProfile":
        """Monotone cubic (PCHIP) interpolation of tabulated ``(z, d)``."""
        z = np.asarray(z, dtype=float)
        d = np.asarray(d, dtype=float)
        _check_nodes(z, d)
        interp = PchipInterpolator(z, d, extrapolate=False)
        deriv = interp.derivative()
        z0, z1 = z[0], z[-1]

        def value(x):
            x = np.asarray(x, dtype=float)
            return np.where(x <= z0, d[0], np.where(x >= z1, d[-1], interp(np.clip(x, z0, z1))))

        def slope(x):
            x = np.asarray(x, dtype=float)
            inside = (x > z0) & (x < z1)
            return np.where(inside, deriv(np.clip(x, z0, z1)), 0.0)

        return cls("tabulated-with-monotone-interpolation", float(z0), float(z1),
                   float(d[0]), float(d[-1]), 0.0, {"z": z.tolist(), "d": d.tolist()},
                   value, slope)

    @classmethod
    def from_csv(cls, path: str | Path) -> "WidthProfile":
        """Read a two-column ``z,D`` CSV (header optional) as a tabulated profile."""
        zs, ds = [], []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    zs.append(float(row[0]))
                    ds.append(float(row[1]))
                except ValueError:
                    if zs:
                        raise ValidationError(f"bad row in profile table: {row}")
        return cls.tabulated(zs, ds)

    # ------------------------------------------------------------ evaluation
    def d_at(self, z):
        """Opening ``D(z)``."""
        out = self._value(z)
        return float(out) if np.ndim(out) == 0 else out

    def d_prime_at(self, z):
        """Slope ``D'(z)``."""
        out = self._slope(z)
        return float(out) if np.ndim(out) == 0 else out

    @property
    def varying_region(self) -> tuple[float, float]:
        """Interval outside of which ``D`` is constant."""
        return self.z_start - self.cap, self.z_end + self.cap

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}


def _check_nodes(z: np.ndarray, d: np.ndarray) -> None:
    if z.ndim != 1 or z.shape != d.shape or len(z) < 2:
        raise ValidationError("profile table needs at least two (z, D) rows")
    if np.any(np.diff(z) <= 0):
        raise ValidationError("profile z values must be strictly increasing")
    if np.any(d <= 0):
        raise ValidationError("profile D values must be positive")
    if np.any(np.diff(d) <= 0):
        raise NonMonotoneProfile("profile D values must be strictly increasing")


def evaluate_width(profile: WidthProfile, z: float) -> tuple[float, float]:
    """Return ``(D(z), D'(z))``; flat extensions give a zero slope."""
    return profile.d_at(z), profile.d_prime_at(z)


def _snap_count(x: float) -> int:
    n = math.floor(x)
    r = round(x)
    if abs(x - r) <= _INTEGER_SNAP * max(1.0, abs(x)):
        return int(r)
    return int(n)


def mode_count(k: float, profile: WidthProfile | float, z: float = 0.0) -> int:
    """Number of propagating modes ``floor(k D(z) / pi)``.

    ``profile`` may also be a plain width. Values of ``k D / pi`` within
    round-off of an integer are snapped to it, so a guide sitting exactly on
    a threshold reports the larger count.
    """
    if not k > 0:
        raise ValidationError("k must be positive")
    d = profile.d_at(z) if isinstance(profile, WidthProfile) else float(profile)
    return _snap_count(k * d / math.pi)


def airy_length(k: float, profile: WidthProfile, z: float) -> float:
    """Transition length ``(2 k^2 D'/D)^(-1/3)`` of the turning mode at ``z``."""
    d, dp = evaluate_width(profile, z)
    if dp <= 0:
        raise NonMonotoneProfile(f"D' must be positive at the turning point z = {z}")
    return (2.0 * k * k * dp / d) ** (-1.0 / 3.0)


@dataclass(frozen=True)
class Sector:
    """Interval between consecutive turning points (or domain ends).

    ``z_left < z_right``. ``left_turning`` / ``right_turning`` tell whether
    the corresponding end is a turning point. On the left side of the source
    the turning mode (index ``n_modes``) is lost at ``z_left``; on the right
    side a new mode appears at ``z_left``.
    """

    index: int
    side: str
    z_left: float
    z_right: float
    n_modes: int
    left_turning: bool
    right_turning: bool

    @property
    def length(self) -> float:
        return self.z_right - self.z_left


@dataclass(frozen=True)
class SectorLayout:
    """Turning points and per-sector mode counts of a guide."""

    k: float
    z_max: float
    left_turning_points: tuple[float, ...]
    right_turning_points: tuple[float, ...]
    n0: int
    n_min: int
    n_max: int
    z_source: float = 0.0

    def left_sectors(self) -> list[Sector]:
        """Sectors from the source towards ``-z_max``; index ``t`` starts at 1."""
        ends = (0.0,) + self.left_turning_points + (-self.z_max,)
        out = []
        for t in range(1, len(ends)):
            out.append(Sector(
                index=t, side="left", z_left=ends[t], z_right=ends[t - 1],
                n_modes=self.n0 - (t - 1),
                left_turning=t <= len(self.left_turning_points),
                right_turning=t >= 2,
            ))
        return out

    def right_sectors(self) -> list[Sector]:
        """Sectors from the source towards ``+z_max``."""
        ends = (0.0,) + self.right_turning_points + (self.z_max,)
        out = []
        for t in range(1, len(ends)):
            out.append(Sector(
                index=t, side="right", z_left=ends[t - 1], z_right=ends[t],
                n_modes=self.n0 + (t - 1),
                left_turning=t >= 2,
                right_turning=t <= len(self.right_turning_points),
            ))
        return out

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "z_max": self.z_max,
            "left_turning_points": list(self.left_turning_points),
            "right_turning_points": list(self.right_turning_points),
            "n0": self.n0,
            "n_min": self.n_min,
            "n_max": self.n_max,
        }


def find_turning_points(
    k: float,
    profile: WidthProfile,
    z_max: float,
    *,
    source_margin: float = 1e-6,
    rel_tol: float = 1e-12,
) -> SectorLayout:
    """Locate the turning points of ``profile`` on ``(-z_max, z_max)``.

    Each turning point is the unique root of ``k D(z) - pi j`` found by
    bisection; uniqueness follows from monotonicity of ``D``.

    Raises
    ------
    SourceOnTurningPoint
        If ``k D(0) / pi`` lies within ``source_margin`` of an integer.
    NonMonotoneProfile
        If ``D'`` is not positive somewhere inside the varying region.
    """
    if not k > 0:
        raise ValidationError("k must be positive")
    if not z_max > 0:
        raise ValidationError("z_max must be positive")
    x0 = k * profile.d_at(0.0) / math.pi
    if abs(x0 - round(x0)) < source_margin:
        raise SourceOnTurningPoint(
            f"k D(0)/pi = {x0:.12g} is within {source_margin:g} of an integer")

    a, b = profile.varying_region
    if profile.kind != "constant" and b > a:
        # bracketing scan of the strictly increasing part
        zz = np.linspace(profile.z_start, profile.z_end, 4097)[1:-1]
        if np.any(profile.d_prime_at(zz) <= 0):
            raise NonMonotoneProfile("D' <= 0 detected inside the varying region")

    n0 = _snap_count(x0)
    xtol = rel_tol * max(1.0, z_max)
    lo, hi = max(a, -z_max), min(b, z_max)

    def root(level: float, za: float, zb: float) -> float:
        g = lambda z: k * profile.d_at(z) - math.pi * level
        ga, gb = g(za), g(zb)
        if ga == 0.0:
            return za
        if gb == 0.0:
            return zb
        return bisect(g, za, zb, xtol=xtol, maxiter=500)

    left: list[float] = []
    n = n0
    if lo < 0:
        while n >= 1 and k * profile.d_at(-z_max) < math.pi * n:
            z = root(n, lo, min(hi, 0.0))
            if not z > -z_max:
                break
            left.append(z)
            n -= 1
    right: list[float] = []
    n = n0
    if hi > 0:
        while k * profile.d_at(z_max) >= math.pi * (n + 1):
            z = root(n + 1, max(lo, 0.0), hi)
            if not z < z_max:
                break
            right.append(z)
            n += 1

    n_min = n0 - len(left)
    n_max = n0 + len(right)
    return SectorLayout(k=float(k), z_max=float(z_max), left_turning_points=tuple(left),
                        right_turning_points=tuple(right), n0=n0, n_min=n_min, n_max=n_max)
