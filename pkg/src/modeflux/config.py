"""Run configuration: INI text in, validated settings and library objects out.

Lengths are in wavelengths when ``k = 2 pi``; any consistent unit works.
Every key is documented in :data:`SCHEMA`; unknown sections or keys are
errors, reported with their line and column.
"""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .correlation import CorrelationModel, GaussianCorrelation, TabulatedSpectrumCorrelation
from .errors import ParseError, ValidationError
from .geometry import SectorLayout, WidthProfile, find_turning_points
from .transport import SourceSpec, TransportProblem, TransportSettings


@dataclass(frozen=True)
class GeometryConfig:
    profile: str = "linear"
    z_max: float = 0.0
    d: float | None = None
    z_start: float | None = None
    z_end: float | None = None
    d_start: float | None = None
    d_end: float | None = None
    cap: float = 0.0
    d_flat_left: float | None = None
    d_flat_right: float | None = None
    nodes_z: tuple[float, ...] = ()
    nodes_d: tuple[float, ...] = ()
    csv: str | None = None


@dataclass(frozen=True)
class PhysicsConfig:
    k: float = 0.0
    sigma: float = 0.0
    epsilon: float = 0.0
    corr_length: float = 1.0
    correlation: str = "gaussian"
    spectrum_csv: str | None = None


@dataclass(frozen=True)
class SourceConfig:
    f_real: float = 1.0
    f_imag: float = 0.0
    rho_star: float | None = None
    rho_fraction: float | None = None
    mode: int | None = None


@dataclass(frozen=True)
class NumericsConfig:
    rtol: float = 1e-10
    atol: float = 1e-14
    delta_factor: float = 10.0
    delta: float | None = None
    evanescent_cutoff: int = 200
    n_out: int = 200
    method: str = "RK45"
    right_side: bool = True


@dataclass(frozen=True)
class McSection:
    n_trajectories: int = 2000
    step: float | None = None
    seed: int = 0
    include_sigma2_terms: bool = False
    include_slow_terms: bool = True
    n_checkpoints: int = 10
    batch_size: int = 250
    clip: float | None = None
    z_start: float | None = None
    z_end: float | None = None


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    formats: tuple[str, ...] = ("csv", "json")


@dataclass(frozen=True)
class RunConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    source: SourceConfig = field(default_factory=SourceConfig)
    numerics: NumericsConfig = field(default_factory=NumericsConfig)
    mc: McSection = field(default_factory=McSection)
    output: OutputConfig = field(default_factory=OutputConfig)

    # ---------------------------------------------------------- builders
    def profile(self, base: Path | None = None) -> WidthProfile:
        g = self.geometry
        if g.profile == "constant":
            return WidthProfile.constant(g.d)
        if g.profile == "linear":
            return WidthProfile.linear(g.z_start, g.z_end, g.d_start, g.d_end, g.cap,
                                       g.d_flat_left, g.d_flat_right)
        if g.profile == "piecewise_linear":
            return WidthProfile.piecewise_linear(g.nodes_z, g.nodes_d)
        if g.profile == "tabulated":
            if g.csv is not None:
                return WidthProfile.from_csv(_resolve(g.csv, base))
            return WidthProfile.tabulated(g.nodes_z, g.nodes_d)
        raise ValidationError(f"unknown profile kind {g.profile!r}")

    def model(self, base: Path | None = None) -> CorrelationModel:
        p = self.physics
        if p.correlation == "gaussian":
            return GaussianCorrelation()
        return TabulatedSpectrumCorrelation.from_csv(_resolve(p.spectrum_csv, base))

    def problem(self, base: Path | None = None) -> TransportProblem:
        p = self.physics
        return TransportProblem(p.k, p.sigma, self.model(base), self.profile(base), p.corr_length)

    def layout(self, base: Path | None = None) -> SectorLayout:
        return find_turning_points(self.physics.k, self.profile(base), self.geometry.z_max)

    def source_spec(self, base: Path | None = None) -> SourceSpec:
        s = self.source
        f = complex(s.f_real, s.f_imag)
        if s.rho_star is not None:
            return SourceSpec(f, s.rho_star)
        d0 = float(self.profile(base).d_at(0.0))
        return SourceSpec(f, (s.rho_fraction or 0.0) * d0)

    def transport_settings(self) -> TransportSettings:
        n = self.numerics
        return TransportSettings(rtol=n.rtol, atol=n.atol, n_out=n.n_out,
                                 delta_factor=n.delta_factor, delta=n.delta, method=n.method,
                                 evanescent_cutoff=n.evanescent_cutoff, right_side=n.right_side)

    @property
    def sector_scale(self) -> float:
        """``L = ell / epsilon``."""
        return self.physics.corr_length / self.physics.epsilon


# Keys per section: name -> (field, type). Types: float, int, bool, str,
# optional variants (trailing '?') and comma separated float lists.
SCHEMA: dict[str, dict[str, str]] = {
    "geometry": {
        "profile": "str", "z_max": "float", "d": "float?", "z_start": "float?",
        "z_end": "float?", "d_start": "float?", "d_end": "float?", "cap": "float",
        "d_flat_left": "float?", "d_flat_right": "float?", "nodes_z": "floats",
        "nodes_d": "floats", "csv": "str?",
    },
    "physics": {
        "k": "float", "sigma": "float", "epsilon": "float", "corr_length": "float",
        "correlation": "str", "spectrum_csv": "str?",
    },
    "source": {
        "f_real": "float", "f_imag": "float", "rho_star": "float?",
        "rho_fraction": "float?", "mode": "int?",
    },
    "numerics": {
        "rtol": "float", "atol": "float", "delta_factor": "float", "delta": "float?",
        "evanescent_cutoff": "int", "n_out": "int", "method": "str", "right_side": "bool",
    },
    "mc": {
        "n_trajectories": "int", "step": "float?", "seed": "int",
        "include_sigma2_terms": "bool", "include_slow_terms": "bool",
        "n_checkpoints": "int", "batch_size": "int", "clip": "float?",
        "z_start": "float?", "z_end": "float?",
    },
    "output": {"directory": "str", "formats": "strs"},
}

_SECTION_TYPES = {
    "geometry": GeometryConfig, "physics": PhysicsConfig, "source": SourceConfig,
    "numerics": NumericsConfig, "mc": McSection, "output": OutputConfig,
}

_REQUIRED = {"geometry": ("profile", "z_max"), "physics": ("k", "sigma", "epsilon")}

_BOOLS = {"true": True, "yes": True, "on": True, "1": True,
          "false": False, "no": False, "off": False, "0": False}


def _locate(text: str) -> dict[tuple[str, str | None], tuple[int, int]]:
    """Line and column of every section header and key."""
    where: dict[tuple[str, str | None], tuple[int, int]] = {}
    section = None
    for ln, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            where.setdefault((section, None), (ln, raw.index("[") + 1))
            continue
        if section is not None:
            for sep in ("=", ":"):
                if sep in raw:
                    key = raw.split(sep, 1)[0].strip().lower()
                    where.setdefault((section, key), (ln, len(raw) - len(raw.lstrip()) + 1))
                    break
    return where


def _convert(kind: str, value: str, pos):
    optional = kind.endswith("?")
    base = kind.rstrip("?")
    v = value.strip()
    if optional and v.lower() in ("", "none"):
        return None
    try:
        if base == "float":
            return float(v)
        if base == "int":
            return int(v)
        if base == "bool":
            return _BOOLS[v.lower()]
        if base == "str":
            return v
        if base == "floats":
            return tuple(float(x) for x in v.replace("\n", ",").split(",") if x.strip())
        if base == "strs":
            return tuple(x.strip() for x in v.split(",") if x.strip())
    except (ValueError, KeyError):
        pass
    raise ParseError(f"cannot read {value!r} as {base}", *pos)


def parse_config(text: str) -> RunConfig:
    """Parse and validate configuration text.

    Raises
    ------
    ParseError
        On malformed text, unknown sections or keys, or unreadable values.
    ValidationError
        If a value violates an invariant.
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as e:
        raise ParseError("text before the first section header", e.lineno, 1) from None
    except configparser.DuplicateSectionError as e:
        raise ParseError(f"duplicate section [{e.section}]", e.lineno, 1) from None
    except configparser.DuplicateOptionError as e:
        raise ParseError(f"duplicate key {e.option!r} in [{e.section}]", e.lineno, 1) from None
    except configparser.ParsingError as e:
        ln = e.errors[0][0] if e.errors else None
        raise ParseError("malformed line", ln, 1) from None
    where = _locate(text)
    sections = {}
    for name in cp.sections():
        if name not in SCHEMA:
            raise ParseError(f"unknown section [{name}]", *where.get((name, None), (None, None)))
        values = {}
        for key, raw in cp.items(name):
            pos = where.get((name, key), (None, None))
            if key not in SCHEMA[name]:
                raise ParseError(f"unknown key {key!r} in [{name}]", *pos)
            values[key] = _convert(SCHEMA[name][key], raw, pos)
        for key in _REQUIRED.get(name, ()):
            if key not in values:
                raise ValidationError(f"[{name}] requires {key!r}")
        sections[name] = _SECTION_TYPES[name](**values)
    for name, keys in _REQUIRED.items():
        if name not in sections:
            raise ValidationError(f"section [{name}] is required (needs {', '.join(keys)})")
    cfg = RunConfig(**sections)
    validate_config(cfg)
    return cfg


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def validate_config(cfg: RunConfig) -> None:
    """Check every invariant that does not need the numerics."""
    p, g, s, n, m = cfg.physics, cfg.geometry, cfg.source, cfg.numerics, cfg.mc
    if not p.k > 0:
        raise ValidationError("physics.k must be positive")
    if not p.sigma >= 0 or not math.isfinite(p.sigma):
        raise ValidationError("physics.sigma must be non-negative")
    if not 0 < p.epsilon <= 0.1:
        raise ValidationError("physics.epsilon must lie in (0, 0.1]")
    if not p.corr_length > 0:
        raise ValidationError("physics.corr_length must be positive")
    if p.correlation not in ("gaussian", "tabulated"):
        raise ValidationError("physics.correlation must be 'gaussian' or 'tabulated'")
    if p.correlation == "tabulated" and not p.spectrum_csv:
        raise ValidationError("a tabulated correlation needs physics.spectrum_csv")
    if not g.z_max > 0:
        raise ValidationError("geometry.z_max must be positive")
    need = {"constant": ("d",), "linear": ("z_start", "z_end", "d_start", "d_end")}
    if g.profile not in ("constant", "linear", "piecewise_linear", "tabulated"):
        raise ValidationError(f"unknown geometry.profile {g.profile!r}")
    for key in need.get(g.profile, ()):
        if getattr(g, key) is None:
            raise ValidationError(f"profile {g.profile!r} needs geometry.{key}")
    if g.profile in ("piecewise_linear",) or (g.profile == "tabulated" and g.csv is None):
        if len(g.nodes_z) < 2 or len(g.nodes_z) != len(g.nodes_d):
            raise ValidationError("nodes_z and nodes_d must be equally long lists (>= 2 nodes)")
    if s.rho_star is not None and s.rho_fraction is not None:
        raise ValidationError("give source.rho_star or source.rho_fraction, not both")
    if s.rho_fraction is not None and not abs(s.rho_fraction) < 0.5:
        raise ValidationError("source.rho_fraction must satisfy |rho_fraction| < 1/2")
    if s.mode is not None and s.mode < 1:
        raise ValidationError("source.mode starts at 1")
    if not (0 < n.rtol < 1 and n.atol > 0):
        raise ValidationError("numerics tolerances must be positive and rtol < 1")
    if n.n_out < 2 or n.evanescent_cutoff < 0:
        raise ValidationError("numerics.n_out >= 2 and evanescent_cutoff >= 0 are required")
    if n.delta is not None and n.delta < 0:
        raise ValidationError("numerics.delta must be non-negative")
    if m.n_trajectories < 2:
        raise ValidationError("mc.n_trajectories must be at least 2")
    if m.step is not None and not 0 < m.step <= p.epsilon / 10 * (1 + 1e-12):
        raise ValidationError("mc.step must satisfy 0 < step <= epsilon / 10")
    bad = set(cfg.output.formats) - {"csv", "json"}
    if bad:
        raise ValidationError(f"unknown output formats {sorted(bad)}")


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def to_ini(cfg: RunConfig) -> str:
    """Canonical text that re-parses to an identical configuration."""
    out = []
    for name in SCHEMA:
        sec = getattr(cfg, name)
        out.append(f"[{name}]")
        for f in fields(sec):
            out.append(f"{f.name} = {_fmt(getattr(sec, f.name))}")
        out.append("")
    return "\n".join(out)


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(to_ini(cfg).encode()).hexdigest()


def with_overrides(cfg: RunConfig, *, seed: int | None = None,
                   trajectories: int | None = None) -> RunConfig:
    mc = cfg.mc
    if seed is not None:
        mc = replace(mc, seed=seed)
    if trajectories is not None:
        mc = replace(mc, n_trajectories=trajectories)
    out = replace(cfg, mc=mc)
    validate_config(out)
    return out


def _resolve(path: str | None, base: Path | None) -> Path:
    if path is None:
        raise ValidationError("a file path is required")
    p = Path(path)
    return p if p.is_absolute() or base is None else base / p


PRESETS = ("paper-fig3", "paper-fig6-left", "paper-fig6-right")


def preset_path(name: str) -> Path:
    """Location of a shipped preset (``name`` with or without ``.cfg``)."""
    stem = name[:-4] if name.endswith(".cfg") else name
    if stem not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return Path(__file__).parent / "presets" / f"{stem}.cfg"


def load_preset(name: str) -> RunConfig:
    return load_config(preset_path(name))
