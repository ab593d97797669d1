"""Command line front end.

``modeflux <subcommand> --config FILE --out DIR [--seed N] [--trajectories N]``

Subcommands: ``layout``, ``coefficients``, ``transport``, ``montecarlo``,
``validate``. Exit status 0 on success, 1 on invalid input, 2 on numerical
failure. Every run writes ``manifest.json`` next to its outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import RunConfig, config_hash, load_config, preset_path, to_ini, with_overrides
from .coupling import (
    KAPPA_SIGMA2_POLICY,
    CouplingProvider,
    forward_scattering_diagnostic,
    length_scales,
)
from .errors import ModefluxError, ValidationError
from .modes import identity_suite
from .transport import (
    SectorTrajectory,
    chain_sectors,
    collar_width,
    single_mode_amplitudes,
    source_amplitudes,
    summary,
)

SUBCOMMANDS = ("layout", "coefficients", "transport", "montecarlo", "validate")

#: residual bound of the eigenfunction identity table
IDENTITY_TOL = 1e-9


def _f(x) -> str:
    return format(float(x), ".17g")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(type(o).__name__)


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, default=_json_default) + "\n", encoding="utf-8")


class _Writer:
    """CSV writer with one header row and 17 significant digits."""

    def __init__(self, path: Path, header):
        self._fh = path.open("w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh)
        self._w.writerow(header)

    def row(self, *values):
        self._w.writerow([_f(v) if isinstance(v, (float, np.floating)) else v for v in values])

    def close(self):
        self._fh.close()


def _sector_label(tr_or_sector) -> str:
    s = getattr(tr_or_sector, "sector", tr_or_sector)
    return f"{'L' if s.side == 'left' else 'R'}{s.index}"


# ------------------------------------------------------------ subcommands

def run_layout(cfg: RunConfig, out: Path, base: Path | None) -> dict:
    layout = cfg.layout(base)
    problem = cfg.problem(base)
    settings = cfg.transport_settings()
    sectors = []
    for s in layout.left_sectors() + layout.right_sectors():
        sectors.append({"label": _sector_label(s), "z_left": s.z_left, "z_right": s.z_right,
                        "n_modes": s.n_modes, "left_turning": s.left_turning,
                        "right_turning": s.right_turning})
    collars = {str(t): collar_width(problem, t, settings)
               for t in layout.left_turning_points + layout.right_turning_points}
    info = {**layout.to_dict(), "sectors": sectors, "collar_widths": collars,
            "sector_scale": cfg.sector_scale}
    _dump(out / "layout.json", info)
    return {"turning_points": len(layout.left_turning_points) + len(layout.right_turning_points)}


def run_coefficients(cfg: RunConfig, out: Path, base: Path | None, points: int = 21) -> dict:
    layout = cfg.layout(base)
    problem = cfg.problem(base)
    settings = cfg.transport_settings()
    collars = {t: collar_width(problem, t, settings)
               for t in layout.left_turning_points + layout.right_turning_points}
    wc = _Writer(out / "coefficients.csv", ["z", "sector", "j", "l", "Gc", "G0", "Gs"])
    wk = _Writer(out / "kappa.csv", ["z", "sector", "j", "beta", "kappa", "kappa_tail_bound"])
    wl = _Writer(out / "length_scales.csv", ["z", "sector", "j", "L_smf", "L_tmf"])
    eq = []
    try:
        for s in layout.left_sectors() + layout.right_sectors():
            lo = s.z_left + (collars[s.z_left] if s.z_left in collars else 0.0)
            hi = s.z_right - (collars[s.z_right] if s.z_right in collars else 0.0)
            if hi <= lo:
                continue
            prov = CouplingProvider(problem.k, problem.sigma, problem.model, problem.profile,
                                    s.n_modes, corr_length=problem.corr_length,
                                    evanescent_cutoff=settings.evanescent_cutoff)
            lab = _sector_label(s)
            for z in np.linspace(lo, hi, points):
                cs = prov(z)
                n = cs.n_prop
                for j in range(n):
                    wk.row(z, lab, j + 1, cs.beta[j], cs.kappa[j], cs.kappa_tail[j])
                    for l in range(n):
                        wc.row(z, lab, j + 1, l + 1, cs.Gc[j, l], cs.G0[j, l], cs.Gs[j, l])
                if problem.sigma > 0:
                    ls = length_scales(cs)
                    for j in range(n):
                        wl.row(z, lab, j + 1, ls.smf[j], ls.tmf[j])
                    eq.append({"z": z, "sector": lab, "L_eq": ls.equipartition})
    finally:
        for w in (wc, wk, wl):
            w.close()
    d0 = float(problem.profile.d_at(0.0))
    diag = forward_scattering_diagnostic(problem.k, problem.model, d0,
                                         corr_length=problem.corr_length)
    info = {"equipartition": eq, "kappa_sigma2_policy": KAPPA_SIGMA2_POLICY,
            "forward_scattering": {"min_sum": diag.min_sum, "max_psd_at_sum": diag.max_psd_at_sum,
                                   "ratio": diag.ratio, "threshold": diag.threshold,
                                   "flagged": diag.flagged}}
    _dump(out / "coefficients.json", info)
    return {"forward_scattering_flagged": diag.flagged}


def _initial_amplitudes(cfg: RunConfig, base: Path | None):
    if cfg.source.mode is None:
        return None
    layout = cfg.layout(base)
    return single_mode_amplitudes(layout.n0, cfg.source.mode)


def _write_trajectories(out: Path, trs: list[SectorTrajectory]) -> None:
    wm = _Writer(out / "means.csv", ["z", "sector", "j", "re_mean_amp", "im_mean_amp", "abs_mean_amp"])
    wp = _Writer(out / "powers.csv", ["z", "sector", "j", "mean_power"])
    wq = _Writer(out / "moments.csv", ["z", "sector", "j", "l", "second_moment"])
    try:
        for tr in trs:
            lab = _sector_label(tr)
            n = tr.n_modes
            for i, z in enumerate(tr.z):
                b = tr.mean_amps[i]
                for j in range(n):
                    wm.row(z, lab, j + 1, b[j].real, b[j].imag, abs(b[j]))
                    wp.row(z, lab, j + 1, tr.mean_powers[i, j])
                M = tr.second_moments[i]
                for j in range(n):
                    for l in range(n):
                        wq.row(z, lab, j + 1, l + 1, M[j, l])
    finally:
        for w in (wm, wp, wq):
            w.close()


def run_transport(cfg: RunConfig, out: Path, base: Path | None) -> dict:
    layout = cfg.layout(base)
    ledger = chain_sectors(layout, cfg.source_spec(base), cfg.problem(base),
                           cfg.transport_settings(), initial=_initial_amplitudes(cfg, base))
    trs = list(ledger.left) + list(ledger.right)
    if "csv" in cfg.output.formats:
        _write_trajectories(out, trs)
    info = summary(ledger)
    info["sectors"] = [
        {"label": _sector_label(tr), "z": [tr.z[0], tr.z[-1]],
         "total_mean": [float(tr.total_mean[0]), float(tr.total_mean[-1])],
         "total_std": [float(tr.total_std[0]), float(tr.total_std[-1])],
         "through_mean_end": float(tr.through_mean()[-1]),
         "through_std_end": float(tr.through_std()[-1]),
         "power_active": list(tr.active), "amplitude_active": list(tr.amp_active)}
        for tr in trs
    ]
    _dump(out / "summary.json", info)
    return {"relative_balance_residual": info["global_balance"]["relative_residual"]}


def run_montecarlo(cfg: RunConfig, out: Path, base: Path | None) -> dict:
    from .montecarlo import McConfig, compare_to_moments, moment_reference, run_ensemble

    layout = cfg.layout(base)
    problem = cfg.problem(base)
    settings = cfg.transport_settings()
    m = cfg.mc
    first = layout.left_sectors()[0]
    z_start = m.z_start if m.z_start is not None else first.z_right
    if m.z_end is not None:
        z_end = m.z_end
    else:
        z_end = first.z_left
        if first.left_turning:
            z_end += collar_width(problem, first.z_left, settings)
    mc = McConfig(cfg.physics.epsilon, z_start, z_end, m.n_trajectories, m.step, m.seed,
                  m.include_sigma2_terms, m.include_slow_terms, m.n_checkpoints, m.batch_size,
                  m.clip)
    b0 = _initial_amplitudes(cfg, base)
    if b0 is None:
        b0, _ = source_amplitudes(cfg.source_spec(base), problem.k, float(problem.profile.d_at(0.0)))
    if z_start != 0.0 or len(b0) != first.n_modes:
        raise ValidationError("the ensemble starts at the source and stays in the first sector")
    stats = run_ensemble(b0, problem, mc)
    ref = moment_reference(b0, problem, stats.z, rtol=settings.rtol, atol=settings.atol)
    rep = compare_to_moments(stats, ref)
    rep["drift_constant"] = stats.drift_constant
    rep["n_trajectories"] = stats.n
    w = _Writer(out / "ensemble.csv", ["z", "j", "emp_mean_power", "std_err",
                                      "emp_mean_amp_re", "emp_mean_amp_im"])
    try:
        mp, se, ma = stats.mean_power, stats.power_std_err, stats.mean_amplitude
        for c, z in enumerate(stats.z):
            for j in range(mp.shape[1]):
                w.row(z, j + 1, mp[c, j], se[c, j], ma[c, j].real, ma[c, j].imag)
    finally:
        w.close()
    _dump(out / "compare.json", rep)
    return {"power_pass": rep["power_pass"], "variance_pass": rep["variance_pass"]}


def run_validate(cfg: RunConfig | None, out: Path) -> dict:
    rows = identity_suite()
    worst = max(r.residual for r in rows)
    w = _Writer(out / "identities.csv", ["identity", "j", "q", "D", "quadrature", "closed_form",
                                        "residual"])
    try:
        for r in rows:
            w.row(r.identity, r.j, r.q, float(r.D), r.quadrature, r.closed_form, r.residual)
    finally:
        w.close()
    by_name = {}
    for r in rows:
        by_name[r.identity] = max(by_name.get(r.identity, 0.0), r.residual)
    info = {"tolerance": IDENTITY_TOL, "max_residual": worst, "by_identity": by_name,
            "rows": len(rows), "pass": worst < IDENTITY_TOL}
    _dump(out / "validate.json", info)
    if worst >= IDENTITY_TOL:
        raise _IdentityFailure(f"identity residual {worst:.3e} exceeds {IDENTITY_TOL:g}")
    return {"max_residual": worst}


class _IdentityFailure(ModefluxError):
    code = "identity_residual"


# ------------------------------------------------------------------ driver

def _manifest(out: Path, subcommand: str, cfg: RunConfig | None, argv, result: dict) -> None:
    info = {
        "subcommand": subcommand,
        "argv": list(argv),
        "versions": {"modeflux": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "kappa_sigma2_policy": KAPPA_SIGMA2_POLICY,
        "result": result,
    }
    if cfg is not None:
        info.update({"config_sha256": config_hash(cfg), "config": to_ini(cfg),
                     "seeds": {"mc": cfg.mc.seed}})
    _dump(out / "manifest.json", info)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="modeflux", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"modeflux {__version__}")
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="configuration file or shipped preset name",
                       required=name != "validate")
        s.add_argument("--out", help="run directory (default: output.directory)")
        s.add_argument("--seed", type=int)
        s.add_argument("--trajectories", type=int)
        s.add_argument("--force", action="store_true", help="reuse a directory with a manifest")
        if name == "coefficients":
            s.add_argument("--points", type=int, default=21, help="positions per sector")
    return p


def _load(arg: str) -> tuple[RunConfig, Path]:
    path = Path(arg)
    if not path.exists():
        try:
            path = preset_path(arg)
        except ValidationError:
            raise ValidationError(f"configuration file {arg!r} not found") from None
    return load_config(path), path.resolve().parent


def run(subcommand: str, cfg: RunConfig | None, out_dir: Path, *, base: Path | None = None,
        argv=(), force: bool = False, points: int = 21) -> int:
    """Execute one subcommand; returns the exit status."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if (out_dir / "manifest.json").exists() and not force:
        raise ValidationError(f"{out_dir} already holds a run; pass --force to overwrite")
    if subcommand == "validate":
        result = run_validate(cfg, out_dir)
    elif cfg is None:
        raise ValidationError(f"{subcommand} needs --config")
    elif subcommand == "layout":
        result = run_layout(cfg, out_dir, base)
    elif subcommand == "coefficients":
        result = run_coefficients(cfg, out_dir, base, points)
    elif subcommand == "transport":
        result = run_transport(cfg, out_dir, base)
    elif subcommand == "montecarlo":
        result = run_montecarlo(cfg, out_dir, base)
    else:
        raise ValidationError(f"unknown subcommand {subcommand!r}")
    _manifest(out_dir, subcommand, cfg, argv, result)
    return 0


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    try:
        cfg, base = (None, None)
        if args.config is not None:
            cfg, base = _load(args.config)
            cfg = with_overrides(cfg, seed=args.seed, trajectories=args.trajectories)
        out = Path(args.out) if args.out else Path(cfg.output.directory if cfg else "out")
        status = run(args.subcommand, cfg, out, base=base, argv=argv, force=args.force,
                     points=getattr(args, "points", 21))
    except ModefluxError as e:
        print(f"modeflux: {e.code}: {e}", file=sys.stderr)
        return e.exit_status
    except OSError as e:
        print(f"modeflux: io: {e}", file=sys.stderr)
        return 1
    print(f"modeflux {args.subcommand}: ok ({out})")
    return status


if __name__ == "__main__":
    sys.exit(main())
