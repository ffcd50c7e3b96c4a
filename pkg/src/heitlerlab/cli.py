"""Command-line entry point: closed-form sweeps, simulation, correlation and fits.

Exit codes: 0 ok, 2 configuration error, 3 numerical error, 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys

import numpy as np

from . import __version__
from .analysis import g2_histogram, g3_histogram, radial_integrate, zero_delay_estimate
from .config import RunConfig, parse_grid
from .correlators import g_n_heitler, modulation_factor, sweep_rows
from .errors import HeitlerLabError, PoleError
from .model import SystemParams
from .phasescan import fit_phase_scan, read_trace_csv
from .tags import TagStream, read_tags, write_binary, write_csv
from .trajectory import simulate_tags

log = logging.getLogger("heitlerlab")

FIGURES = ("fig1d", "fig2", "fig3", "fig4")
FIG2_F = (0.0, 1.0, 2.94, 4.17)
FIG4_OMEGAS = (0.40, 0.28, 0.15)
FIG4_F = (0.0, 1.0, 2.0, 3.0, 4.0)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _provenance(rc: RunConfig) -> dict:
    return {"version": __version__, "config_sha256": rc.digest(), "seed": rc.seed}


def _write_csv(path, header, rows, rc: RunConfig):
    with open(path, "w", newline="") as fh:
        for key, value in _provenance(rc).items():
            fh.write(f"# {key}: {value}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _write_json(path, doc, rc: RunConfig):
    doc = {"provenance": _provenance(rc), **doc}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(type(v))


def _clean(x):
    """JSON-safe float (nan/inf become None)."""
    x = float(x)
    return x if math.isfinite(x) else None


def _outdir(rc: RunConfig) -> str:
    path = rc.output["dir"]
    os.makedirs(path, exist_ok=True)
    return path


def _save_config(rc: RunConfig, out):
    with open(os.path.join(out, "config.resolved.json"), "w") as fh:
        fh.write(rc.to_json() + "\n")


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def _cap(value, ceiling):
    if not math.isfinite(value) or value >= ceiling:
        return ceiling, True
    return value, False


def finite_sweep_rows(rc: RunConfig, params=None, f_grid=None):
    params = params or rc.system_params()
    f_grid = rc.f_grid() if f_grid is None else f_grid
    sw = rc.sweep
    orders = list(sw["orders"])
    header = ["F", "intensity"] + [f"g{n}" for n in orders] + ["divergent"] + [f"p{k}" for k in range(sw["n_probs"])]
    rows = []
    for r in sweep_rows(params, rc.homodyne().phi, f_grid, orders=orders, n_probs=sw["n_probs"]):
        flag = bool(r["divergent"])
        gs = []
        for n in orders:
            v, hit = _cap(r[f"g{n}"], sw["ceiling"])
            flag |= hit and n >= 2
            gs.append(v)
        rows.append([r["F"], r["intensity"], *gs, flag] + [r[f"p{k}"] for k in range(sw["n_probs"])])
    return header, rows


def heitler_sweep_rows(rc: RunConfig, f_grid=None):
    """Omega -> 0 limit at phi = pi: intensity in units of |<sigma>|^2, g(n), M_F(n)."""
    f_grid = rc.f_grid() if f_grid is None else f_grid
    sw = rc.sweep
    orders = list(sw["orders"])
    n_mod = sw["n_probs"] - 1
    header = ["F", "intensity"] + [f"g{n}" for n in orders] + ["divergent"] + [f"m{k}" for k in range(1, n_mod + 1)]
    rows = []
    for f in f_grid:
        f = float(f)
        flag = False
        gs = []
        for n in orders:
            try:
                v = g_n_heitler(f, n)
            except PoleError:
                v = math.inf
            v, hit = _cap(v, sw["ceiling"])
            flag |= hit and n >= 2
            gs.append(v)
        mods = [modulation_factor(f, k, leading_only=True) if f > 0 else float("nan") for k in range(1, n_mod + 1)]
        rows.append([f, (f - 1.0) ** 2, *gs, flag, *mods])
    return header, rows


def cmd_sweep(rc: RunConfig, args) -> int:
    out = _outdir(rc)
    _save_config(rc, out)
    header, rows = finite_sweep_rows(rc)
    _write_csv(os.path.join(out, "sweep_finite.csv"), header, rows, rc)
    header, rows = heitler_sweep_rows(rc)
    _write_csv(os.path.join(out, "sweep_heitler.csv"), header, rows, rc)
    log.info("wrote sweeps for %d F values to %s", len(rows), out)
    return 0


# ---------------------------------------------------------------------------
# simulation and correlation
# ---------------------------------------------------------------------------

def _tag_summary(tags: TagStream, uc) -> dict:
    counts = tags.counts()
    return {
        "records": len(tags),
        "counts": {str(k): v for k, v in counts.items()},
        "rate_per_gamma": len(tags) / uc.duration,
        "sha256": tags.digest(),
    }


def cmd_simulate(rc: RunConfig, args) -> int:
    out = _outdir(rc)
    _save_config(rc, out)
    uc = rc.unraveling()
    tags = simulate_tags(uc, rc.detector_chain(), workers=rc.workers)
    path = os.path.join(out, rc.output["tag_file"])
    if path.endswith(".csv"):
        write_csv(path, tags)
    else:
        write_binary(path, tags)
    _write_json(os.path.join(out, "simulate.json"), {"tag_file": path, **_tag_summary(tags, uc)}, rc)
    log.info("wrote %d tags to %s", len(tags), path)
    return 0


def analyze(tags: TagStream, rc: RunConfig, workers=None) -> dict:
    """Full correlation pipeline; returns histograms, profile and the summary dict."""
    a = rc.analysis
    res = {}
    h2 = g2_histogram(tags, a["g2_bin_ps"], a["g2_window_ns"] * 1e3, workers=workers)
    fine2 = g2_histogram(tags, a["zero_delay_bin_ps"], a["zero_delay_window_ns"] * 1e3, workers=workers)
    z2 = zero_delay_estimate(fine2, a["fit_half_width"])
    res["g2"] = h2
    summary = {
        "g2_0": z2.value,
        "g2_0_err": z2.sigma,
        "g2_0_raw": z2.raw,
        "g2_0_raw_err": z2.raw_sigma,
        "g2_baseline": h2.baseline,
        "g2_baseline_err": h2.baseline_err,
        "g2_bin_ps": h2.bin_width,
        "zero_delay_bin_ps": fine2.bin_width,
    }
    counts = tags.counts()
    if all(counts.get(c, 0) > 0 for c in (0, 1, 2)):
        h3 = g3_histogram(tags, a["g3_bin_ps"], a["g3_window_ns"] * 1e3, half_angle=a["half_angle"], workers=workers)
        res["g3"] = h3
        summary["g3_bin_ps"] = h3.bin_width
        summary["g3_baseline"] = _clean(h3.baseline)
        summary["g3_baseline_err"] = _clean(h3.baseline_err)
        try:
            # finer cells than the display histogram so the wedge reaches small tau*
            src = g3_histogram(
                tags, a["radial_source_bin_ps"], a["g3_window_ns"] * 1e3, half_angle=a["half_angle"], workers=workers
            )
            prof = radial_integrate(src, a["half_angle"], a["radial_bin_ps"])
            res["radial"] = prof
            g, err, n = prof.plateau(a["plateau_ps"])
            summary.update(radial_bin_ps=prof.bin_width, plateau_g3=_clean(g), plateau_g3_err=_clean(err), plateau_triples=n)
        except HeitlerLabError as exc:
            log.warning("radial integration skipped: %s", exc)
        fine3 = g3_histogram(tags, a["zero_delay_bin_ps"], a["zero_delay_window_ns"] * 1e3, half_angle=a["half_angle"], workers=workers)
        if fine3.baseline > 0:
            z3 = zero_delay_estimate(fine3, a["fit_half_width"])
            summary.update(g3_0=z3.value, g3_0_err=z3.sigma, g3_0_raw=z3.raw, g3_0_raw_err=z3.raw_sigma)
        else:
            log.warning("too few triples for a g3 baseline; g3(0) not reported")
    else:
        log.warning("fewer than three channels populated; g3 skipped")
    res["summary"] = {k: (_clean(v) if isinstance(v, float) else v) for k, v in summary.items()}
    return res


def _write_analysis(res, out, rc: RunConfig, prefix=""):
    h2 = res["g2"]
    _write_csv(
        os.path.join(out, f"{prefix}g2.csv"),
        ["bin_center_ps", "value", "sigma"],
        zip(h2.centers, h2.normalized(), h2.sigma()),
        rc,
    )
    if "g3" in res:
        h3 = res["g3"]
        c = h3.centers
        rows = ((c[i], c[j], int(h3.counts[i, j])) for i in range(len(c)) for j in range(len(c)))
        _write_csv(os.path.join(out, f"{prefix}g3_2d.csv"), ["tau1_ps", "tau2_ps", "counts"], rows, rc)
    if "radial" in res:
        p = res["radial"]
        _write_csv(
            os.path.join(out, f"{prefix}g3_radial.csv"),
            ["bin_center_ps", "value", "sigma"],
            zip(p.centers, p.values, p.sigma),
            rc,
        )
    _write_json(os.path.join(out, f"{prefix}summary.json"), res["summary"], rc)


def cmd_correlate(rc: RunConfig, args) -> int:
    out = _outdir(rc)
    _save_config(rc, out)
    tags = read_tags(args.tags)
    res = analyze(tags, rc, workers=rc.workers)
    _write_analysis(res, out, rc)
    log.info("g2(0) = %.4g +- %.2g", res["summary"]["g2_0"], res["summary"]["g2_0_err"])
    return 0


def cmd_fit_phase(rc: RunConfig, args) -> int:
    out = _outdir(rc)
    fit = fit_phase_scan(read_trace_csv(args.traces))
    e_coh, e_fl = fit.errors
    doc = {
        "i_coh": fit.i_coh,
        "i_coh_err": e_coh,
        "i_fluct": fit.i_fluct,
        "i_fluct_err": e_fl,
        "omega_est": fit.omega_est,
        "covariance": fit.covariance,
        "extrema": [
            {"F": e.f, "max": e.maximum, "max_err": e.max_err, "min": e.minimum, "min_err": e.min_err}
            for e in fit.extrema
        ],
    }
    _write_json(os.path.join(out, "phase_fit.json"), doc, rc)
    log.info("I_coh = %.4g, I_fluct = %.4g, Omega = %.4f", fit.i_coh, fit.i_fluct, fit.omega_est)
    return 0


# ---------------------------------------------------------------------------
# figure data
# ---------------------------------------------------------------------------

def _mc_point(rc: RunConfig, omega, f):
    run = rc.with_overrides(system={"omega": omega * rc.data["system"]["gamma"]}, homodyne={"f": f})
    uc = run.unraveling()
    tags = simulate_tags(uc, run.detector_chain(), workers=rc.workers)
    res = analyze(tags, run, workers=rc.workers)
    s = res["summary"]
    return res, [
        omega, f, len(tags) / uc.duration,
        s["g2_0"], s["g2_0_err"], s.get("g3_0", float("nan")), s.get("g3_0_err", float("nan")),
    ]


MC_HEADER = ["omega", "F", "rate_per_gamma", "g2_0", "g2_0_err", "g3_0", "g3_0_err"]


def cmd_reproduce(rc: RunConfig, args) -> int:
    out = _outdir(rc)
    _save_config(rc, out)
    fig = args.figure
    omega = rc.system_params().drive
    if fig == "fig1d":
        header, rows = heitler_sweep_rows(rc)
        _write_csv(os.path.join(out, "fig1d.csv"), header, rows, rc)
    elif fig == "fig2":
        header, rows = finite_sweep_rows(rc)
        keep = [header.index(c) for c in ("F", "intensity", "g2", "g3", "divergent")]
        _write_csv(os.path.join(out, "fig2_theory.csv"), [header[i] for i in keep], ([r[i] for i in keep] for r in rows), rc)
        mc = [_mc_point(rc, omega, f)[1] for f in FIG2_F]
        _write_csv(os.path.join(out, "fig2_mc.csv"), MC_HEADER, mc, rc)
    elif fig == "fig3":
        for f in FIG2_F:
            res, _ = _mc_point(rc, omega, f)
            _write_analysis(res, out, rc, prefix=f"fig3_F{f:g}_")
    elif fig == "fig4":
        mc = []
        for om in FIG4_OMEGAS:
            header, rows = finite_sweep_rows(rc, params=SystemParams(om))
            keep = [header.index(c) for c in ("F", "intensity", "g2", "g3", "divergent")]
            _write_csv(
                os.path.join(out, f"fig4_theory_omega{om:.2f}.csv"),
                [header[i] for i in keep],
                ([r[i] for i in keep] for r in rows),
                rc,
            )
            mc.extend(_mc_point(rc, om, f)[1] for f in FIG4_F)
        _write_csv(os.path.join(out, "fig4_mc.csv"), MC_HEADER, mc, rc)
    log.info("wrote %s data to %s", fig, out)
    return 0


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

def _common(p):
    p.add_argument("--config", metavar="PATH", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="master RNG seed")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--bin-ps", type=float, help="histogram bin width in ps (g2 and g3)")
    p.add_argument("--window-ns", type=float, help="histogram half-window in ns (g2 and g3)")
    p.add_argument("--f-grid", metavar="START:STOP:STEP", help="LO amplitude grid")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heitlerlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="closed-form intensity, g(n)(0) and p(n) versus F")
    _common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="quantum-jump simulation to a tag file")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("correlate", help="g2, g3 and radial profile from a tag file")
    _common(p)
    p.add_argument("tags", help="tag file (.qtg binary or .csv)")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("fit-phase", help="fit phase-scan traces (CSV: F,phase,plus,minus)")
    _common(p)
    p.add_argument("traces", help="trace CSV")
    p.set_defaults(func=cmd_fit_phase)

    p = sub.add_parser("reproduce", help="regenerate the data behind a figure")
    _common(p)
    p.add_argument("figure", choices=FIGURES)
    p.set_defaults(func=cmd_reproduce)
    return parser


def resolve_config(args) -> RunConfig:
    rc = RunConfig.load(args.config) if args.config else RunConfig.from_dict({})
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out is not None:
        over["output"] = {"dir": args.out}
    analysis = {}
    if args.bin_ps is not None:
        analysis.update(g2_bin_ps=args.bin_ps, g3_bin_ps=args.bin_ps)
    if args.window_ns is not None:
        analysis.update(g2_window_ns=args.window_ns, g3_window_ns=args.window_ns)
    if analysis:
        over["analysis"] = analysis
    if args.f_grid is not None:
        parse_grid(args.f_grid)
        over["sweep"] = {"f_grid": args.f_grid}
    return rc.with_overrides(**over) if over else rc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        rc = resolve_config(args)
        return args.func(rc, args)
    except HeitlerLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
