"""Batch front end: ``run``, ``compare``, ``convergence`` and ``presets``."""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .accounting import (
    arrival_distribution,
    detector_distribution,
    signed_flux_cumulative,
)
from .config import RunConfig, load_preset, parse_config, preset_names, preset_text
from .convergence import GaussianScenario, convergence_study
from .errors import ConfigError, NumericalError, ToaError
from .engines.run import run_evolution
from .oracles import gaussian_2d, make_backflow_state, wave_on_grid
from .output import distribution_rows, write_csv, write_json, write_plot_script

log = logging.getLogger("ideal_toa")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_FLAGS = 0, 2, 3, 4
COMPARE_SNAPSHOTS = 10
MONOTONE_TOL = 1e-12
VALIDITY_FLAGS = ("far_wall_contaminated", "resolution_warning")


class UsageError(ConfigError):
    pass


# -- shared pieces -------------------------------------------------------------------


def load_config(source) -> RunConfig:
    """A config path, a preset name, or an already parsed config."""
    if isinstance(source, RunConfig):
        return source
    path = Path(source)
    if path.is_file():
        return parse_config(path.read_text(encoding="utf-8"))
    if str(source) in preset_names():
        return load_preset(str(source))
    raise ConfigError(f"no config file or preset named {source!r}")


def initial_state(cfg: RunConfig):
    grid, c = cfg.grid(), cfg.constants
    if cfg["state.kind"] == "backflow":
        if grid.dim != 1:
            raise ConfigError("the backflow state is 1D only", key="state.kind")
        return make_backflow_state(
            cfg["state.k1"], cfg["state.k2"], (cfg["state.w1"], cfg["state.w2"]), cfg["state.s"], cfg["state.x0"],
            grid=grid, c=c,
        )
    p = cfg.gaussian()
    if grid.dim == 2:
        return gaussian_2d(p, grid, cfg["state.sy"], cfg["state.ky"], cfg["state.y0"], c)
    return wave_on_grid(p, grid, c)


def state_spec(cfg: RunConfig, wave) -> dict:
    keys = [k for k, _ in cfg.values if k.startswith("state.")]
    spec = {k.split(".", 1)[1]: cfg[k] for k in keys}
    witness = getattr(wave, "witness", None)
    if witness is not None:
        spec["backflow_witness"] = {"x": witness[0], "t": witness[1], "flux": witness[2]}
        spec["backflow_scan"] = wave.box
    return spec


def manifest(cfg: RunConfig, kind, wave, horizon, outputs, flags, extra=None) -> dict:
    c = cfg.constants
    out = {
        "config_hash": cfg.hash(),
        "config": cfg.as_dict(),
        "engine": kind,
        "grid": cfg.grid().describe(),
        "initial_state": state_spec(cfg, wave),
        "constants": {"hbar": c.hbar, "mass": c.mass},
        "horizon": horizon,
        "outputs": sorted(outputs),
        "flags": flags,
        "tool_version": __version__,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
    }
    if extra:
        out.update(extra)
    return out


def _run_engine(args):
    cfg, kind = args
    wave = initial_state(cfg)
    ecfg = cfg.engine(kind)
    if kind != cfg["engine.kind"] or ecfg.stride == 0:
        ecfg = dataclasses.replace(ecfg, stride=max(1, ecfg.steps // COMPARE_SNAPSHOTS))
    return wave, run_evolution(wave, None, ecfg)


# -- run -----------------------------------------------------------------------------


def record_rows(rec):
    flux = (rec.flux * rec.area[None, :]).sum(axis=1)
    mass = rec.step_mass().sum(axis=1)
    budget = rec.interior + rec.surface - 1.0
    rows = [(0, rec.times[0], None, None, rec.interior[0], rec.surface[0], budget[0])]
    for i in range(rec.n_steps):
        rows.append((i + 1, rec.times[i + 1], flux[i], mass[i], rec.interior[i + 1], rec.surface[i + 1], budget[i + 1]))
    return rows


RECORD_HEADER = ("step", "t", "flux", "dsigma_mass", "interior_prob", "surface_prob", "budget_error")


def cmd_run(source, out_dir) -> dict:
    """Run one engine and write record, distributions, manifest and plot script."""
    cfg = load_config(source)
    out = Path(out_dir)
    h = cfg.hash()
    wave = initial_state(cfg)
    ecfg = cfg.engine()
    log.info("running %s for %d steps of %g", ecfg.kind, ecfg.steps, ecfg.dt)
    rec = run_evolution(wave, None, ecfg)
    flags = dict(rec.flags)
    written = {}
    written["record"] = write_csv(out / "record.csv", RECORD_HEADER, record_rows(rec), h, flags)
    result = {"record": rec, "flags": flags}
    if rec.absorbing:
        arr = arrival_distribution(rec, cfg["output.bin_width"], ecfg.stop_threshold)
        flags["never_arrived_label"] = arr.never_label
        written["arrival"] = write_csv(
            out / "arrival.csv", ("bin_left", "bin_right", "mass"), distribution_rows(arr.edges, arr.mass, arr.never), h, flags
        )
        result["arrival"] = arr
        if rec.grid.dim == 2:
            dd = detector_distribution(rec, cfg["output.surface_bins"], cfg["output.bin_width"])
            y = rec.grid.y
            rows = []
            for g, row in zip(dd.surface_groups, dd.mass):
                for i, m in enumerate(row):
                    rows.append((y[g[0]], y[g[-1]], dd.time_edges[i], dd.time_edges[i + 1], m))
            rows.append(("never", None, None, None, dd.never))
            written["detector"] = write_csv(
                out / "detector.csv", ("y_first", "y_last", "bin_left", "bin_right", "mass"), rows, h, flags
            )
            result["detector"] = dd
    else:
        flags["arrival_semantics"] = "not an absorbing detector: no arrival distribution"
    written["plot"] = write_plot_script(out / "plot.py")
    names = [p.name for p in written.values()] + ["manifest.json"]
    written["manifest"] = write_json(out / "manifest.json", manifest(cfg, ecfg.kind, wave, rec.horizon, names, flags))
    result["paths"] = written
    return result


# -- compare -------------------------------------------------------------------------


def _curve(rec):
    if rec.absorbing:
        return "T_" + rec.engine, rec.surface - rec.surface[0]
    if rec.engine == "robin":
        return "robin_loss", rec.interior[0] - rec.interior
    return "daumer_" + rec.engine, signed_flux_cumulative(rec)


def _monotone(values) -> bool:
    return bool(np.all(np.diff(values) >= -MONOTONE_TOL))


def _backflow_window(times, daumer):
    """(start, end) of the longest run of decreasing Daumer cumulative, or None."""
    dec = np.diff(daumer) < -MONOTONE_TOL
    if not dec.any():
        return None
    edges = np.diff(np.concatenate([[0], dec.astype(int), [0]]))
    starts, ends = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    depth = [daumer[a] - daumer[b] for a, b in zip(starts, ends)]
    k = int(np.argmax(depth))
    return float(times[starts[k]]), float(times[ends[k]])


def _density(field_, nx):
    if hasattr(field_, "psi"):
        return np.abs(field_.grid.as_rows(field_.psi)[:nx, 0]) ** 2
    return np.asarray(field_.rho[:nx])


def density_gap(rec_a, rec_b) -> float:
    """Max L1 distance between region densities at snapshot times both records share."""
    grid = rec_a.grid
    w = grid.wx[: grid.nx]
    worst = 0.0
    for sa in rec_a.snapshots:
        for sb in rec_b.snapshots:
            if abs(sa.t - sb.t) < 1e-9 * max(1.0, abs(sa.t)):
                worst = max(worst, float(w @ np.abs(_density(sa.field, grid.nx) - _density(sb.field, grid.nx))))
    return worst


def cmd_compare(source, out_dir, jobs: int = 1) -> dict:
    cfg = load_config(source)
    kinds = list(cfg["compare.engines"])
    if len(kinds) < 2:
        raise UsageError("compare needs at least two engines in compare.engines", key="compare.engines")
    out = Path(out_dir)
    h = cfg.hash()
    tasks = [(cfg, k) for k in kinds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_engine, tasks))
    else:
        results = [_run_engine(t) for t in tasks]
    wave = results[0][0]
    records = {k: r for k, (_, r) in zip(kinds, results)}

    horizon = cfg.horizon
    samples = np.linspace(0.0, horizon, cfg["output.samples"]) + float(wave.t)
    curves, full = {}, {}
    for k, rec in records.items():
        name, values = _curve(rec)
        full[name] = (rec.times, values)
        curves[name] = np.interp(samples, rec.times, values)
    names = list(curves)
    gaps = {}
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            ta, va = full[a]
            tb, vb = full[b]
            fine = ta if ta.size >= tb.size else tb
            gaps[f"{a} vs {b}"] = float(np.max(np.abs(np.interp(fine, ta, va) - np.interp(fine, tb, vb))))
    report = {
        "engines": kinds,
        "sup_gaps": gaps,
        "monotone": {n: _monotone(v) for n, (_, v) in full.items()},
        "flags": {k: r.flags for k, r in records.items()},
    }
    daumer = next((n for n in names if n.startswith("daumer_")), None)
    ideal = next((n for n in names if n.startswith("T_")), None)
    if daumer and ideal:
        window = _backflow_window(*full[daumer])
        report["backflow_window"] = window
        if window is not None:
            t_end = window[1]
            gap = float(np.interp(t_end, *full[ideal]) - np.interp(t_end, *full[daumer]))
            report["post_window_gap"] = gap
    if "ideal-detector-psi" in records and "ideal-detector-hydro" in records:
        report["density_l1_gap"] = density_gap(records["ideal-detector-psi"], records["ideal-detector-hydro"])

    flags = {"engines": {k: r.flags for k, r in records.items()}}
    rows = [[t] + [curves[n][i] for n in names] for i, t in enumerate(samples)]
    written = {
        "compare_csv": write_csv(out / "compare.csv", ["t"] + names, rows, h, flags),
        "compare_json": write_json(out / "compare.json", dict(report, config_hash=h)),
        "plot": write_plot_script(out / "plot.py"),
    }
    names_out = [p.name for p in written.values()] + ["manifest.json"]
    written["manifest"] = write_json(
        out / "manifest.json", manifest(cfg, kinds, wave, horizon, names_out, flags)
    )
    report["paths"] = written
    report["records"] = records
    return report


# -- convergence -----------------------------------------------------------------------


def scenario_from(cfg: RunConfig) -> GaussianScenario:
    if cfg["state.kind"] != "gaussian" or cfg.grid().dim != 1:
        raise ConfigError("convergence studies need a 1D Gaussian scenario", key="state.kind")
    return GaussianScenario(
        cfg.gaussian(), cfg["grid.x_far"], cfg["grid.buffer"], cfg.horizon, cfg["engine.window"], cfg.constants
    )


def cmd_convergence(source, out_dir, jobs: int = 1):
    cfg = load_config(source)
    if not cfg["convergence.ladder"]:
        raise UsageError("convergence.ladder is empty", key="convergence.ladder")
    rep = convergence_study(scenario_from(cfg), cfg["engine.kind"], cfg["convergence.ladder"], jobs)
    out = Path(out_dir)
    h = cfg.hash()
    flags = {"passed": rep.passed, "non_convergent": rep.non_convergent, "flagged_rungs": len(rep.flagged)}
    path = write_json(out / "convergence.json", dict(rep.to_dict(), config_hash=h))
    wave = initial_state(cfg)
    write_json(out / "manifest.json", manifest(cfg, rep.kind, wave, cfg.horizon, ["convergence.json", "manifest.json"], flags))
    return rep, path


# -- command line ------------------------------------------------------------------------


def _strict_failures(flags: dict) -> list:
    return [k for k in VALIDITY_FLAGS if flags.get(k)] + ([] if flags.get("tail_ok", True) else ["tail_ok"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ideal-toa", description="Arrival-time simulations with an ideal detector.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, text in (
        ("run", "run one engine and write record and distributions"),
        ("compare", "run several engines on one scenario and compare cumulative arrival curves"),
        ("convergence", "run a refinement ladder against the analytic oracle"),
    ):
        p = sub.add_parser(verb, help=text)
        p.add_argument("--config", required=True, help="config file or preset name")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--quiet", action="store_true")
        p.add_argument("--strict", action="store_true", help="exit 4 when a validity flag is raised")
    p = sub.add_parser("presets", help="list shipped presets or print one")
    p.add_argument("name", nargs="?")
    p.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    try:
        if args.verb == "presets":
            if args.name:
                sys.stdout.write(preset_text(args.name))
            else:
                print("\n".join(preset_names()))
            return EXIT_OK
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        if args.verb == "run":
            res = cmd_run(args.config, args.out)
            bad = _strict_failures(res["flags"])
            if not args.quiet:
                print(f"wrote {', '.join(str(p) for p in res['paths'].values())}")
        elif args.verb == "compare":
            rep = cmd_compare(args.config, args.out, args.jobs)
            bad = [f"{k}:{f}" for k, fl in rep["flags"].items() for f in _strict_failures(fl)]
            bad += [f"{n} non-monotone" for n, ok in rep["monotone"].items() if n.startswith("T_") and not ok]
            if not args.quiet:
                for k, v in rep["sup_gaps"].items():
                    print(f"sup gap {k}: {v:.3e}")
                for k, v in rep["monotone"].items():
                    print(f"{k}: {'monotone' if v else 'NON-MONOTONE'}")
                if "post_window_gap" in rep:
                    print(f"post-window gap: {rep['post_window_gap']:.3e}")
                if "density_l1_gap" in rep:
                    print(f"density L1 gap (psi vs hydro): {rep['density_l1_gap']:.3e}")
        else:
            rep, path = cmd_convergence(args.config, args.out, args.jobs)
            bad = [] if rep.passed else [f"fitted order {rep.order:.3f} < {rep.min_order}"]
            if not args.quiet:
                print(f"fitted order {rep.order:.3f} ({rep.primary}); finest error {rep.finest_error():.3e}; wrote {path}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error [{exc.category}]: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ToaError as exc:
        print(f"error [{exc.category}]: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if bad and args.strict:
        print(f"validity flags raised: {', '.join(bad)}", file=sys.stderr)
        return EXIT_FLAGS
    if bad:
        log.warning("validity flags raised: %s", ", ".join(bad))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
