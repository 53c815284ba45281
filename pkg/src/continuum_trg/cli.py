"""Command line front end: run flows and sweeps and write traces and plot data.

Outputs (in ``--output-dir``):

* ``flow_trace.csv``: level, chi_pre, chi_post, b_1..b_max (padded), cdl_distance,
  log_const (and log_const1 at order 1);
* ``omega_trace.csv``: level, i, omega2, omega4 (order 1 with ``--diagnostics``);
* ``fig2_data.csv``: mass, chi_max, delta_f0, delta_f1, one row per sweep point;
* ``summary.json``: configuration echo, free energies, relative errors, CDL onset, wall time.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 filesystem failure.
"""
import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import NumericalError, ValidationError, InvalidConfig

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_FILESYSTEM = 0, 2, 3, 4
THREADS_ENV = "CONTINUUM_TRG_THREADS"


def fmt(x):
    """Round-trip exact text of a float (17 significant digits); empty for ``None``."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".17g")


def parse_mass_sweep(text):
    """``a:b:logN`` gives ``N`` log-spaced masses from ``a`` to ``b``; otherwise a comma list."""
    if not text:
        return ()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3 or not parts[2].startswith("log"):
            raise InvalidConfig(f"mass sweep must look like a:b:logN, got {text!r}")
        try:
            lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2][3:])
        except ValueError as exc:
            raise InvalidConfig(f"bad mass sweep {text!r}") from exc
        if lo <= 0 or hi <= 0 or n < 1:
            raise InvalidConfig(f"bad mass sweep {text!r}")
        return tuple(float(m) for m in np.geomspace(lo, hi, n))
    try:
        return tuple(float(m) for m in text.split(","))
    except ValueError as exc:
        raise InvalidConfig(f"bad mass list {text!r}") from exc


def parse_int_list(text):
    if not text:
        return ()
    try:
        return tuple(int(c) for c in text.split(","))
    except ValueError as exc:
        raise InvalidConfig(f"bad integer list {text!r}") from exc


def build_parser():
    p = argparse.ArgumentParser(prog="continuum-trg", description="Continuous-field TRG for the 2D lattice boson.")
    p.add_argument("--mass", type=float, default=1.0)
    p.add_argument("--order", type=int, default=0, choices=(0, 1))
    p.add_argument("--chi-max", type=int, default=16)
    p.add_argument("--sites-exponent", type=int, default=20, help="N = 2**(2k) vertices")
    p.add_argument("--zero-tol", type=float, default=1e-10)
    p.add_argument("--emit", default="csv,json", help="comma list of csv, json")
    p.add_argument("--oracle", action="store_true", help="compare with the exact infinite-lattice values")
    p.add_argument("--sweep-mass", default="", help="a:b:logN or comma list")
    p.add_argument("--sweep-chi", default="", help="comma list of bond dimensions")
    p.add_argument("--diagnostics", action="store_true", help="record omega vectors (order 1)")
    p.add_argument("--output-dir", default="out")
    p.add_argument("--seed", type=int, default=0)
    return p


def config_from_args(args):
    cfg = RunConfig(mass=args.mass, order=args.order, chi_max=args.chi_max,
                    sites_exponent=args.sites_exponent, zero_tol=args.zero_tol,
                    output_dir=Path(args.output_dir),
                    emit=tuple(e for e in args.emit.split(",") if e),
                    sweep_masses=parse_mass_sweep(args.sweep_mass),
                    sweep_chis=parse_int_list(args.sweep_chi),
                    oracle=args.oracle, diagnostics=args.diagnostics, seed=args.seed)
    return cfg.validate()


def run_single(config):
    """Run one flow; returns ``(report, trace)``."""
    if config.order == 0:
        from .free_trg import run_free_flow
        return run_free_flow(config)
    from .pert_trg import run_pert_flow
    return run_pert_flow(config)


def _sweep_point(args):
    config, mass, chi = args
    cfg = config.replace(mass=mass, chi_max=chi, oracle=True, diagnostics=False,
                         sweep_masses=(), sweep_chis=())
    report, _ = run_single(cfg)
    return report


def worker_count():
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise InvalidConfig(f"{THREADS_ENV} must be an integer, got {env!r}") from exc
        if n < 1:
            raise InvalidConfig(f"{THREADS_ENV} must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1


def run_sweep(config):
    """Reports for every (mass, chi) pair, in configuration order."""
    masses = config.sweep_masses or (config.mass,)
    chis = config.sweep_chis or (config.chi_max,)
    points = [(config, m, c) for m in masses for c in chis]
    workers = min(worker_count(), len(points))
    if workers <= 1:
        return [_sweep_point(p) for p in points]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sweep_point, points))


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_flow_trace(path, trace, order):
    width = max((len(r.singular_values) for r in trace), default=0)
    header = ["level", "chi_pre", "chi_post"] + [f"b_{i + 1}" for i in range(width)] + ["cdl_distance", "log_const"]
    if order == 1:
        header.append("log_const1")
    rows = []
    for r in trace:
        b = [fmt(v) for v in r.singular_values] + [""] * (width - len(r.singular_values))
        row = [r.level, r.chi_pre, r.chi_post] + b + [fmt(r.cdl_distance), fmt(r.log_const)]
        if order == 1:
            row.append(fmt(r.log_const1))
        rows.append(row)
    _write_csv(path, header, rows)


def write_omega_trace(path, trace):
    rows = []
    for r in trace:
        if r.omega2 is None:
            continue
        for i, (o2, o4) in enumerate(zip(r.omega2, r.omega4)):
            rows.append([r.level, i + 1, fmt(o2), fmt(o4)])
    _write_csv(path, ["level", "i", "omega2", "omega4"], rows)


def write_fig2(path, reports):
    rows = [[fmt(r.mass), r.chi_max, fmt(r.delta_f0), fmt(r.delta_f1)] for r in reports]
    _write_csv(path, ["mass", "chi_max", "delta_f0", "delta_f1"], rows)


def _report_dict(report):
    d = {"mass": report.mass, "chi_max": report.chi_max, "f0": report.f0, "delta_f0": report.delta_f0}
    if report.order == 1:
        d["f1"] = report.f1
        d["delta_f1"] = report.delta_f1
    d["cdl_onset"] = report.cdl_onset
    return d


def write_summary(path, config, reports, wall_time):
    data = {"config": config.to_dict()}
    if len(reports) == 1:
        data.update(_report_dict(reports[0]))
    else:
        data["points"] = [_report_dict(r) for r in reports]
    data["wall_time"] = wall_time
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(x):
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    raise TypeError(f"cannot serialize {type(x)}")


def run(config):
    """Execute the requested flows and write the outputs; returns an exit code."""
    t0 = time.perf_counter()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if config.sweep_masses or config.sweep_chis:
        reports = run_sweep(config)
        if "csv" in config.emit:
            write_fig2(out / "fig2_data.csv", reports)
    else:
        report, trace = run_single(config)
        reports = [report]
        if "csv" in config.emit:
            write_flow_trace(out / "flow_trace.csv", trace, config.order)
            if config.order == 1 and config.diagnostics:
                write_omega_trace(out / "omega_trace.csv", trace)
    if "json" in config.emit:
        write_summary(out / "summary.json", config, reports, time.perf_counter() - t0)
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    try:
        config = config_from_args(args)
        return run(config)
    except ValidationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"filesystem error: {exc}", file=sys.stderr)
        return EXIT_FILESYSTEM


if __name__ == "__main__":
    sys.exit(main())
