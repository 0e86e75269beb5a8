"""Command-line interface.

Subcommands: spectrum, simulate, correlate, fit, run, sweep.
Exit codes: 0 success, 2 config error, 3 pipeline error, 4 fit
non-convergence.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import scenarios
from .config import ConfigError, load_scenario
from .correlate import cross_correlate, normalize, pulsed_peak_analysis
from .fitting import FitConvergenceError, fit as run_fit, initial_guess
from .pipeline import (
    PipelineError,
    _Artifacts,
    _write_report,
    power_sweep,
    run_scenario,
    spectrum_run,
)
from .tagio import (
    TagFileError,
    read_histogram_csv,
    read_timetags,
    read_xy_csv,
    write_histogram_csv,
    write_timetags,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PIPELINE = 3
EXIT_FIT = 4


def _resolve_config(value: str) -> str:
    """Accept a path on disk or the name of a bundled scenario."""
    if os.path.exists(value):
        return value
    try:
        return scenarios.path(value)
    except FileNotFoundError:
        raise ConfigError("--config", f"no such file or bundled scenario: {value}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="antibunch",
        description="simulate and analyze single-photon-source photon statistics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", required=True, help="scenario file or bundled name")
        p.add_argument("--out-dir", required=True)
        if seed:
            p.add_argument("--seed", type=int, default=None)
        p.add_argument("--plots", action="store_true", help="emit SVG charts")
        p.add_argument("--threads", type=int, default=1)

    common(sub.add_parser("run", help="full scenario pipeline"))
    common(sub.add_parser("simulate", help="simulate and write time-tag files"))
    common(sub.add_parser("spectrum", help="resonance sweep and quality-factor fit"))

    p = sub.add_parser("correlate", help="correlate a time-tag file into a histogram")
    common(p, seed=False)
    p.add_argument("--tags", required=True, help="time-tag file (channels A and B)")

    p = sub.add_parser("fit", help="fit a model to a histogram CSV")
    p.add_argument("--model", required=True, choices=["g2cw", "monoexp", "lorentzian", "peaks"])
    p.add_argument("--input", required=True, help="CSV file to fit")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--rep-period-ps", type=float, default=None, help="peaks model only")

    p = sub.add_parser("sweep", help="detected count rate against drive power")
    common(p)
    p.add_argument("--powers", default=None, help="comma-separated powers (mW)")

    return parser


def _cmd_run(args) -> int:
    run_scenario(
        _resolve_config(args.config),
        args.out_dir,
        seed_override=args.seed,
        plots=args.plots,
        threads=args.threads,
    )
    return EXIT_OK


def _cmd_simulate(args) -> int:
    scenario = load_scenario(_resolve_config(args.config))
    outputs = tuple(set(scenario.outputs) | {"timetags"})
    from dataclasses import replace

    run_scenario(
        replace(scenario, outputs=outputs),
        args.out_dir,
        seed_override=args.seed,
        plots=args.plots,
        threads=args.threads,
    )
    return EXIT_OK


def _cmd_spectrum(args) -> int:
    scenario = load_scenario(_resolve_config(args.config))
    spectrum_run(scenario, args.out_dir, seed_override=args.seed)
    return EXIT_OK


def _cmd_correlate(args) -> int:
    scenario = load_scenario(_resolve_config(args.config))
    streams = read_timetags(args.tags, duration_ps=scenario.duration_ps)
    hist = cross_correlate(
        streams["A"], streams["B"], scenario.correlation, threads=args.threads
    )
    g2, g2_err = normalize(hist)
    art = _Artifacts(args.out_dir)
    write_histogram_csv(art.path("histogram.csv"), hist, g2, g2_err)
    print(f"wrote {art.path('histogram.csv')} ({hist.total_pairs} pairs)")
    return EXIT_OK


def _cmd_fit(args) -> int:
    art = _Artifacts(args.out_dir)
    if args.model == "peaks":
        if args.rep_period_ps is None:
            raise ConfigError("--rep-period-ps", "required for the peaks model")
        hist = read_histogram_csv(args.input)
        result = pulsed_peak_analysis(hist, args.rep_period_ps)
        entries = [
            ("raw_g2_zero", result.g2_zero, result.g2_zero_sigma),
            ("decay_rate_ns_inv", result.decay_rate, None),
            ("overlap_warning", result.overlap_warning, None),
            ("chi2_per_dof", result.fit_result.chi2_per_dof, None),
        ]
        _write_report(art, "pulsed peak-area analysis", entries)
        print(f"g2_zero = {result.g2_zero:.4f} +- {result.g2_zero_sigma:.4f}")
        return EXIT_OK

    if args.model == "g2cw":
        hist = read_histogram_csv(args.input)
        x = hist.centers_ps * 1e-3
        y = hist.counts.astype(float)
    elif args.model == "monoexp":
        from .tagio import read_decay_csv

        decay = read_decay_csv(args.input)
        x = decay.centers_ps * 1e-3
        y = decay.counts.astype(float)
    else:  # lorentzian
        x, y, _ = read_xy_csv(args.input)

    result = run_fit(initial_guess(args.model, x, y), x, y).require_converged()
    entries = [
        (name, result.params[name], result.sigmas[name]) for name in result.model.names
    ]
    entries.append(("chi2_per_dof", result.chi2_per_dof, None))
    if args.model == "lorentzian":
        entries.append(("q_factor", result.model.q_factor, None))
    _write_report(art, f"{args.model} fit", entries)
    for name in result.model.names:
        print(f"{name} = {result.params[name]:.6g} +- {result.sigmas[name]:.3g}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    scenario = load_scenario(_resolve_config(args.config))
    powers = None
    if args.powers:
        try:
            powers = [float(p) for p in args.powers.split(",") if p.strip()]
        except ValueError:
            raise ConfigError("--powers", "expected comma-separated numbers")
    power_sweep(scenario, powers_mw=powers, out_dir=args.out_dir, seed_override=args.seed)
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "simulate": _cmd_simulate,
    "spectrum": _cmd_spectrum,
    "correlate": _cmd_correlate,
    "fit": _cmd_fit,
    "sweep": _cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FitConvergenceError as exc:
        print(f"fit did not converge: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (PipelineError, TagFileError, OSError, ValueError) as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
