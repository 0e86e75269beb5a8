"""End-to-end scenario runs: simulate -> detect -> correlate -> fit -> correct.

Every stochastic stage draws its seed from the master seed through
derive_seed(master, stage_name, index), so adding a stage never perturbs
the ones before it and a run is bit-reproducible from its manifest.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__
from .config import ConfigError, Scenario, load_scenario
from .correlate import (
    CorrelationConfig,
    cross_correlate,
    normalize,
    pulsed_peak_analysis,
)
from .detection import detect, hbt_split
from .fitting import (
    FitConvergenceError,
    fit,
    initial_guess,
    poisson_weights,
)
from .photophysics import (
    BackgroundModel,
    InconsistentBackgroundError,
    lorentzian_response,
    shg_pump_rate,
    steady_state_emission_rate,
    background_correct,
)
from .simulate import SimConfig, derive_seed, decay_histogram, simulate_emitter, simulate_trajectories
from .tagio import write_decay_csv, write_histogram_csv, write_timetags
from .waveform import ContinuousWave, build_waveform

__all__ = ["PipelineError", "RunManifest", "run_scenario", "power_sweep", "spectrum_run"]


class PipelineError(RuntimeError):
    """A pipeline stage failed; the message is prefixed with the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunManifest:
    """What was run and what came out: seeds, artifact hashes, versions."""

    scenario_hash: str
    master_seed: int
    stage_seeds: dict
    artifacts: dict
    versions: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"


def _versions() -> dict:
    return {"antibunch": __version__, "numpy": np.__version__}


def _fingerprint(scenario: Scenario, seed: int) -> str:
    return hashlib.sha256(f"{scenario!r}|seed={seed}".encode()).hexdigest()


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class _Artifacts:
    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.hashes = {}
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def register(self, name: str) -> None:
        self.hashes[name] = _sha256(self.path(name))


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except FitConvergenceError:
        raise
    except (ConfigError, PipelineError):
        raise
    except Exception as exc:
        raise PipelineError(name, exc) from exc


def _simulate_streams(scenario: Scenario, seed: int, threads: int):
    """Shared front end: emission times, split, detection on both arms."""
    waveform = _stage(
        "build_waveform",
        build_waveform,
        scenario.drive,
        scenario.cavity,
        scenario.laser_lambda_nm,
    )
    times, total_dur = _stage(
        "simulate",
        simulate_trajectories,
        scenario.emitter,
        waveform,
        scenario.duration_ps,
        master_seed=seed,
        n_trajectories=scenario.trajectories,
        max_events=scenario.max_events,
        threads=threads,
    )
    seeds = {
        "hbt_split": derive_seed(seed, "hbt_split"),
        "detect_a": derive_seed(seed, "detect_a"),
        "detect_b": derive_seed(seed, "detect_b"),
    }
    arm_a, arm_b = _stage("hbt_split", hbt_split, times, seeds["hbt_split"])
    emission_cps = times.size / (total_dur * 1e-12)

    def bg_for(det):
        if math.isinf(scenario.background_snr):
            return 0.0
        return emission_cps * 0.5 * det.efficiency / scenario.background_snr

    stream_a = _stage(
        "detect_a",
        detect,
        arm_a,
        scenario.detector_a,
        duration_ps=total_dur,
        seed=seeds["detect_a"],
        signal_background_cps=bg_for(scenario.detector_a),
        channel="A",
    )
    stream_b = _stage(
        "detect_b",
        detect,
        arm_b,
        scenario.detector_b,
        duration_ps=total_dur,
        seed=seeds["detect_b"],
        signal_background_cps=bg_for(scenario.detector_b),
        channel="B",
    )
    return waveform, times, total_dur, stream_a, stream_b, seeds


def _corrected(raw, raw_sigma, snr):
    bg = BackgroundModel(snr=snr)
    try:
        value = background_correct(raw, bg)
    except InconsistentBackgroundError:
        return None, None
    return value, raw_sigma / bg.rho**2


def _write_report(art: _Artifacts, title: str, entries: list) -> None:
    """entries: (name, value, sigma-or-None); writes report.txt and report.kv."""
    lines = [f"# {title}"]
    kv = []
    for name, value, sigma in entries:
        if value is None:
            lines.append(f"{name:<22} unavailable")
            kv.append(f"{name}.value=nan")
            continue
        if isinstance(value, bool):
            text = "true" if value else "false"
            lines.append(f"{name:<22} {text}")
            kv.append(f"{name}={text}")
        elif sigma is None:
            lines.append(f"{name:<22} {value:.6g}")
            kv.append(f"{name}={value!r}")
        else:
            lines.append(f"{name:<22} {value:.6g}  +- {sigma:.3g}")
            kv.append(f"{name}.value={value!r}")
            kv.append(f"{name}.sigma={sigma!r}")
    with open(art.path("report.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(art.path("report.kv"), "w") as fh:
        fh.write("\n".join(kv) + "\n")
    art.register("report.txt")
    art.register("report.kv")


def _print_summary(title: str, entries: list) -> None:
    print(f"--- {title} ---")
    for name, value, sigma in entries:
        if value is None:
            print(f"{name:<22}: unavailable")
        elif isinstance(value, bool):
            print(f"{name:<22}: {value}")
        elif sigma is None:
            print(f"{name:<22}: {value:.6g}")
        else:
            print(f"{name:<22}: {value:.6g} +- {sigma:.3g}")


def run_scenario(
    scenario_or_path,
    out_dir,
    seed_override=None,
    plots: bool = False,
    threads: int = 1,
) -> tuple:
    """Execute a scenario end to end; returns (RunManifest, summary dict).

    Writes the artifacts requested by the scenario (plus manifest.json and a
    fit report) into out_dir and prints a summary table.
    """
    if isinstance(scenario_or_path, Scenario):
        scenario = scenario_or_path
    else:
        scenario = load_scenario(scenario_or_path)
    seed = scenario.seed if seed_override is None else seed_override
    art = _Artifacts(out_dir)

    if scenario.kind == "lifetime":
        summary, entries, title = _run_lifetime(scenario, seed, art, plots, threads)
        stage_seeds = {"simulate[0]": derive_seed(seed, "simulate", 0),
                       "lifetime_thin": derive_seed(seed, "lifetime_thin")}
    else:
        waveform, times, total_dur, stream_a, stream_b, seeds = _simulate_streams(
            scenario, seed, threads
        )
        stage_seeds = {"simulate[0]": derive_seed(seed, "simulate", 0), **seeds}
        if "timetags" in scenario.outputs:
            _stage("timetags", write_timetags, art.path("tags.ptag"), [stream_a, stream_b])
            art.register("tags.ptag")
        hist = _stage(
            "correlate", cross_correlate, stream_a, stream_b, scenario.correlation,
            threads=threads,
        )
        g2, g2_err = _stage("normalize", normalize, hist)
        if "histogram" in scenario.outputs:
            _stage("histogram", write_histogram_csv, art.path("histogram.csv"), hist, g2, g2_err)
            art.register("histogram.csv")
        if plots:
            from .plots import write_line_svg

            write_line_svg(
                art.path("histogram.svg"),
                hist.centers_ps * 1e-3,
                g2,
                title="normalized coincidences",
                xlabel="delay (ns)",
                ylabel="g2",
                step=True,
            )
            art.register("histogram.svg")
        if scenario.kind == "cw":
            summary, entries, title = _analyze_cw(scenario, hist, g2)
        else:
            summary, entries, title = _analyze_pulsed(scenario, hist)
        summary["n_pairs"] = hist.total_pairs

    if "fit_report" in scenario.outputs:
        _write_report(art, title, entries)
    manifest = RunManifest(
        scenario_hash=_fingerprint(scenario, seed),
        master_seed=seed,
        stage_seeds=stage_seeds,
        artifacts=art.hashes,
        versions=_versions(),
    )
    with open(art.path("manifest.json"), "w") as fh:
        fh.write(manifest.to_json())
    _print_summary(title, entries)
    return manifest, summary


def _analyze_cw(scenario: Scenario, hist, g2):
    def analyze():
        x = hist.centers_ps * 1e-3  # ns
        y = hist.counts.astype(float)
        guess = initial_guess("g2cw", x, y)
        return fit(guess, x, y).require_converged()

    result = _stage("fit_g2cw", analyze)
    if not result.converged:
        raise FitConvergenceError("cw correlation fit did not converge")
    raw = result.params["g2_zero"]
    raw_sigma = result.sigmas["g2_zero"]
    corrected, corr_sigma = _corrected(raw, raw_sigma, scenario.background_snr)
    summary = {
        "kind": "cw",
        "raw_g2_zero": raw,
        "raw_g2_zero_sigma": raw_sigma,
        "corrected_g2_zero": corrected,
        "corrected_g2_zero_sigma": corr_sigma,
        "tau0_ns": result.params["tau0"],
        "tau0_sigma_ns": result.sigmas["tau0"],
        "amplitude": result.params["amplitude"],
        "chi2_per_dof": result.chi2_per_dof,
        "fit_result": result,
    }
    entries = [
        ("raw_g2_zero", raw, raw_sigma),
        ("corrected_g2_zero", corrected, corr_sigma),
        ("tau0_ns", result.params["tau0"], result.sigmas["tau0"]),
        ("amplitude", result.params["amplitude"], result.sigmas["amplitude"]),
        ("chi2_per_dof", result.chi2_per_dof, None),
    ]
    return summary, entries, "cw correlation analysis"


def _analyze_pulsed(scenario: Scenario, hist):
    rep_period_ps = 1e6 / scenario.drive.rep_rate
    norm_range = range(scenario.norm_peak_min, scenario.norm_peak_max + 1)
    result = _stage(
        "pulsed_peaks", pulsed_peak_analysis, hist, rep_period_ps, norm_range
    )
    raw = result.g2_zero
    raw_sigma = result.g2_zero_sigma
    corrected, corr_sigma = _corrected(raw, raw_sigma, scenario.background_snr)
    summary = {
        "kind": "pulsed",
        "raw_g2_zero": raw,
        "raw_g2_zero_sigma": raw_sigma,
        "corrected_g2_zero": corrected,
        "corrected_g2_zero_sigma": corr_sigma,
        "decay_rate_ns_inv": result.decay_rate,
        "overlap_warning": result.overlap_warning,
        "rep_period_ps": rep_period_ps,
        "pulsed_result": result,
    }
    entries = [
        ("raw_g2_zero", raw, raw_sigma),
        ("corrected_g2_zero", corrected, corr_sigma),
        ("decay_rate_ns_inv", result.decay_rate, None),
        ("overlap_warning", result.overlap_warning, None),
        ("chi2_per_dof", result.fit_result.chi2_per_dof, None),
    ]
    return summary, entries, "pulsed peak-area analysis"


def _run_lifetime(scenario: Scenario, seed, art: _Artifacts, plots, threads):
    waveform = _stage(
        "build_waveform",
        build_waveform,
        scenario.drive,
        scenario.cavity,
        scenario.laser_lambda_nm,
    )
    times, total_dur = _stage(
        "simulate",
        simulate_trajectories,
        scenario.emitter,
        waveform,
        scenario.duration_ps,
        master_seed=seed,
        n_trajectories=scenario.trajectories,
        max_events=scenario.max_events,
        threads=threads,
    )
    # collection efficiency only; timing resolution is negligible against
    # the lifetime, so no jitter/dead-time stage here
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "lifetime_thin")))
    detected = times[rng.random(times.size) < scenario.lifetime_efficiency]

    hist = _stage("decay_histogram", decay_histogram, detected, waveform, scenario.lifetime_bin_ps)
    if "decay" in scenario.outputs or "histogram" in scenario.outputs:
        _stage("decay_csv", write_decay_csv, art.path("decay.csv"), hist)
        art.register("decay.csv")
    if plots:
        from .plots import write_line_svg

        write_line_svg(
            art.path("decay.svg"),
            hist.centers_ps * 1e-3,
            hist.counts,
            title="emission delay since pulse start",
            xlabel="delay (ns)",
            ylabel="counts",
            step=True,
        )
        art.register("decay.svg")

    fit_start = scenario.lifetime_fit_start_ps
    if fit_start is None:
        fit_start = scenario.drive.pulse_width + 2 * scenario.lifetime_bin_ps

    def analyze():
        centers = hist.centers_ps
        sel = (centers >= fit_start) & (centers <= 0.95 * hist.period_ps)
        x = centers[sel] * 1e-3  # ns
        y = hist.counts[sel].astype(float)
        guess = initial_guess("monoexp", x, y)
        return fit(guess, x, y).require_converged()

    result = _stage("fit_lifetime", analyze)
    summary = {
        "kind": "lifetime",
        "tau_ns": result.params["tau"],
        "tau_sigma_ns": result.sigmas["tau"],
        "chi2_per_dof": result.chi2_per_dof,
        "n_detected": int(detected.size),
        "fit_result": result,
    }
    entries = [
        ("tau_ns", result.params["tau"], result.sigmas["tau"]),
        ("amplitude", result.params["amplitude"], result.sigmas["amplitude"]),
        ("offset", result.params["offset"], result.sigmas["offset"]),
        ("chi2_per_dof", result.chi2_per_dof, None),
        ("n_detected", float(detected.size), None),
    ]
    return summary, entries, "lifetime decay analysis"


def power_sweep(
    scenario: Scenario,
    powers_mw=None,
    out_dir=None,
    seed_override=None,
) -> list:
    """Measure detected count rate against drive power for a cw scenario.

    Returns a list of row dicts and optionally writes sweep.csv. The CSV
    carries both power conventions: the drive laser power and the
    upconverted (frequency-doubled) power proxy (P * L)^2, which the pump
    rate is directly proportional to.
    """
    if scenario.kind != "cw":
        raise ConfigError("drive.kind", "power sweep requires a cw drive")
    powers = tuple(powers_mw) if powers_mw else scenario.sweep_powers_mw
    if not powers:
        raise ConfigError("sweep.powers_mw", "no sweep powers given")
    seed = scenario.seed if seed_override is None else seed_override
    eff_total = 0.5 * (scenario.detector_a.efficiency + scenario.detector_b.efficiency)
    dark_total = scenario.detector_a.dark_rate_cps + scenario.detector_b.dark_rate_cps
    gamma = scenario.emitter.gamma
    rows = []
    for i, power in enumerate(powers):
        response = lorentzian_response(scenario.laser_lambda_nm, scenario.cavity)
        pump = shg_pump_rate(power, scenario.laser_lambda_nm, scenario.cavity)
        emission = steady_state_emission_rate(pump, gamma)  # ns^-1
        expected_cps = emission * 1e9 * eff_total + dark_total
        if expected_cps > 0:
            duration = scenario.sweep_events_per_point / expected_cps * 1e12
        else:
            duration = 1e9
        drive = ContinuousWave(power=power)
        waveform = build_waveform(drive, scenario.cavity, scenario.laser_lambda_nm)
        cfg = SimConfig(
            duration_ps=duration,
            seed=derive_seed(seed, "sweep", i),
            max_events=scenario.max_events,
        )
        times = _stage("sweep_simulate", simulate_emitter, scenario.emitter, waveform, cfg)
        arm_a, arm_b = hbt_split(times, derive_seed(seed, "sweep_split", i))
        bg = 0.0
        if not math.isinf(scenario.background_snr):
            bg = (times.size / (duration * 1e-12)) * 0.5 / scenario.background_snr

        def run_detect(arm, det, stage, channel):
            return detect(
                arm,
                det,
                duration_ps=duration,
                seed=derive_seed(seed, stage, i),
                signal_background_cps=bg * det.efficiency,
                channel=channel,
            )

        stream_a = _stage(
            "sweep_detect", run_detect, arm_a, scenario.detector_a, "sweep_detect_a", "A"
        )
        stream_b = _stage(
            "sweep_detect", run_detect, arm_b, scenario.detector_b, "sweep_detect_b", "B"
        )
        measured_cps = (len(stream_a) + len(stream_b)) / (duration * 1e-12)
        rows.append(
            {
                "power_mw": power,
                "lorentzian_response": float(response),
                "shg_power_au": float((power * response) ** 2),
                "pump_rate_ns_inv": float(pump),
                "emission_rate_ns_inv": float(emission),
                "predicted_signal_cps": float(emission * 1e9 * eff_total),
                "measured_cps": float(measured_cps),
            }
        )
    if out_dir is not None:
        art = _Artifacts(out_dir)
        cols = list(rows[0].keys())
        with open(art.path("sweep.csv"), "w") as fh:
            fh.write("# power-sweep v1\n")
            fh.write(",".join(cols) + "\n")
            for row in rows:
                fh.write(",".join(repr(row[c]) for c in cols) + "\n")
        art.register("sweep.csv")
        manifest = RunManifest(
            scenario_hash=_fingerprint(scenario, seed),
            master_seed=seed,
            stage_seeds={"sweep[0]": derive_seed(seed, "sweep", 0)},
            artifacts=art.hashes,
            versions=_versions(),
        )
        with open(art.path("manifest.json"), "w") as fh:
            fh.write(manifest.to_json())
    print(f"--- power sweep ({len(rows)} points) ---")
    for row in rows:
        print(
            f"P={row['power_mw']:<8g} r_p={row['pump_rate_ns_inv']:.4g} ns^-1  "
            f"measured={row['measured_cps']:.6g} cps  "
            f"predicted={row['predicted_signal_cps']:.6g} cps"
        )
    return rows


def spectrum_run(scenario: Scenario, out_dir, seed_override=None) -> dict:
    """Synthetic resonance sweep plus Lorentzian fit; reports the Q factor."""
    seed = scenario.seed if seed_override is None else seed_override
    cavity = scenario.cavity
    fwhm = cavity.lambda_c / cavity.q_factor
    half_span = 0.5 * scenario.spectrum_span_fwhm * fwhm
    lam = np.linspace(
        cavity.lambda_c - half_span, cavity.lambda_c + half_span, scenario.spectrum_points
    )
    clean = lorentzian_response(lam, cavity)
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "spectrum")))
    noise = scenario.spectrum_noise_fraction
    measured = clean * (1.0 + noise * rng.standard_normal(lam.size)) if noise > 0 else clean

    def analyze():
        guess = initial_guess("lorentzian", lam, measured)
        weights = None
        if noise > 0:
            weights = 1.0 / np.maximum(noise * clean, 1e-12) ** 2
        return fit(guess, lam, measured, weights=weights).require_converged()

    result = _stage("fit_lorentzian", analyze)
    center = result.params["center"]
    width = result.params["fwhm"]
    q = center / width
    names = list(result.model.names)
    cov = result.covariance
    i_c, i_w = names.index("center"), names.index("fwhm")
    grad = np.zeros(len(names))
    grad[i_c] = 1.0 / width
    grad[i_w] = -center / width**2
    q_sigma = float(np.sqrt(max(grad @ cov @ grad, 0.0)))

    art = _Artifacts(out_dir)
    with open(art.path("spectrum.csv"), "w") as fh:
        fh.write("# spectrum-sweep v1\n")
        fh.write("lambda_nm,measured\n")
        for xl, ym in zip(lam, measured):
            fh.write(f"{xl!r},{ym!r}\n")
    art.register("spectrum.csv")
    entries = [
        ("q_factor", q, q_sigma),
        ("center_nm", center, result.sigmas["center"]),
        ("fwhm_nm", width, result.sigmas["fwhm"]),
        ("chi2_per_dof", result.chi2_per_dof, None),
    ]
    _write_report(art, "cavity resonance fit", entries)
    manifest = RunManifest(
        scenario_hash=_fingerprint(scenario, seed),
        master_seed=seed,
        stage_seeds={"spectrum": derive_seed(seed, "spectrum")},
        artifacts=art.hashes,
        versions=_versions(),
    )
    with open(art.path("manifest.json"), "w") as fh:
        fh.write(manifest.to_json())
    _print_summary("cavity resonance fit", entries)
    return {
        "q_factor": q,
        "q_sigma": q_sigma,
        "center_nm": center,
        "fwhm_nm": width,
        "fit_result": result,
    }
