"""Scenario files: flat key-value configs with dotted section keys.

Syntax: one `key = value` pair per line, `#` starts a comment, blank lines
ignored. Keys carry unit suffixes (ps, ns_inv, nm, mw, mhz, cps). Unknown
keys are rejected so typos surface as errors, with field-level messages.

Example::

    emitter.gamma_ns_inv = 0.4167
    drive.kind = cw
    drive.power_mw = 10.0
    sim.duration_ps = 2e10
    sim.seed = 42
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .correlate import CorrelationConfig
from .detection import DetectorParams
from .photophysics import CavityParams, EmitterParams
from .waveform import (
    DEFAULT_EXTINCTION_RATIO,
    ContinuousWave,
    PulseTrain,
    PumpDrive,
    SquareModulated,
)

__all__ = ["ConfigError", "Scenario", "load_scenario", "parse_kv_text"]

_VALID_OUTPUTS = ("timetags", "histogram", "fit_report", "decay")


class ConfigError(ValueError):
    """Config validation failure, tagged with the offending key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class Scenario:
    """Everything one end-to-end run needs."""

    emitter: EmitterParams
    cavity: CavityParams
    laser_lambda_nm: float
    drive: PumpDrive
    detector_a: DetectorParams
    detector_b: DetectorParams
    background_snr: float
    correlation: CorrelationConfig
    duration_ps: float
    seed: int
    max_events: int
    trajectories: int
    norm_peak_min: int = 2
    norm_peak_max: int = 10
    lifetime_bin_ps: float = 50.0
    lifetime_fit_start_ps: float | None = None
    lifetime_efficiency: float = 0.30
    sweep_events_per_point: int = 1_000_000
    sweep_powers_mw: tuple = ()
    spectrum_span_fwhm: float = 10.0
    spectrum_points: int = 201
    spectrum_noise_fraction: float = 0.01
    outputs: tuple = ("histogram", "fit_report")

    @property
    def kind(self) -> str:
        if isinstance(self.drive, ContinuousWave):
            return "cw"
        if isinstance(self.drive, SquareModulated):
            return "pulsed"
        return "lifetime"


def parse_kv_text(text: str) -> dict:
    """Parse `key = value` lines into a string dict."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw!r}")
        if key in out:
            raise ConfigError(key, "duplicate key")
        out[key] = value
    return out


class _Reader:
    """Typed access to the raw key-value dict, tracking consumed keys."""

    def __init__(self, raw: dict):
        self.raw = raw
        self.used = set()

    def _take(self, key):
        self.used.add(key)
        return self.raw.get(key)

    def str_(self, key, default=None, required=False):
        value = self._take(key)
        if value is None:
            if required:
                raise ConfigError(key, "required key missing")
            return default
        return value

    def float_(self, key, default=None, required=False):
        value = self._take(key)
        if value is None:
            if required:
                raise ConfigError(key, "required key missing")
            return default
        if value.lower() in ("inf", "infinity"):
            return math.inf
        try:
            return float(value)
        except ValueError:
            raise ConfigError(key, f"not a number: {value!r}") from None

    def int_(self, key, default=None, required=False):
        value = self._take(key)
        if value is None:
            if required:
                raise ConfigError(key, "required key missing")
            return default
        try:
            return int(float(value))
        except ValueError:
            raise ConfigError(key, f"not an integer: {value!r}") from None

    def bool_(self, key, default=False):
        value = self._take(key)
        if value is None:
            return default
        if value.lower() in ("true", "yes", "1"):
            return True
        if value.lower() in ("false", "no", "0"):
            return False
        raise ConfigError(key, f"not a boolean: {value!r}")

    def unknown(self):
        return sorted(set(self.raw) - self.used)


def _build(section: str, ctor, **kwargs):
    try:
        return ctor(**kwargs)
    except ValueError as exc:
        raise ConfigError(section, str(exc)) from None


def _detector(reader: _Reader, arm: str) -> DetectorParams:
    base = "detector"
    override = f"detector_{arm}"

    def get(name, default):
        value = reader.float_(f"{override}.{name}")
        if value is None:
            value = reader.float_(f"{base}.{name}", default)
        return value

    return _build(
        f"detector[{arm}]",
        DetectorParams,
        efficiency=get("efficiency", 0.30),
        jitter_sigma_ps=get("jitter_sigma_ps", 212.0),
        dead_time_ps=get("dead_time_ps", 50_000.0),
        dark_rate_cps=get("dark_rate_cps", 200.0),
    )


def _drive(reader: _Reader) -> PumpDrive:
    kind = reader.str_("drive.kind", required=True).lower()
    if kind == "cw":
        return _build(
            "drive", ContinuousWave, power=reader.float_("drive.power_mw", required=True)
        )
    if kind in ("square", "square_modulated"):
        return _build(
            "drive",
            SquareModulated,
            power_on=reader.float_("drive.power_on_mw", required=True),
            rep_rate=reader.float_("drive.rep_rate_mhz", required=True),
            duty=reader.float_("drive.duty", required=True),
            extinction_ratio=reader.float_(
                "drive.extinction_ratio", DEFAULT_EXTINCTION_RATIO
            ),
        )
    if kind == "pulse_train":
        return _build(
            "drive",
            PulseTrain,
            rep_rate=reader.float_("drive.rep_rate_mhz", required=True),
            pulse_width=reader.float_("drive.pulse_width_ps", required=True),
            saturation_parameter=reader.float_(
                "drive.saturation_parameter", required=True
            ),
        )
    raise ConfigError("drive.kind", f"unknown drive kind {kind!r}")


def load_scenario(path) -> Scenario:
    """Load and validate a scenario file."""
    with open(path) as fh:
        raw = parse_kv_text(fh.read())
    return scenario_from_dict(raw)


def scenario_from_dict(raw: dict) -> Scenario:
    reader = _Reader(raw)

    shelving = reader.float_("emitter.shelving_rate_ns_inv", 0.0)
    recovery = reader.float_("emitter.recovery_rate_ns_inv", 0.0)
    gamma = reader.float_("emitter.gamma_ns_inv", required=True)
    if reader.bool_("emitter.shelving_preset"):
        shelving = 0.01 * gamma
        recovery = 0.002
    emitter = _build(
        "emitter",
        EmitterParams,
        gamma=gamma,
        shelving_rate=shelving,
        recovery_rate=recovery,
    )

    cavity = _build(
        "cavity",
        CavityParams,
        lambda_c=reader.float_("cavity.lambda_c_nm", required=True),
        q_factor=reader.float_("cavity.q_factor", required=True),
        shg_coefficient=reader.float_("cavity.shg_coefficient_ns_inv_mw2", 0.0),
    )

    laser_lambda = reader.float_("laser.lambda_nm", cavity.lambda_c)
    if laser_lambda <= 0:
        raise ConfigError("laser.lambda_nm", "must be > 0")

    drive = _drive(reader)
    det_a = _detector(reader, "a")
    det_b = _detector(reader, "b")

    snr = reader.float_("background.snr", math.inf)
    if not snr > 0:
        raise ConfigError("background.snr", "must be > 0 (use inf for none)")

    correlation = _build(
        "correlation",
        CorrelationConfig,
        bin_width_ps=reader.int_("correlation.bin_width_ps", 250),
        max_tau_ps=reader.int_("correlation.max_tau_ps", 20_000),
        mode=reader.str_("correlation.mode", "full"),
    )

    duration = reader.float_("sim.duration_ps", required=True)
    if not duration > 0:
        raise ConfigError("sim.duration_ps", "must be > 0")
    seed = reader.int_("sim.seed", 0)
    max_events = reader.int_("sim.max_events", 50_000_000)
    if max_events <= 0:
        raise ConfigError("sim.max_events", "must be > 0")
    trajectories = reader.int_("sim.trajectories", 1)
    if trajectories < 1:
        raise ConfigError("sim.trajectories", "must be >= 1")

    norm_min = reader.int_("correlation.norm_peak_min", 2)
    norm_max = reader.int_("correlation.norm_peak_max", 10)
    if not 1 <= norm_min <= norm_max:
        raise ConfigError("correlation.norm_peak_min", "need 1 <= min <= max")

    lifetime_bin = reader.float_("lifetime.bin_ps", 50.0)
    if not lifetime_bin > 0:
        raise ConfigError("lifetime.bin_ps", "must be > 0")
    lifetime_start = reader.float_("lifetime.fit_start_ps", None)
    lifetime_eff = reader.float_("lifetime.efficiency", 0.30)
    if not 0 < lifetime_eff <= 1:
        raise ConfigError("lifetime.efficiency", "must be in (0, 1]")

    sweep_events = reader.int_("sweep.events_per_point", 1_000_000)
    powers_text = reader.str_("sweep.powers_mw", "")
    powers = ()
    if powers_text:
        try:
            powers = tuple(float(p) for p in powers_text.split(",") if p.strip())
        except ValueError:
            raise ConfigError("sweep.powers_mw", "expected comma-separated numbers")

    span = reader.float_("spectrum.span_fwhm", 10.0)
    points = reader.int_("spectrum.points", 201)
    noise = reader.float_("spectrum.noise_fraction", 0.01)
    if points < 10:
        raise ConfigError("spectrum.points", "must be >= 10")
    if noise < 0:
        raise ConfigError("spectrum.noise_fraction", "must be >= 0")

    outputs_text = reader.str_("outputs", "histogram,fit_report")
    outputs = tuple(tok.strip() for tok in outputs_text.split(",") if tok.strip())
    for token in outputs:
        if token not in _VALID_OUTPUTS:
            raise ConfigError("outputs", f"unknown output {token!r}")

    unknown = reader.unknown()
    if unknown:
        raise ConfigError(unknown[0], "unknown key")

    return Scenario(
        emitter=emitter,
        cavity=cavity,
        laser_lambda_nm=laser_lambda,
        drive=drive,
        detector_a=det_a,
        detector_b=det_b,
        background_snr=snr,
        correlation=correlation,
        duration_ps=duration,
        seed=seed,
        max_events=max_events,
        trajectories=trajectories,
        norm_peak_min=norm_min,
        norm_peak_max=norm_max,
        lifetime_bin_ps=lifetime_bin,
        lifetime_fit_start_ps=lifetime_start,
        lifetime_efficiency=lifetime_eff,
        sweep_events_per_point=sweep_events,
        sweep_powers_mw=powers,
        spectrum_span_fwhm=span,
        spectrum_points=points,
        spectrum_noise_fraction=noise,
        outputs=outputs,
    )
