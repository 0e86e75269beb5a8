"""Excitation drives and the piecewise-constant pump waveforms they produce.

A PumpWaveform is the emitter-facing description of the drive: an ordered
list of (start, end, rate) segments in ps covering one period, with
period 0 marking a continuous (aperiodic) drive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

from .photophysics import CavityParams, shg_pump_rate

__all__ = [
    "ContinuousWave",
    "SquareModulated",
    "PulseTrain",
    "PumpDrive",
    "PumpWaveform",
    "build_waveform",
]

#: default on/off power ratio for the intensity modulator (20 dB)
DEFAULT_EXTINCTION_RATIO = 100.0


@dataclass(frozen=True)
class ContinuousWave:
    """Unmodulated drive at fixed power (mW)."""

    power: float

    def __post_init__(self):
        if self.power < 0:
            raise ValueError("drive power must be >= 0 mW")


@dataclass(frozen=True)
class SquareModulated:
    """Square-wave intensity modulation of a continuous drive laser.

    power_on : drive power during the on window (mW)
    rep_rate : modulation repetition rate (MHz)
    duty     : on fraction of each period, in (0, 1]
    extinction_ratio : on/off power ratio of the modulator (>= 1); light
        leaks through during the off window at power_on / extinction_ratio
    """

    power_on: float
    rep_rate: float
    duty: float
    extinction_ratio: float = DEFAULT_EXTINCTION_RATIO

    def __post_init__(self):
        if self.power_on < 0:
            raise ValueError("drive power_on must be >= 0 mW")
        if not self.rep_rate > 0:
            raise ValueError("drive rep_rate must be > 0 MHz")
        if not 0 < self.duty <= 1:
            raise ValueError("drive duty must be in (0, 1]")
        if not self.extinction_ratio >= 1:
            raise ValueError("drive extinction_ratio must be >= 1")


@dataclass(frozen=True)
class PulseTrain:
    """Short-pulse excitation, e.g. a mode-locked laser driving the emitter directly.

    rep_rate   : pulse repetition rate (MHz)
    pulse_width: pulse duration (ps)
    saturation_parameter : mean excitations per pulse for an unsaturated
        emitter; the in-pulse pump rate is saturation_parameter / width
    """

    rep_rate: float
    pulse_width: float
    saturation_parameter: float

    def __post_init__(self):
        if not self.rep_rate > 0:
            raise ValueError("drive rep_rate must be > 0 MHz")
        if not self.pulse_width > 0:
            raise ValueError("drive pulse_width must be > 0 ps")
        if self.saturation_parameter < 0:
            raise ValueError("drive saturation_parameter must be >= 0")


PumpDrive = Union[ContinuousWave, SquareModulated, PulseTrain]


@dataclass(frozen=True)
class PumpWaveform:
    """Piecewise-constant pump rate r_p(t).

    segments : tuple of (start_ps, end_ps, rate_ns_inv); contiguous,
        non-overlapping, strictly increasing boundaries
    period_ps: repetition period; 0 marks an aperiodic/continuous waveform,
        in which case the rate is taken as 0 beyond the last segment
    """

    segments: tuple[tuple[float, float, float], ...]
    period_ps: float = 0.0

    def __post_init__(self):
        if not self.segments:
            raise ValueError("waveform needs at least one segment")
        prev_end = None
        for start, end, rate in self.segments:
            if not end > start:
                raise ValueError("segment boundaries must be strictly increasing")
            if rate < 0:
                raise ValueError("segment rates must be >= 0 ns^-1")
            if prev_end is not None and start != prev_end:
                raise ValueError("segments must be contiguous")
            prev_end = end
        if self.segments[0][0] != 0.0:
            raise ValueError("first segment must start at 0")
        if self.period_ps < 0:
            raise ValueError("period must be >= 0 ps")
        if self.period_ps > 0 and not math.isclose(
            prev_end, self.period_ps, rel_tol=1e-12, abs_tol=1e-9
        ):
            raise ValueError("segments of a periodic waveform must tile one period")

    @property
    def is_periodic(self) -> bool:
        return self.period_ps > 0

    def rate_at(self, t_ps: float) -> float:
        """Pump rate (ns^-1) at absolute time t."""
        t = t_ps
        if self.is_periodic:
            t = math.fmod(t, self.period_ps)
        for start, end, rate in self.segments:
            if start <= t < end:
                return rate
        return 0.0

    def mean_rate(self) -> float:
        """Time-averaged pump rate (ns^-1) over one period (0 for aperiodic tails)."""
        total = sum(r * (e - s) for s, e, r in self.segments)
        span = self.period_ps if self.is_periodic else self.segments[-1][1]
        if not math.isfinite(span):
            return self.segments[-1][2]
        return total / span


def build_waveform(
    drive: PumpDrive, cavity: CavityParams, laser_lambda_nm: float
) -> PumpWaveform:
    """Translate a drive description into the emitter pump waveform.

    Continuous and square-modulated drives pass through the cavity-enhanced
    frequency-doubling law (rate quadratic in instantaneous power); a pulse
    train bypasses it, with the pulse area setting the mean excitations per
    pulse directly.
    """
    if isinstance(drive, ContinuousWave):
        rate = shg_pump_rate(drive.power, laser_lambda_nm, cavity)
        return PumpWaveform(segments=((0.0, math.inf, rate),), period_ps=0.0)

    if isinstance(drive, SquareModulated):
        period = 1e6 / drive.rep_rate  # MHz -> ps
        on_end = drive.duty * period
        on_rate = shg_pump_rate(drive.power_on, laser_lambda_nm, cavity)
        if drive.duty == 1.0:
            return PumpWaveform(segments=((0.0, period, on_rate),), period_ps=period)
        if math.isinf(drive.extinction_ratio):
            off_rate = 0.0
        else:
            off_rate = shg_pump_rate(
                drive.power_on / drive.extinction_ratio, laser_lambda_nm, cavity
            )
        return PumpWaveform(
            segments=((0.0, on_end, on_rate), (on_end, period, off_rate)),
            period_ps=period,
        )

    if isinstance(drive, PulseTrain):
        period = 1e6 / drive.rep_rate
        if drive.pulse_width >= period:
            raise ValueError(
                f"pulse_width {drive.pulse_width} ps must be shorter than the "
                f"period {period:.1f} ps"
            )
        # rate * width (in ns) equals the saturation parameter
        rate = drive.saturation_parameter / (drive.pulse_width * 1e-3)
        return PumpWaveform(
            segments=(
                (0.0, drive.pulse_width, rate),
                (drive.pulse_width, period, 0.0),
            ),
            period_ps=period,
        )

    raise TypeError(f"unknown drive type {type(drive).__name__}")
