"""Closed-form models for a cavity-pumped two-level emitter.

Conventions used across the package: wavelengths in nm, powers in mW,
rates and inverse lifetimes in ns^-1, time-tag timestamps in ps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CavityParams",
    "EmitterParams",
    "G2CwModel",
    "BackgroundModel",
    "InconsistentBackgroundError",
    "lorentzian_response",
    "shg_pump_rate",
    "steady_state_emission_rate",
    "g2_cw_model",
    "background_mix",
    "background_correct",
    "shelving_preset",
]


class InconsistentBackgroundError(ValueError):
    """Measured correlation is below the floor the background model allows."""


@dataclass(frozen=True)
class CavityParams:
    """Pump-cavity resonance and upconversion gain.

    lambda_c : resonance center wavelength (nm)
    q_factor : quality factor; the resonance FWHM is lambda_c / q_factor
    shg_coefficient : scalar conversion gain k (ns^-1 mW^-2); the emitter
        pump rate is k * (P * L(lambda))^2 for input power P
    """

    lambda_c: float
    q_factor: float
    shg_coefficient: float

    def __post_init__(self):
        if not self.lambda_c > 0:
            raise ValueError("cavity lambda_c must be > 0 nm")
        if not self.q_factor > 0:
            raise ValueError("cavity q_factor must be > 0")
        if self.shg_coefficient < 0:
            raise ValueError("cavity shg_coefficient must be >= 0")


@dataclass(frozen=True)
class EmitterParams:
    """Radiative decay plus an optional metastable dark state.

    gamma : spontaneous emission rate (ns^-1)
    shelving_rate : excited -> dark rate (ns^-1); 0 disables the dark state
    recovery_rate : dark -> ground rate (ns^-1)
    """

    gamma: float
    shelving_rate: float = 0.0
    recovery_rate: float = 0.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("emitter gamma must be > 0 ns^-1")
        if self.shelving_rate < 0:
            raise ValueError("emitter shelving_rate must be >= 0 ns^-1")
        if self.shelving_rate > 0 and not self.recovery_rate > 0:
            raise ValueError("recovery_rate must be > 0 when shelving is enabled")
        if self.recovery_rate < 0:
            raise ValueError("emitter recovery_rate must be >= 0 ns^-1")


def shelving_preset(gamma: float) -> EmitterParams:
    """Emitter with a synthetic dark state producing mild blinking.

    The rates (shelving at 1% of gamma, recovery 0.002 ns^-1) are chosen to
    visibly suppress correlations between nearby excitation cycles; they are
    illustrative values, not measured ones.
    """
    return EmitterParams(gamma=gamma, shelving_rate=0.01 * gamma, recovery_rate=0.002)


@dataclass(frozen=True)
class G2CwModel:
    """Continuous-drive intensity correlation A * [1 - (1 - g0) exp(-|tau|/tau0)].

    amplitude : asymptotic coincidences per bin
    g2_zero   : normalized correlation at zero delay
    tau0      : correlation time (ns); 1/tau0 = gamma + pump rate
    """

    amplitude: float
    g2_zero: float
    tau0: float

    def __post_init__(self):
        if not self.amplitude > 0:
            raise ValueError("g2 model amplitude must be > 0")
        if self.g2_zero < 0:
            raise ValueError("g2 model g2_zero must be >= 0")
        if not self.tau0 > 0:
            raise ValueError("g2 model tau0 must be > 0 ns")


@dataclass(frozen=True)
class BackgroundModel:
    """Uncorrelated (Poissonian) background specified by a signal/background ratio.

    snr is the ratio of signal to background count rates; math.inf means no
    background. The signal fraction rho = snr / (snr + 1) drives the standard
    mixing arithmetic: a source with correlation g sitting on this background
    is measured as 1 - rho^2 * (1 - g).
    """

    snr: float

    def __post_init__(self):
        if not self.snr > 0:
            raise ValueError("background snr must be > 0")

    @property
    def rho(self) -> float:
        """Signal fraction S / (S + B) in (0, 1]."""
        if math.isinf(self.snr):
            return 1.0
        return self.snr / (self.snr + 1.0)


def lorentzian_response(wavelength_nm, cavity: CavityParams):
    """Normalized cavity response L = 1 / (1 + 4 Q^2 (lambda/lambda_c - 1)^2).

    Unity on resonance; the full width at half maximum is lambda_c / Q.
    Accepts scalars or arrays.
    """
    wl = np.asarray(wavelength_nm, dtype=float)
    if np.any(wl <= 0):
        raise ValueError("wavelength must be > 0 nm")
    detuning = wl / cavity.lambda_c - 1.0
    out = 1.0 / (1.0 + 4.0 * cavity.q_factor**2 * detuning**2)
    return out if out.ndim else float(out)


def shg_pump_rate(power_mw, wavelength_nm, cavity: CavityParams):
    """Emitter pump rate (ns^-1) from frequency-doubled drive light.

    The intracavity doubled power scales as (P * L)^2, so the pump rate is
    quadratic in the input power and Lorentzian-squared in detuning:
    r_p = k * (P * L(lambda))^2.
    """
    p = np.asarray(power_mw, dtype=float)
    if np.any(p < 0):
        raise ValueError("power must be >= 0 mW")
    eff = p * lorentzian_response(wavelength_nm, cavity)
    out = cavity.shg_coefficient * eff**2
    return out if out.ndim else float(out)


def steady_state_emission_rate(pump_rate, gamma):
    """Stationary photon emission rate gamma * r_p / (gamma + r_p) (ns^-1).

    Approaches r_p in the weak-pump regime and saturates at gamma.
    """
    r = np.asarray(pump_rate, dtype=float)
    if np.any(r < 0):
        raise ValueError("pump rate must be >= 0 ns^-1")
    if not gamma > 0:
        raise ValueError("gamma must be > 0 ns^-1")
    out = gamma * r / (gamma + r)
    return out if out.ndim else float(out)


def g2_cw_model(tau_ns, model: G2CwModel):
    """Evaluate the continuous-drive correlation model at delay tau (ns)."""
    tau = np.asarray(tau_ns, dtype=float)
    out = model.amplitude * (
        1.0 - (1.0 - model.g2_zero) * np.exp(-np.abs(tau) / model.tau0)
    )
    return out if out.ndim else float(out)


def background_mix(g2_signal: float, bg: BackgroundModel) -> float:
    """Correlation measured when the signal sits on Poissonian background.

    Returns 1 - rho^2 * (1 - g2_signal); the identity when rho = 1.
    """
    if g2_signal < 0:
        raise ValueError("g2_signal must be >= 0")
    rho = bg.rho
    return 1.0 - rho**2 * (1.0 - g2_signal)


def background_correct(g2_measured: float, bg: BackgroundModel) -> float:
    """Invert background_mix: recover the signal-only correlation.

    Raises InconsistentBackgroundError when g2_measured < 1 - rho^2, i.e.
    when the claimed background alone would exceed the observed antibunching.
    """
    rho = bg.rho
    floor = 1.0 - rho**2
    if g2_measured < floor:
        raise InconsistentBackgroundError(
            f"measured g2 {g2_measured:.4g} is below the background floor "
            f"{floor:.4g}; background estimate too large"
        )
    return (g2_measured - floor) / rho**2
