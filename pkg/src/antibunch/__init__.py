"""Desk-scale photon-statistics simulator and analysis toolkit.

Simulates a cavity-pumped two-level emitter, its detection through a
50/50-split pair of single-photon detectors, and the standard analyses:
coincidence histograms, correlation fits, pulsed peak-area ratios,
lifetime fits, resonance fits, and Poissonian-background correction.
"""

__version__ = "0.1.0"

from .photophysics import (
    BackgroundModel,
    CavityParams,
    EmitterParams,
    G2CwModel,
    InconsistentBackgroundError,
    background_correct,
    background_mix,
    g2_cw_model,
    lorentzian_response,
    shelving_preset,
    shg_pump_rate,
    steady_state_emission_rate,
)
from .waveform import (
    ContinuousWave,
    PulseTrain,
    PumpWaveform,
    SquareModulated,
    build_waveform,
)
from .simulate import (
    DecayHistogram,
    EventCapExceeded,
    SimConfig,
    decay_histogram,
    derive_seed,
    simulate_emitter,
    simulate_trajectories,
)
from .detection import DetectorParams, TimeTagStream, detect, hbt_split, poisson_stream
from .correlate import (
    CoincidenceHistogram,
    CorrelationConfig,
    PulsedG2Result,
    cross_correlate,
    normalize,
    pulsed_peak_analysis,
)
from .fitting import (
    DegenerateDataError,
    FitConvergenceError,
    FitResult,
    G2Cw,
    Lorentzian,
    MonoExp,
    PeakComb,
    fit,
    initial_guess,
    jacobian_check,
    poisson_weights,
)
from .config import ConfigError, Scenario, load_scenario
from .pipeline import PipelineError, RunManifest, power_sweep, run_scenario, spectrum_run
