"""Cross-correlation of time-tag streams and pulsed peak-area analysis.

The full-correlation histogram counts every tag pair (t_a, t_b) whose delay
t_b - t_a falls in the symmetric window [-W, W). Delay zero is a bin edge
(bins [0, d), [d, 2d), ... and their mirrored negatives), so no bin
straddles zero. The window is widened to a whole number of bins when
max_tau is not a multiple of the bin width.

For each tag in A the matching B window is located by binary search on the
sorted B stream; the windows advance monotonically, so the scan is the
vectorized equivalent of a two-pointer sweep and costs
O((N_a + N_b) log N_b + P) for P in-window pairs. Partitioning A into
contiguous chunks and summing per-chunk histograms is exact, which makes
parallel correlation bit-identical to the single-threaded result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .detection import TimeTagStream
from .fitting import FitResult, PeakComb, fit, initial_guess

__all__ = [
    "CorrelationConfig",
    "CoincidenceHistogram",
    "PulsedG2Result",
    "cross_correlate",
    "normalize",
    "pulsed_peak_analysis",
]

#: Poisson 1-sigma upper bound for zero observed counts
_ZERO_COUNT_UPPER = 1.841

#: internal block size for the vectorized pair scan (memory bound)
_BLOCK = 1 << 20


@dataclass(frozen=True)
class CorrelationConfig:
    """Histogram binning and correlation mode.

    bin_width_ps : delay bin width (integer ps)
    max_tau_ps   : requested window half-width W; widened to a whole number
        of bins internally
    mode : "full" counts all in-window pairs; "start_stop" pairs each A tag
        with only the next B tag (positive delays only)
    """

    bin_width_ps: int
    max_tau_ps: int
    mode: str = "full"

    def __post_init__(self):
        if not self.bin_width_ps > 0:
            raise ValueError("bin_width_ps must be > 0")
        if self.max_tau_ps < self.bin_width_ps:
            raise ValueError("max_tau_ps must be >= bin_width_ps")
        if self.mode not in ("full", "start_stop"):
            raise ValueError("mode must be 'full' or 'start_stop'")

    @property
    def half_bins(self) -> int:
        return math.ceil(self.max_tau_ps / self.bin_width_ps)

    @property
    def window_ps(self) -> int:
        """Effective half-width: half_bins whole bins per side."""
        return self.half_bins * self.bin_width_ps

    @property
    def n_bins(self) -> int:
        return 2 * self.half_bins

    @property
    def bin_edges_ps(self) -> np.ndarray:
        return (np.arange(self.n_bins + 1, dtype=np.int64) - self.half_bins) * int(
            self.bin_width_ps
        )


@dataclass
class CoincidenceHistogram:
    """Binned inter-channel delays plus the metadata needed to normalize them."""

    bin_edges_ps: np.ndarray
    counts: np.ndarray
    total_pairs: int
    duration_ps: float
    rate_a_cps: float
    rate_b_cps: float

    @property
    def bin_width_ps(self) -> int:
        return int(self.bin_edges_ps[1] - self.bin_edges_ps[0])

    @property
    def centers_ps(self) -> np.ndarray:
        return 0.5 * (self.bin_edges_ps[:-1] + self.bin_edges_ps[1:])

    def __eq__(self, other) -> bool:
        if not isinstance(other, CoincidenceHistogram):
            return NotImplemented
        return (
            np.array_equal(self.bin_edges_ps, other.bin_edges_ps)
            and np.array_equal(self.counts, other.counts)
            and self.total_pairs == other.total_pairs
            and self.duration_ps == other.duration_ps
            and self.rate_a_cps == other.rate_a_cps
            and self.rate_b_cps == other.rate_b_cps
        )


def _scan_block(a: np.ndarray, b: np.ndarray, window: int, bin_width: int, n_bins: int):
    """Histogram of delays b - a in [-window, window) for one block of A tags."""
    lo = np.searchsorted(b, a - window, side="left")
    hi = np.searchsorted(b, a + window, side="left")
    counts_per_a = hi - lo
    n_pairs = int(counts_per_a.sum())
    if n_pairs == 0:
        return np.zeros(n_bins, dtype=np.int64)
    ends = np.cumsum(counts_per_a)
    flat = np.arange(n_pairs, dtype=np.int64)
    flat -= np.repeat(ends - counts_per_a, counts_per_a)
    flat += np.repeat(lo, counts_per_a)
    delays = b[flat] - np.repeat(a, counts_per_a)
    bins = (delays + window) // bin_width
    return np.bincount(bins, minlength=n_bins).astype(np.int64)


def _correlate_full(a, b, window, bin_width, n_bins):
    counts = np.zeros(n_bins, dtype=np.int64)
    for start in range(0, a.size, _BLOCK):
        counts += _scan_block(a[start : start + _BLOCK], b, window, bin_width, n_bins)
    return counts


def _correlate_start_stop(a, b, window, bin_width, n_bins, half_bins):
    idx = np.searchsorted(b, a, side="left")
    valid = idx < b.size
    delays = b[idx[valid]] - a[valid]
    delays = delays[delays < window]
    bins = delays // bin_width + half_bins
    return np.bincount(bins, minlength=n_bins).astype(np.int64)


def cross_correlate(
    a: TimeTagStream,
    b: TimeTagStream,
    config: CorrelationConfig,
    chunks: int = 1,
    threads: int = 1,
) -> CoincidenceHistogram:
    """Correlate two sorted tag streams into a coincidence histogram.

    With chunks > 1 the A stream is partitioned into contiguous chunks whose
    histograms are summed; the result is bit-identical for any chunk count.
    Pairs with delay exactly -W are counted and +W are not (half-open
    window), so swapping the inputs mirrors the histogram exactly for every
    pair set without zero or boundary delays.
    """
    if a.duration_ps != b.duration_ps:
        raise ValueError("streams must cover the same duration")
    ta = np.asarray(a.times_ps, dtype=np.int64)
    tb = np.asarray(b.times_ps, dtype=np.int64)
    if np.any(np.diff(ta) < 0) or np.any(np.diff(tb) < 0):
        raise ValueError("streams must be sorted")

    window = int(config.window_ps)
    bin_width = int(config.bin_width_ps)
    n_bins = config.n_bins

    if config.mode == "start_stop":
        counts = _correlate_start_stop(
            ta, tb, window, bin_width, n_bins, config.half_bins
        )
    elif chunks <= 1:
        counts = _correlate_full(ta, tb, window, bin_width, n_bins)
    else:
        bounds = np.linspace(0, ta.size, chunks + 1).astype(int)
        parts = [ta[bounds[i] : bounds[i + 1]] for i in range(chunks)]

        def job(part):
            return _correlate_full(part, tb, window, bin_width, n_bins)

        if threads > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(job, parts))
        else:
            results = [job(part) for part in parts]
        counts = np.zeros(n_bins, dtype=np.int64)
        for res in results:
            counts += res

    return CoincidenceHistogram(
        bin_edges_ps=config.bin_edges_ps,
        counts=counts,
        total_pairs=int(counts.sum()),
        duration_ps=a.duration_ps,
        rate_a_cps=a.mean_rate_cps,
        rate_b_cps=b.mean_rate_cps,
    )


def normalize(hist: CoincidenceHistogram):
    """Per-bin g2 estimates with Poisson error bars.

    The normalization is the accidental-coincidence level
    rate_a * rate_b * duration * bin_width, so uncorrelated streams
    normalize to 1. Zero-count bins get the one-sided Poisson upper bound
    1.841 / normalization as their error. Returns (g2, g2_err).
    """
    if hist.rate_a_cps <= 0 or hist.rate_b_cps <= 0:
        raise ValueError("cannot normalize a histogram with a zero-rate channel")
    if hist.duration_ps <= 0:
        raise ValueError("cannot normalize a histogram with zero duration")
    norm = (
        hist.rate_a_cps
        * hist.rate_b_cps
        * hist.duration_ps
        * hist.bin_width_ps
        * 1e-24
    )
    g2 = hist.counts / norm
    err = np.where(
        hist.counts > 0, np.sqrt(hist.counts) / norm, _ZERO_COUNT_UPPER / norm
    )
    return g2, err


@dataclass
class PulsedG2Result:
    """Peak-area ratios of a pulsed coincidence histogram.

    peak_areas maps peak index k (0 = zero delay) to (area, sigma);
    g2_zero is the central area over the mean area of the normalization
    peaks. decay_rate is the shared two-sided exponential rate (ns^-1).
    overlap_warning fires when the inter-peak valley exceeds 20% of the
    mean peak height, i.e. when consecutive pulses start to overlap.
    """

    peak_areas: dict
    g2_zero: float
    g2_zero_sigma: float
    decay_rate: float
    overlap_warning: bool
    fit_result: FitResult


def pulsed_peak_analysis(
    hist: CoincidenceHistogram,
    rep_period_ps: float,
    normalization_peaks=range(2, 11),
) -> PulsedG2Result:
    """Joint multi-peak fit of a pulsed histogram and peak-area g2(0).

    All peaks within the window are fit together as a comb of two-sided
    exponentials with one shared decay rate (one guard peak per side absorbs
    tails leaking in from outside the window). g2(0) is the central peak
    area over the mean of the |k| in normalization_peaks areas; with a
    shared decay rate the area ratio reduces to the amplitude ratio, and the
    uncertainty is propagated from the fit covariance.
    """
    if not rep_period_ps > 0:
        raise ValueError("rep_period_ps must be > 0")
    bin_width = hist.bin_width_ps
    if rep_period_ps < 10 * bin_width:
        raise ValueError("rep_period must be much larger than the bin width")
    window = float(-hist.bin_edges_ps[0])
    k_max = int((window - rep_period_ps / 2.0) // rep_period_ps)
    norm_set = sorted({abs(int(k)) for k in normalization_peaks})
    if not norm_set or norm_set[0] < 1:
        raise ValueError("normalization peaks must have |k| >= 1")
    if k_max < norm_set[-1]:
        raise ValueError(
            f"window spans peaks |k| <= {k_max}, but normalization requires "
            f"|k| <= {norm_set[-1]}"
        )

    period_ns = rep_period_ps * 1e-3
    x = hist.centers_ps * 1e-3  # ns
    y = hist.counts.astype(float)

    visible = list(range(-k_max, k_max + 1))
    model_peaks = [-(k_max + 1)] + visible + [k_max + 1]  # guard peaks
    guess = initial_guess("peaks", x, y, rep_period=period_ns, peak_indices=model_peaks)
    result = fit(guess, x, y).require_converged()

    comb: PeakComb = result.model
    decay = comb.shared_decay
    names = comb.names
    amp_index = {k: names.index(f"amp[{k}]") for k in comb.peak_indices}
    amps = dict(zip(comb.peak_indices, comb.amplitudes))

    # area of a two-sided exponential peak: 2 A / decay
    cov = result.covariance
    peak_areas = {}
    for k in visible:
        i = amp_index[k]
        a_k = amps[k]
        area = 2.0 * a_k / decay
        grad = np.zeros(len(names))
        grad[i] = 2.0 / decay
        grad[0] = -2.0 * a_k / decay**2
        sigma = float(np.sqrt(max(grad @ cov @ grad, 0.0)))
        peak_areas[k] = (area, sigma)

    norm_peaks = [k for k in visible if abs(k) in norm_set and k != 0]
    mean_amp = np.mean([amps[k] for k in norm_peaks])
    g2_zero = amps[0] / mean_amp

    grad = np.zeros(len(names))
    grad[amp_index[0]] = 1.0 / mean_amp
    for k in norm_peaks:
        grad[amp_index[k]] -= amps[0] / (mean_amp**2 * len(norm_peaks))
    g2_sigma = float(np.sqrt(max(grad @ cov @ grad, 0.0)))

    overlap = _overlap_warning(hist, rep_period_ps, k_max)

    return PulsedG2Result(
        peak_areas=peak_areas,
        g2_zero=float(g2_zero),
        g2_zero_sigma=g2_sigma,
        decay_rate=float(decay),
        overlap_warning=overlap,
        fit_result=result,
    )


def _overlap_warning(hist, rep_period_ps, k_max) -> bool:
    """True when the histogram valleys exceed 20% of the mean peak height."""
    centers = hist.centers_ps
    counts = hist.counts.astype(float)
    near = max(rep_period_ps * 0.1, hist.bin_width_ps)
    peak_heights = []
    for k in range(-k_max, k_max + 1):
        sel = np.abs(centers - k * rep_period_ps) <= near
        if sel.any():
            peak_heights.append(counts[sel].max())
    valleys = []
    for k in range(-k_max, k_max):
        sel = np.abs(centers - (k + 0.5) * rep_period_ps) <= near
        if sel.any():
            valleys.append(counts[sel].mean())
    if not peak_heights or not valleys:
        return False
    return bool(np.mean(valleys) > 0.2 * np.mean(peak_heights))
