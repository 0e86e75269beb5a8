"""Weighted nonlinear least squares with analytically supplied Jacobians.

The engine is a damped Gauss-Newton iteration: solve
(J^T J + lam I) step = J^T r, accept steps that lower the weighted sum of
squares, multiply the damping by 3 on rejection and divide by 3 on
acceptance. Width- and rate-like parameters are handled internally on a
log scale so they stay positive; reported values and covariances are
transformed back to natural units.

Count data is weighted 1/max(y, 1) by default (Gaussian approximation to
Poisson). The parameter covariance is the inverse weighted normal matrix
scaled by chi^2/dof.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import ClassVar

import numpy as np

__all__ = [
    "DegenerateDataError",
    "FitConvergenceError",
    "Lorentzian",
    "MonoExp",
    "G2Cw",
    "PeakComb",
    "FitResult",
    "poisson_weights",
    "fit",
    "initial_guess",
    "jacobian_check",
]


class DegenerateDataError(ValueError):
    """Data cannot constrain the requested fit (flat data, singular normal matrix)."""


class FitConvergenceError(RuntimeError):
    """Raised by callers that require a converged fit result."""


@dataclass(frozen=True)
class Lorentzian:
    """Resonance on a flat baseline: offset + amplitude / (1 + 4 (x-c)^2 / w^2)."""

    center: float
    fwhm: float
    amplitude: float
    offset: float

    names: ClassVar[tuple[str, ...]] = ("center", "fwhm", "amplitude", "offset")
    log_scale: ClassVar[frozenset] = frozenset({"fwhm"})

    def values(self) -> np.ndarray:
        return np.array([self.center, self.fwhm, self.amplitude, self.offset])

    def with_values(self, v) -> "Lorentzian":
        return replace(self, center=v[0], fwhm=v[1], amplitude=v[2], offset=v[3])

    def fn(self, x, v):
        c, w, a, o = v
        u = (x - c) / w
        return o + a / (1.0 + 4.0 * u * u)

    def jac(self, x, v):
        c, w, a, o = v
        u = (x - c) / w
        d = 1.0 + 4.0 * u * u
        jac = np.empty((x.size, 4))
        jac[:, 0] = 8.0 * a * u / (w * d * d)
        jac[:, 1] = 8.0 * a * u * u / (w * d * d)
        jac[:, 2] = 1.0 / d
        jac[:, 3] = 1.0
        return jac

    @property
    def q_factor(self) -> float:
        return self.center / self.fwhm


@dataclass(frozen=True)
class MonoExp:
    """Single exponential decay: offset + amplitude * exp(-x / tau)."""

    amplitude: float
    tau: float
    offset: float

    names: ClassVar[tuple[str, ...]] = ("amplitude", "tau", "offset")
    log_scale: ClassVar[frozenset] = frozenset({"tau"})

    def values(self) -> np.ndarray:
        return np.array([self.amplitude, self.tau, self.offset])

    def with_values(self, v) -> "MonoExp":
        return replace(self, amplitude=v[0], tau=v[1], offset=v[2])

    def fn(self, x, v):
        a, t, o = v
        return o + a * np.exp(-x / t)

    def jac(self, x, v):
        a, t, o = v
        e = np.exp(-x / t)
        jac = np.empty((x.size, 3))
        jac[:, 0] = e
        jac[:, 1] = a * x * e / (t * t)
        jac[:, 2] = 1.0
        return jac


@dataclass(frozen=True)
class G2Cw:
    """Continuous-drive correlation dip: A [1 - (1 - g0) exp(-|x| / tau0)]."""

    amplitude: float
    g2_zero: float
    tau0: float

    names: ClassVar[tuple[str, ...]] = ("amplitude", "g2_zero", "tau0")
    log_scale: ClassVar[frozenset] = frozenset({"tau0"})

    def values(self) -> np.ndarray:
        return np.array([self.amplitude, self.g2_zero, self.tau0])

    def with_values(self, v) -> "G2Cw":
        return replace(self, amplitude=v[0], g2_zero=v[1], tau0=v[2])

    def fn(self, x, v):
        a, g, t = v
        return a * (1.0 - (1.0 - g) * np.exp(-np.abs(x) / t))

    def jac(self, x, v):
        a, g, t = v
        ax = np.abs(x)
        e = np.exp(-ax / t)
        jac = np.empty((x.size, 3))
        jac[:, 0] = 1.0 - (1.0 - g) * e
        jac[:, 1] = a * e
        jac[:, 2] = -a * (1.0 - g) * e * ax / (t * t)
        return jac


@dataclass(frozen=True)
class PeakComb:
    """Train of two-sided exponential peaks with one shared decay rate.

    Model: sum_k A_k * exp(-decay * |x - k * rep_period|). The repetition
    period and the peak index list are fixed; free parameters are the shared
    decay rate and one amplitude per peak.
    """

    shared_decay: float  # ns^-1
    amplitudes: tuple[float, ...]
    rep_period: float  # ns, fixed
    peak_indices: tuple[int, ...]

    log_scale: ClassVar[frozenset] = frozenset({"shared_decay"})

    def __post_init__(self):
        if len(self.amplitudes) != len(self.peak_indices):
            raise ValueError("one amplitude per peak index required")
        if not self.rep_period > 0:
            raise ValueError("rep_period must be > 0")

    @property
    def names(self) -> tuple[str, ...]:
        return ("shared_decay",) + tuple(f"amp[{k}]" for k in self.peak_indices)

    def values(self) -> np.ndarray:
        return np.array([self.shared_decay, *self.amplitudes])

    def with_values(self, v) -> "PeakComb":
        return replace(self, shared_decay=v[0], amplitudes=tuple(v[1:]))

    def _distances(self, x):
        centers = np.asarray(self.peak_indices, dtype=float) * self.rep_period
        return np.abs(x[:, None] - centers[None, :])

    def fn(self, x, v):
        dist = self._distances(np.asarray(x, dtype=float))
        return np.exp(-v[0] * dist) @ np.asarray(v[1:])

    def jac(self, x, v):
        dist = self._distances(np.asarray(x, dtype=float))
        e = np.exp(-v[0] * dist)
        jac = np.empty((dist.shape[0], 1 + len(self.peak_indices)))
        jac[:, 0] = -(e * dist) @ np.asarray(v[1:])
        jac[:, 1:] = e
        return jac


@dataclass
class FitResult:
    """Fitted model with uncertainties and goodness of fit.

    covariance rows/columns follow model.names; sigmas are the square roots
    of its diagonal. converged is False when the iteration budget ran out,
    in which case the best parameters seen are reported.
    """

    model: object
    params: dict
    sigmas: dict
    covariance: np.ndarray
    chi2_per_dof: float
    converged: bool
    iterations: int

    def require_converged(self) -> "FitResult":
        if not self.converged:
            raise FitConvergenceError(
                f"fit did not converge in {self.iterations} iterations"
            )
        return self


def poisson_weights(y) -> np.ndarray:
    """Weights 1/max(y, 1) for count data."""
    return 1.0 / np.maximum(np.asarray(y, dtype=float), 1.0)


def _to_internal(v, islog):
    u = np.array(v, dtype=float)
    u[islog] = np.log(u[islog])
    return u


def _to_natural(u, islog):
    v = np.array(u, dtype=float)
    v[islog] = np.exp(v[islog])
    return v


def fit(
    model,
    x,
    y,
    weights=None,
    max_iterations: int = 200,
    rel_tol: float = 1e-8,
    grad_tol: float = 1e-10,
) -> FitResult:
    """Minimize sum_i w_i (y_i - f(x_i; theta))^2 starting from `model`.

    The model object carries the initial guess; the fitted parameters are
    returned in a new instance on FitResult.model. Raises
    DegenerateDataError when the normal matrix is singular at the solution.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    names = model.names
    n_par = len(names)
    if x.size != y.size:
        raise ValueError("x and y must have the same length")
    if x.size < n_par + 1:
        raise ValueError(f"need at least {n_par + 1} samples for {n_par} parameters")
    w = poisson_weights(y) if weights is None else np.asarray(weights, dtype=float)
    if w.size != y.size:
        raise ValueError("weights must match data length")
    if np.any(w <= 0):
        raise ValueError("weights must be > 0")
    sw = np.sqrt(w)

    islog = np.array([name in model.log_scale for name in names])
    v = model.values().astype(float)
    if np.any(v[islog] <= 0):
        raise ValueError("positive-definite parameters must start > 0")
    u = _to_internal(v, islog)

    def residual(vv):
        return sw * (y - model.fn(x, vv))

    def internal_jac(vv):
        jac = model.jac(x, vv) * sw[:, None]
        jac[:, islog] *= vv[islog]
        return jac

    r = residual(v)
    ssr = float(r @ r)
    lam = None
    converged = False
    iterations = 0
    eye = np.eye(n_par)

    while iterations < max_iterations:
        jac = internal_jac(v)
        grad = jac.T @ r
        if np.linalg.norm(grad) < grad_tol:
            converged = True
            break
        normal = jac.T @ jac
        if lam is None:
            lam = 1e-3 * max(float(normal.diagonal().max()), np.finfo(float).tiny)
        iterations += 1
        try:
            step = np.linalg.solve(normal + lam * eye, grad)
        except np.linalg.LinAlgError as exc:
            raise DegenerateDataError(f"singular normal matrix: {exc}") from exc
        u_trial = u + step
        v_trial = _to_natural(u_trial, islog)
        r_trial = residual(v_trial)
        ssr_trial = float(r_trial @ r_trial)
        if np.isfinite(ssr_trial) and ssr_trial <= ssr:
            rel_change = float(np.max(np.abs(step) / np.maximum(1.0, np.abs(u))))
            u, v, r, ssr = u_trial, v_trial, r_trial, ssr_trial
            lam /= 3.0
            if rel_change < rel_tol:
                converged = True
                break
        else:
            lam *= 3.0
            if lam > 1e18:
                break

    dof = max(x.size - n_par, 1)
    chi2_per_dof = ssr / dof
    jac = internal_jac(v)
    normal = jac.T @ jac
    try:
        cov_internal = np.linalg.solve(normal, eye) * chi2_per_dof
    except np.linalg.LinAlgError as exc:
        raise DegenerateDataError(f"singular normal matrix: {exc}") from exc
    scale = np.where(islog, v, 1.0)
    covariance = cov_internal * scale[:, None] * scale[None, :]
    sigmas = np.sqrt(np.clip(np.diag(covariance), 0.0, None))

    return FitResult(
        model=model.with_values(v),
        params=dict(zip(names, v.tolist())),
        sigmas=dict(zip(names, sigmas.tolist())),
        covariance=covariance,
        chi2_per_dof=chi2_per_dof,
        converged=converged,
        iterations=iterations,
    )


def _half_crossing(x, y, half, i_peak, direction):
    """Interpolated x where y crosses `half`, scanning away from the peak."""
    i = i_peak
    while 0 <= i + direction < y.size and y[i + direction] >= half:
        i += direction
    j = i + direction
    if j < 0 or j >= y.size:
        return None
    x0, x1, y0, y1 = x[i], x[j], y[i], y[j]
    if y1 == y0:
        return x1
    return x0 + (half - y0) * (x1 - x0) / (y1 - y0)


def initial_guess(kind, x, y, rep_period=None, peak_indices=None):
    """Data-driven starting point for one of the four model kinds.

    kind is one of "lorentzian", "monoexp", "g2cw", "peaks"; "peaks"
    additionally needs rep_period (ns) and the peak index list. Raises
    DegenerateDataError for flat data.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size == 0 or np.ptp(y) == 0:
        raise DegenerateDataError("flat or empty data cannot seed a fit")

    if kind == "lorentzian":
        offset = float(y.min())
        amplitude = float(y.max() - offset)
        i_peak = int(np.argmax(y))
        center = float(x[i_peak])
        half = offset + amplitude / 2.0
        left = _half_crossing(x, y, half, i_peak, -1)
        right = _half_crossing(x, y, half, i_peak, +1)
        if left is not None and right is not None and right > left:
            fwhm = float(right - left)
        else:
            fwhm = float(np.ptp(x)) / 4.0
        return Lorentzian(center=center, fwhm=fwhm, amplitude=amplitude, offset=offset)

    if kind == "monoexp":
        offset = float(y.min())
        z = y - offset
        zmax = float(z.max())
        mask = z > max(zmax * 1e-2, 0.0)
        if mask.sum() < 3:
            raise DegenerateDataError("too few points above baseline")
        slope, intercept = np.polyfit(x[mask], np.log(z[mask]), 1)
        tau = -1.0 / slope if slope < 0 else float(np.ptp(x)) / 3.0
        amplitude = float(np.exp(intercept))
        return MonoExp(amplitude=amplitude, tau=float(tau), offset=offset)

    if kind == "g2cw":
        ax = np.abs(x)
        far = ax >= 0.75 * ax.max()
        amplitude = float(y[far].mean())
        if amplitude <= 0:
            raise DegenerateDataError("nonpositive baseline in correlation data")
        order = np.argsort(ax)
        y0 = float(y[order[:2]].mean())
        g0 = max(y0 / amplitude, 0.0)
        # delay at which the dip has recovered to within 1/e of its depth
        target = amplitude - (amplitude - y0) / np.e
        tau0 = None
        for idx in order:
            if y[idx] >= target and ax[idx] > 0:
                tau0 = float(ax[idx])
                break
        if tau0 is None or tau0 <= 0:
            tau0 = float(ax.max()) / 10.0
        return G2Cw(amplitude=amplitude, g2_zero=g0, tau0=tau0)

    if kind == "peaks":
        if rep_period is None or peak_indices is None:
            raise ValueError("peaks guess needs rep_period and peak_indices")
        dx = float(np.median(np.diff(np.sort(x)))) if x.size > 1 else 1.0
        amps = []
        for k in peak_indices:
            sel = np.abs(x - k * rep_period) <= 2 * dx
            amps.append(float(y[sel].max()) if sel.any() else float(y.max()) / 10.0)
        amps = np.asarray(amps)
        # decay from the log-slope right of the central peak; fall back to the
        # tallest peak when the central one is strongly suppressed
        ref = 0
        if 0 in peak_indices:
            i0 = peak_indices.index(0)
            if amps[i0] < 0.05 * amps.max():
                ref = peak_indices[int(np.argmax(amps))]
        else:
            ref = peak_indices[int(np.argmax(amps))]
        sel = (x > ref * rep_period) & (x <= ref * rep_period + rep_period / 2.0)
        decay = None
        if sel.sum() >= 3 and np.all(y[sel] > 0):
            slope, _ = np.polyfit(x[sel], np.log(y[sel]), 1)
            if slope < 0:
                decay = -float(slope)
        if decay is None or not np.isfinite(decay):
            decay = 2.0 / rep_period
        return PeakComb(
            shared_decay=decay,
            amplitudes=tuple(amps.tolist()),
            rep_period=float(rep_period),
            peak_indices=tuple(peak_indices),
        )

    raise ValueError(f"unknown model kind {kind!r}")


def jacobian_check(model, x, rel_step: float = 1e-6) -> float:
    """Max relative deviation between analytic and central-difference Jacobians.

    Each column is compared against finite differences with step
    rel_step * max(|value|, 1), scaled by that column's largest magnitude.
    """
    x = np.asarray(x, dtype=float)
    v = model.values().astype(float)
    analytic = model.jac(x, v)
    fd = np.empty_like(analytic)
    for j in range(v.size):
        h = rel_step * max(abs(v[j]), 1.0)
        vp = v.copy()
        vm = v.copy()
        vp[j] += h
        vm[j] -= h
        fd[:, j] = (model.fn(x, vp) - model.fn(x, vm)) / (2.0 * h)
    col_scale = np.maximum(
        np.max(np.abs(analytic), axis=0), np.max(np.abs(fd), axis=0)
    )
    col_scale = np.maximum(col_scale, np.finfo(float).tiny)
    return float(np.max(np.abs(analytic - fd) / col_scale[None, :]))
