"""Trajectory analytics: increment spectra, autocorrelation and winding.

Every function accepts a :class:`~sgdlab.sde.Trajectory` or a plain array of
snapshots ``(n, d)``. Frequencies are in cycles per recorded snapshot.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

Z99 = 2.576
EPS_CENTER = 1e-6
MIN_FFT_SAMPLES = 64
MIN_CYCLE_SAMPLES = 1000


@dataclass(eq=False)
class SpectrumReport:
    freqs: np.ndarray
    amplitude: np.ndarray
    amplitude_std: np.ndarray

    def band_mean(self, fmax: float, fmin: float = 0.0) -> float:
        """Mean amplitude over ``fmin < f < fmax`` (the DC bin is never included)."""
        sel = (self.freqs > fmin) & (self.freqs < fmax)
        if not np.any(sel):
            raise ValueError(f"no frequency bins below {fmax}")
        return float(self.amplitude[sel].mean())


@dataclass(eq=False)
class AutocorrReport:
    lags: np.ndarray
    ac: np.ndarray
    band: float
    n: int

    def outside(self) -> np.ndarray:
        return np.abs(self.ac) > self.band

    def fraction_inside(self, start: int = 1) -> float:
        return float(np.mean(~self.outside()[start:]))


@dataclass
class CycleReport:
    winding_number: float
    angular_drift_rate: float
    dominant_freq: float | None
    skipped: int
    steps: int
    center: tuple

    @property
    def turns_per_million_steps(self) -> float:
        return self.winding_number / self.steps * 1e6

    def to_dict(self) -> dict:
        return {"winding_number": self.winding_number,
                "angular_drift_rate": self.angular_drift_rate,
                "dominant_freq": self.dominant_freq, "skipped": self.skipped,
                "steps": self.steps, "center": list(self.center),
                "turns_per_million_steps": self.turns_per_million_steps}


def _series(traj, burnin: int) -> np.ndarray:
    x = getattr(traj, "snapshots", traj)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("expected snapshots of shape (n, d)")
    if burnin < 0:
        raise ValueError("burnin must be >= 0")
    return x[burnin:]


def increment_fft(traj, burnin: int = 0) -> SpectrumReport:
    """Magnitude spectrum of first differences, mean and std over coordinates."""
    x = _series(traj, burnin)
    if x.shape[0] < MIN_FFT_SAMPLES:
        raise ValueError(f"need at least {MIN_FFT_SAMPLES} post-burnin samples, got {x.shape[0]}")
    dx = np.diff(x, axis=0)
    dx = dx - dx.mean(axis=0)
    amp = np.abs(np.fft.rfft(dx, axis=0))
    freqs = np.fft.rfftfreq(dx.shape[0])
    return SpectrumReport(freqs, amp.mean(axis=1), amp.std(axis=1))


def low_frequency_excess(traj, burnin: int = 0, fmax: float = 0.02, seed: int = 0) -> float:
    """Low-band amplitude ratio of the increments against white noise of equal scale.

    The control replaces each coordinate's increments by seeded Gaussian
    white noise with the same standard deviation and length.
    """
    x = _series(traj, burnin)
    report = increment_fft(x)
    dx = np.diff(x, axis=0)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(dx.shape) * dx.std(axis=0)
    control = increment_fft(np.vstack([np.zeros((1, x.shape[1])), np.cumsum(noise, axis=0)]))
    return report.band_mean(fmax) / control.band_mean(fmax)


def autocorrelation(traj, burnin: int = 0, max_lag: int = 100) -> AutocorrReport:
    """Biased autocorrelation averaged over coordinates, with the 99% white-noise band."""
    x = _series(traj, burnin)
    n = x.shape[0]
    if max_lag < 1 or max_lag >= n / 2:
        raise ValueError(f"max_lag must lie in [1, n/2) for n = {n}")
    c = x - x.mean(axis=0)
    var = np.einsum("ij,ij->j", c, c)
    keep = var > 0
    if not np.any(keep):
        raise NumericalError("zero variance")
    c, var = c[:, keep], var[keep]
    ac = np.array([(np.einsum("ij,ij->j", c[:n - k], c[k:]) / var).mean()
                   for k in range(max_lag + 1)])
    return AutocorrReport(np.arange(max_lag + 1), ac, Z99 / np.sqrt(n), n)


def autocorrelation_fft(traj, burnin: int = 0, max_lag: int = 100) -> np.ndarray:
    """Same estimator through the power spectrum (Wiener-Khinchin), for cross-checks."""
    x = _series(traj, burnin)
    n = x.shape[0]
    c = x - x.mean(axis=0)
    m = 1 << int(np.ceil(np.log2(2 * n)))
    power = np.abs(np.fft.rfft(c, n=m, axis=0)) ** 2
    acov = np.fft.irfft(power, n=m, axis=0)[:max_lag + 1]
    keep = acov[0] > 0
    if not np.any(keep):
        raise NumericalError("zero variance")
    return (acov[:, keep] / acov[0, keep]).mean(axis=1)


def angle_increments(x: np.ndarray, center, eps: float = EPS_CENTER):
    """Nearest-branch angle increments about ``center``; returns ``(dtheta, skipped)``.

    Points closer than ``eps`` to the centre are dropped. An exact half-turn
    jump is ambiguous and counted as zero.
    """
    r = x - np.asarray(center, dtype=np.float64)
    near = np.hypot(r[:, 0], r[:, 1]) <= eps
    theta = np.arctan2(r[~near, 1], r[~near, 0])
    d = np.diff(theta)
    d = (d + np.pi) % (2.0 * np.pi) - np.pi
    d[np.isclose(np.abs(d), np.pi, rtol=0.0, atol=1e-15)] = 0.0
    return d, int(near.sum())


def detect_limit_cycle(traj, center=(0.0, 0.0), burnin: int = 0,
                       eps: float = EPS_CENTER) -> CycleReport:
    """Net signed turns about ``center`` and the mean angular drift per step.

    When the trajectory carries a step-resolution winding record about the
    same centre (from the SDE integrators) that record is used for the turn
    count; otherwise angles are unwrapped between recorded snapshots.
    """
    x = _series(traj, burnin)
    if x.shape[1] != 2:
        raise ValueError("limit-cycle detection needs a planar trajectory")
    if x.shape[0] < MIN_CYCLE_SAMPLES:
        raise ValueError(f"need at least {MIN_CYCLE_SAMPLES} post-burnin samples")
    meta = getattr(traj, "meta", {}) or {}
    every = int(meta.get("record_every", 1))
    steps = (x.shape[0] - 1) * every
    dtheta, skipped = angle_increments(x, center, eps)
    wind = getattr(traj, "winding", None)
    same_center = (wind is not None and meta.get("winding_center") is not None
                   and np.allclose(meta["winding_center"], center))
    if same_center:
        total = float(wind[-1] - wind[burnin])
    else:
        total = float(dtheta.sum())
    dominant = None
    if dtheta.size >= MIN_FFT_SAMPLES:
        amp = np.abs(np.fft.rfft(dtheta - dtheta.mean()))[1:]
        freqs = np.fft.rfftfreq(dtheta.size)[1:]
        med = np.median(amp)
        k = int(np.argmax(amp))
        if med > 0 and amp[k] > 3.0 * med:
            dominant = float(freqs[k])
    return CycleReport(winding_number=total / (2.0 * np.pi),
                       angular_drift_rate=total / steps, dominant_freq=dominant,
                       skipped=skipped, steps=steps, center=tuple(float(c) for c in center))
