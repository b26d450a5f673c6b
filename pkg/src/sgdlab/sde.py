"""Discrete SGD and Euler-Maruyama simulation of the continuous-time SDE.

``sgd_run`` iterates ``x <- x - eta * grad f_b(x)`` with mini-batches drawn
with or without replacement. ``sde_run`` integrates

    dx = -grad f(x) dt + sqrt(2 beta_inv D(x)) dW

with Euler-Maruyama, for one path or a batch of independent paths. Each path
``p`` draws its Gaussian increments from its own stream spawned from
``(seed, p)``, so a path is identical whether it is simulated alone or inside
a larger ensemble.

For two-dimensional runs a winding centre may be given; the cumulative angle
about it is then accumulated at every step (not only at recorded snapshots).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .diffusion import WITH_REPLACEMENT, WITHOUT_REPLACEMENT, sample_batches
from .errors import NumericalError
from .models import DoubleWell, as_weights, full_gradient

ESCAPE_RADIUS = 1e6
NOISE_MODES = ("isotropic", "constant", "full", "double_well")


@dataclass(eq=False)
class Trajectory:
    """Recorded snapshots ``(n, d)`` (or ``(n, paths, d)``) with their times.

    ``winding`` holds the cumulative angle (radians) about
    ``meta["winding_center"]`` at each snapshot, accumulated step by step.
    """

    snapshots: np.ndarray
    times: np.ndarray
    meta: dict = field(default_factory=dict)
    status: str = "ok"
    winding: np.ndarray | None = None

    def __post_init__(self):
        self.snapshots = np.asarray(self.snapshots, dtype=np.float64)
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.snapshots.shape[0] != self.times.shape[0]:
            raise ValueError("snapshots and times differ in length")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")
        burnin = self.meta.get("burnin_steps", 0)
        if burnin > len(self):
            raise ValueError("burnin exceeds trajectory length")

    def __len__(self) -> int:
        return self.snapshots.shape[0]

    @property
    def dim(self) -> int:
        return self.snapshots.shape[-1]

    @property
    def final(self) -> np.ndarray:
        return self.snapshots[-1]


@dataclass
class SdeConfig:
    beta_inv: float
    dt: float
    steps: int
    noise_mode: str = "isotropic"
    diffusion: object = 1.0
    record_every: int = 1
    seed: int = 0
    winding_center: tuple | None = None

    def __post_init__(self):
        if self.beta_inv < 0:
            raise ValueError("beta_inv must be >= 0")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.steps < 1 or self.record_every < 1:
            raise ValueError("steps and record_every must be >= 1")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"unknown noise mode {self.noise_mode!r}")

    @classmethod
    def from_sgd(cls, eta: float, b: int, steps: int, **kw) -> "SdeConfig":
        """Temperature ``eta / (2b)`` and time step ``eta`` (drift-matched)."""
        return cls(beta_inv=eta / (2.0 * b), dt=eta, steps=steps, **kw)


def noise_factor(D: np.ndarray) -> tuple[np.ndarray, bool]:
    """Return ``S`` with ``S S^T = D`` and whether the eigen fallback was used."""
    D = 0.5 * (np.asarray(D, dtype=np.float64) + np.swapaxes(D, -1, -2))
    try:
        return np.linalg.cholesky(D), False
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(D)
        scale = np.maximum(w.max(axis=-1, keepdims=True), 1.0)
        if np.any(w < -1e-10 * scale):
            raise NumericalError("diffusion matrix is not PSD")
        w = np.clip(w, 0.0, None)
        return V * np.sqrt(w)[..., None, :], True


def path_streams(seed: int, n_paths: int) -> list[np.random.Generator]:
    return [np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(p,)))
            for p in range(n_paths)]


def _draw(streams, chunk: int, d: int) -> np.ndarray:
    return np.stack([s.standard_normal((chunk, d)) for s in streams], axis=1)


def _angle_step(prev, new, center):
    a0 = np.arctan2(prev[..., 1] - center[1], prev[..., 0] - center[0])
    a1 = np.arctan2(new[..., 1] - center[1], new[..., 0] - center[0])
    return (a1 - a0 + np.pi) % (2 * np.pi) - np.pi


def sde_run(drift, cfg: SdeConfig, x0) -> Trajectory:
    """Euler-Maruyama paths of ``dx = -drift(x) dt + sqrt(2 beta_inv D) dW``.

    ``drift`` maps ``(..., d)`` points to ``grad f``. ``x0`` of shape ``(d,)``
    gives one path; ``(P, d)`` gives ``P`` independent paths and snapshots of
    shape ``(n, P, d)``. With ``noise_mode="double_well"`` the drift must be a
    :class:`~sgdlab.models.DoubleWell` and a compiled kernel is used.
    """
    if cfg.noise_mode == "double_well":
        if not isinstance(drift, DoubleWell):
            raise ValueError("noise_mode 'double_well' needs a DoubleWell model as drift")
        return double_well_sde(drift.lam, cfg, x0)
    x0 = np.asarray(x0, dtype=np.float64)
    single = x0.ndim == 1
    x = np.atleast_2d(x0).copy()
    P, d = x.shape
    grad = drift.grad_f if hasattr(drift, "grad_f") else drift

    fallbacks = 0
    if cfg.noise_mode == "isotropic":
        scale = math.sqrt(2.0 * cfg.beta_inv * cfg.dt * float(cfg.diffusion))
        factor = None
    elif cfg.noise_mode == "constant":
        factor, used = noise_factor(np.asarray(cfg.diffusion, dtype=np.float64))
        fallbacks += int(used)
        scale = math.sqrt(2.0 * cfg.beta_inv * cfg.dt)
    else:
        factor = None
        scale = math.sqrt(2.0 * cfg.beta_inv * cfg.dt)

    center = None if cfg.winding_center is None else np.asarray(cfg.winding_center, float)
    if center is not None and d != 2:
        raise ValueError("winding is defined for planar trajectories only")
    n_rec = cfg.steps // cfg.record_every
    snaps = np.empty((n_rec + 1, P, d))
    snaps[0] = x
    wind = np.zeros((n_rec + 1, P)) if center is not None else None
    angle = np.zeros(P)
    streams = path_streams(cfg.seed, P)
    chunk = max(1, min(cfg.steps, (1 << 18) // max(1, P * d)))
    status = "ok"
    k = 0
    done = 0
    while done < cfg.steps and status == "ok":
        m = min(chunk, cfg.steps - done)
        xi = _draw(streams, m, d)
        for s in range(m):
            g = grad(x)
            if cfg.noise_mode == "full":
                S, used = noise_factor(cfg.diffusion(x))
                fallbacks += int(used)
                noise = np.einsum("pij,pj->pi", S, xi[s])
            elif factor is not None:
                noise = xi[s] @ factor.T
            else:
                noise = xi[s]
            new = x - g * cfg.dt + scale * noise
            if center is not None:
                angle += _angle_step(x, new, center)
            x = new
            step = done + s + 1
            if not np.all(np.isfinite(x)):
                status = "diverged"
            elif np.abs(x).max() > ESCAPE_RADIUS:
                status = "escaped"
            if status != "ok":
                break
            if step % cfg.record_every == 0:
                k += 1
                snaps[k] = x
                if wind is not None:
                    wind[k] = angle
        done += m
    if fallbacks:
        warnings.warn(f"Cholesky failed {fallbacks} times; used eigenvalue square root",
                      RuntimeWarning, stacklevel=2)
    snaps = snaps[:k + 1]
    times = np.arange(k + 1) * cfg.record_every * cfg.dt
    if wind is not None:
        wind = wind[:k + 1]
    if single:
        snaps = snaps[:, 0]
        wind = None if wind is None else wind[:, 0]
    meta = {"kind": "sde", "beta_inv": cfg.beta_inv, "dt": cfg.dt, "steps": cfg.steps,
            "record_every": cfg.record_every, "seed": cfg.seed, "noise_mode": cfg.noise_mode,
            "burnin_steps": 0, "cholesky_fallbacks": fallbacks,
            "winding_center": None if center is None else [float(c) for c in center]}
    return Trajectory(snaps, times, meta, status, wind)


@numba.njit(cache=True, nogil=True)
def _double_well_kernel(x, lam, dt, scale, xi, record_every, step0, out, wind_out,
                        cx, cy, angle):
    """Advance one double-well path over the noise block ``xi``.

    Returns ``(n_written, angle, status)`` where status 0 = ok, 1 = diverged,
    2 = escaped.
    """
    x1 = x[0]
    x2 = x[1]
    a_prev = math.atan2(x2 - cy, x1 - cx)
    k = 0
    status = 0
    for s in range(xi.shape[0]):
        r2 = x1 * x1 + x2 * x2
        phi = 0.25 * (x1 * x1 - 1.0) ** 2 + 0.5 * x2 * x2
        w = lam * math.exp(phi - 0.25 * r2 * r2)
        g1 = x1 * (x1 * x1 - 1.0) + w * x2
        g2 = x2 - w * x1
        x1 = x1 - g1 * dt + scale * xi[s, 0]
        x2 = x2 - g2 * dt + scale * xi[s, 1]
        a = math.atan2(x2 - cy, x1 - cx)
        da = a - a_prev
        if da > math.pi:
            da -= 2.0 * math.pi
        elif da < -math.pi:
            da += 2.0 * math.pi
        angle += da
        a_prev = a
        if not (math.isfinite(x1) and math.isfinite(x2)):
            status = 1
            break
        if abs(x1) > 1e6 or abs(x2) > 1e6:
            status = 2
            break
        if (step0 + s + 1) % record_every == 0:
            out[k, 0] = x1
            out[k, 1] = x2
            wind_out[k] = angle
            k += 1
    x[0] = x1
    x[1] = x2
    return k, angle, status


def double_well_sde(lam: float, cfg: SdeConfig, x0=(1.0, 0.0)) -> Trajectory:
    """Single double-well path with isotropic noise, compiled inner loop.

    Uses the same noise stream as :func:`sde_run` path 0, so both integrators
    agree to round-off. Winding is accumulated about ``cfg.winding_center``
    (origin by default).
    """
    x = as_weights(x0, 2).copy()
    center = (0.0, 0.0) if cfg.winding_center is None else tuple(cfg.winding_center)
    scale = math.sqrt(2.0 * cfg.beta_inv * cfg.dt * float(cfg.diffusion))
    n_rec = cfg.steps // cfg.record_every
    snaps = np.empty((n_rec + 1, 2))
    wind = np.zeros(n_rec + 1)
    snaps[0] = x
    stream = path_streams(cfg.seed, 1)[0]
    chunk = 1 << 20
    k, done, angle, status = 1, 0, 0.0, 0
    while done < cfg.steps and status == 0:
        m = min(chunk, cfg.steps - done)
        xi = stream.standard_normal((m, 2))
        written, angle, status = _double_well_kernel(
            x, float(lam), cfg.dt, scale, xi, cfg.record_every, done,
            snaps[k:], wind[k:], center[0], center[1], angle)
        k += written
        done += m
    meta = {"kind": "sde", "model": "double_well", "lam": float(lam), "beta_inv": cfg.beta_inv,
            "dt": cfg.dt, "steps": cfg.steps, "record_every": cfg.record_every,
            "seed": cfg.seed, "noise_mode": "double_well", "burnin_steps": 0,
            "winding_center": [float(c) for c in center], "total_angle": angle}
    status_name = {0: "ok", 1: "diverged", 2: "escaped"}[status]
    times = np.arange(k) * cfg.record_every * cfg.dt
    return Trajectory(snaps[:k], times, meta, status_name, wind[:k])


def steps_per_epoch(N: int, b: int) -> int:
    return -(-N // b)


def sgd_run(model, x0, eta: float, b: int, scheme: str = WITH_REPLACEMENT,
            steps: int = 1000, record_every: int = 1, seed: int = 0) -> Trajectory:
    """Plain SGD; each step draws a fresh mini-batch under ``scheme``.

    Times are in epochs (``ceil(N / b)`` steps). A non-finite iterate stops
    the run with status ``"diverged"``; leaving ``|x|_inf <= 1e6`` gives
    ``"escaped"``. Both keep the snapshots recorded so far.
    """
    x = as_weights(x0, model.dim).copy()
    N = model.n_samples
    if scheme == WITHOUT_REPLACEMENT and b > N:
        raise ValueError(f"batch size {b} exceeds dataset size {N}")
    if steps < 1 or record_every < 1:
        raise ValueError("steps and record_every must be >= 1")
    rng = np.random.default_rng(seed)
    snaps = [x.copy()]
    steps_done = [0]
    status = "ok"
    for k in range(1, steps + 1):
        idx = sample_batches(rng, scheme, N, b, 1)[0]
        with np.errstate(over="ignore", invalid="ignore"):
            x = x - eta * model.sample_grads(x, idx).mean(axis=0)
        if not np.all(np.isfinite(x)):
            status = "diverged"
            break
        if np.abs(x).max() > ESCAPE_RADIUS:
            status = "escaped"
        if k % record_every == 0 or status != "ok":
            snaps.append(x.copy())
            steps_done.append(k)
        if status != "ok":
            break
    spe = steps_per_epoch(N, b)
    meta = {"kind": "sgd", "model": getattr(model, "kind", type(model).__name__),
            "eta": eta, "b": b, "scheme": scheme, "seed": seed, "steps": steps,
            "record_every": record_every, "burnin_steps": 0, "steps_per_epoch": spe}
    return Trajectory(np.array(snaps), np.array(steps_done, dtype=np.float64) / spe, meta, status)


def sgd_update_samples(model, x, eta: float, b: int, scheme: str, trials: int,
                       seed: int = 0) -> np.ndarray:
    """``trials`` independent one-step SGD updates ``-eta * grad f_b(x)`` from ``x``."""
    x = as_weights(x, model.dim)
    rng = np.random.default_rng(seed)
    idx = sample_batches(rng, scheme, model.n_samples, b, trials)
    grads = model.sample_grads(x, np.arange(model.n_samples))
    return -eta * grads[idx].mean(axis=1)


def gradient_norm_series(model, traj: Trajectory) -> np.ndarray:
    """``|grad f(x_k)| / sqrt(d)`` for each snapshot."""
    snaps = traj.snapshots
    if snaps.ndim != 2 or snaps.shape[1] != model.dim:
        raise ValueError("trajectory does not match the model dimension")
    return np.array([np.linalg.norm(full_gradient(model, s)) for s in snaps]) / np.sqrt(model.dim)


def with_burnin(traj: Trajectory, burnin_steps: int) -> Trajectory:
    meta = dict(traj.meta, burnin_steps=int(burnin_steps))
    return replace(traj, meta=meta)
