"""Diffusion matrices of mini-batch gradient noise and their spectra.

For per-sample gradients ``g_k`` with mean ``g``:

* with replacement, ``var(grad f_b) = D / b`` with
  ``D = (1/N) sum_k g_k g_k^T - g g^T``;
* without replacement, ``var(grad f_b) = (1/b)(1 - b/N) D'`` with
  ``D' = (1/(N-1)) sum_k g_k g_k^T - (N/(N-1)) g g^T = N/(N-1) D``.

The coefficient ``N/(N-1)`` on ``g g^T`` is the one that reproduces exhaustive
enumeration of all size-``b`` subsets; the alternative ``1 - 1/(N-1)`` does not
(for ``N = 2, b = 1`` it leaves a non-zero variance in a direction where the
exact variance vanishes).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import NumericalError
from .models import SampleGradientSet, per_sample_gradients

WITH_REPLACEMENT = "with_replacement"
WITHOUT_REPLACEMENT = "without_replacement"
SCHEMES = (WITH_REPLACEMENT, WITHOUT_REPLACEMENT)

_MC_BLOCK = 4096


class Spectrum(NamedTuple):
    eigenvalues: np.ndarray
    rank: int
    rank_fraction: float
    mean: float
    std: float


@dataclass(frozen=True, eq=False)
class DiffusionEstimate:
    matrix: np.ndarray
    scheme: str
    eigenvalues: np.ndarray
    rank: int
    rank_fraction: float
    eig_mean: float
    eig_std: float
    n_samples: int
    provenance: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class TemperaturePair:
    eta: float
    b: int
    N: int
    beta_inv: float
    beta_inv_without_replacement: float


def _grads(grads) -> np.ndarray:
    if isinstance(grads, SampleGradientSet):
        return grads.per_sample
    return np.atleast_2d(np.asarray(grads, dtype=np.float64))


def eigenspectrum(est) -> Spectrum:
    """Sorted eigenvalues, numerical rank and summary statistics.

    Rank counts eigenvalues above ``lambda_max * d * eps``. Negative round-off
    down to ``-1e-10 * max(1, lambda_max)`` is clamped to zero; anything more
    negative means the input is not PSD and raises.
    """
    m = est.matrix if isinstance(est, DiffusionEstimate) else np.asarray(est, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    d = m.shape[0]
    sym = 0.5 * (m + m.T)
    try:
        lam = np.linalg.eigvalsh(sym)[::-1]
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigen-solver failed: {exc}") from exc
    lam_max = max(float(lam[0]), 0.0)
    floor = -1e-10 * max(1.0, lam_max)
    if lam[-1] < floor:
        raise NumericalError(f"matrix is not PSD (smallest eigenvalue {lam[-1]:.3e})")
    lam = np.where(lam < 0.0, 0.0, lam)
    tol = lam_max * d * np.finfo(np.float64).eps
    rank = int(np.count_nonzero(lam > tol)) if lam_max > 0 else 0
    return Spectrum(lam, rank, rank / d, float(lam.mean()), float(lam.std()))


def _estimate(matrix, scheme, n, provenance=None) -> DiffusionEstimate:
    matrix = 0.5 * (matrix + matrix.T)
    spec = eigenspectrum(matrix)
    return DiffusionEstimate(matrix=matrix, scheme=scheme, eigenvalues=spec.eigenvalues,
                             rank=spec.rank, rank_fraction=spec.rank_fraction,
                             eig_mean=spec.mean, eig_std=spec.std, n_samples=n,
                             provenance=dict(provenance or {}))


def diffusion_with_replacement(grads, provenance=None) -> DiffusionEstimate:
    """``D = (1/N) sum (g_k - g)(g_k - g)^T``, the centered second moment."""
    G = _grads(grads)
    n = G.shape[0]
    C = G - G.mean(axis=0)
    return _estimate(C.T @ C / n, WITH_REPLACEMENT, n, provenance)


def diffusion_without_replacement(grads, provenance=None) -> DiffusionEstimate:
    """``D' = (1/(N-1)) sum (g_k - g)(g_k - g)^T``; needs ``N >= 2``."""
    G = _grads(grads)
    n = G.shape[0]
    if n < 2:
        raise ValueError("without-replacement diffusion needs N >= 2")
    C = G - G.mean(axis=0)
    return _estimate(C.T @ C / (n - 1), WITHOUT_REPLACEMENT, n, provenance)


def diffusion_matrix(grads, scheme: str = WITH_REPLACEMENT, provenance=None) -> DiffusionEstimate:
    if scheme == WITH_REPLACEMENT:
        return diffusion_with_replacement(grads, provenance)
    if scheme == WITHOUT_REPLACEMENT:
        return diffusion_without_replacement(grads, provenance)
    raise ValueError(f"unknown sampling scheme {scheme!r}")


def minibatch_variance_prefactor(scheme: str, b: int, N: int) -> float:
    """Factor multiplying the scheme's diffusion matrix to give ``var(grad f_b)``."""
    if scheme == WITH_REPLACEMENT:
        return 1.0 / b
    if scheme == WITHOUT_REPLACEMENT:
        return (1.0 / b) * (1.0 - b / N)
    raise ValueError(f"unknown sampling scheme {scheme!r}")


def sample_batches(rng: np.random.Generator, scheme: str, n: int, b: int, size: int) -> np.ndarray:
    """Draw ``size`` mini-batches of ``b`` indices from ``range(n)``, each row sorted."""
    if scheme == WITH_REPLACEMENT:
        idx = rng.integers(0, n, size=(size, b))
    elif scheme == WITHOUT_REPLACEMENT:
        if b > n:
            raise ValueError(f"batch size {b} exceeds dataset size {n}")
        idx = np.argsort(rng.random((size, n)), axis=1)[:, :b]
    else:
        raise ValueError(f"unknown sampling scheme {scheme!r}")
    # a fixed summation order makes b = N without replacement exactly noiseless
    return np.sort(idx, axis=1)


def minibatch_variance_from_grads(grads, scheme: str, b: int, trials: int,
                                  seed: int = 0) -> np.ndarray:
    """Monte-Carlo estimate of ``var(grad f_b)`` around the exact full mean.

    Trials are processed in fixed blocks; block ``k`` draws from its own
    stream spawned from ``(seed, k)``, so the estimate does not depend on how
    blocks are scheduled.
    """
    G = _grads(grads)
    n, d = G.shape
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if b < 1:
        raise ValueError("batch size must be >= 1")
    # same reduction kernel as the batch means below
    full = np.add.reduce(G[np.arange(n)[None, :]], axis=1)[0] / n
    acc = np.zeros((d, d))
    for start in range(0, trials, _MC_BLOCK):
        m = min(_MC_BLOCK, trials - start)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(start // _MC_BLOCK,)))
        idx = sample_batches(rng, scheme, n, b, m)
        means = np.add.reduce(G[idx], axis=1) / b
        dev = means - full
        acc += dev.T @ dev
    return acc / trials


def minibatch_variance_mc(model, x, scheme: str, b: int, trials: int, seed: int = 0) -> np.ndarray:
    grads = per_sample_gradients(model, x)
    if scheme == WITHOUT_REPLACEMENT and b > grads.n:
        raise ValueError(f"batch size {b} exceeds dataset size {grads.n}")
    return minibatch_variance_from_grads(grads, scheme, b, trials, seed)


def temperatures(eta: float, b: int, N: int) -> TemperaturePair:
    if eta <= 0:
        raise ValueError("learning rate must be positive")
    if b < 1:
        raise ValueError("batch size must be >= 1")
    if b > N:
        raise ValueError(f"batch size {b} exceeds dataset size {N}")
    beta_inv = eta / (2.0 * b)
    return TemperaturePair(eta=eta, b=b, N=N, beta_inv=beta_inv,
                           beta_inv_without_replacement=beta_inv * (1.0 - b / N))


def beta_scaling_constant(eta: float, b: int, eigenvalues) -> float:
    """``(eta / b) * mean(eigenvalues)``, held fixed when trading off eta and b."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    if lam.size < 1:
        raise ValueError("need at least one eigenvalue")
    return (eta / b) * float(lam.mean())


def architecture_score(est) -> float:
    """``rank(D)/d + var(lambda(D))`` with the population variance."""
    if isinstance(est, DiffusionEstimate):
        return est.rank_fraction + float(np.var(est.eigenvalues))
    spec = eigenspectrum(est)
    return spec.rank_fraction + float(np.var(spec.eigenvalues))


def spectrum_summary(est: DiffusionEstimate, eta: float | None = None, b: int | None = None) -> dict:
    out = {
        "scheme": est.scheme,
        "d": est.dim,
        "N": est.n_samples,
        "rank": est.rank,
        "rank_fraction": est.rank_fraction,
        "eig_mean": est.eig_mean,
        "eig_std": est.eig_std,
        "score": architecture_score(est),
        "beta_inv": None,
    }
    if eta is not None and b is not None:
        t = temperatures(eta, b, max(b, est.n_samples))
        out["beta_inv"] = (t.beta_inv if est.scheme == WITH_REPLACEMENT
                           else t.beta_inv_without_replacement)
        out["beta_scaling"] = beta_scaling_constant(eta, b, est.eigenvalues)
    return out
