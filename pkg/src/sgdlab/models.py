"""Loss families with per-sample gradients.

Three families are provided:

* :class:`QuadraticEnsemble` -- ``f_k(x) = 1/2 (x - c_k)^T A_k (x - c_k)``, with a
  closed-form diffusion matrix, used as an oracle model.
* :class:`DoubleWell` -- the planar double-well vector field whose steady state
  is ``exp(-Phi)`` for every rotation strength ``lam``.
* :class:`TinyMLP` -- input -> affine -> ReLU -> affine -> softmax cross-entropy,
  with batched closed-form backprop.

Weights are plain 1-D float64 arrays throughout the package.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError


def as_weights(x, dim: int | None = None) -> np.ndarray:
    """Validate and return ``x`` as a finite 1-D float64 weight vector."""
    w = np.asarray(x, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError(f"weight vector must be 1-D, got shape {w.shape}")
    if dim is not None and w.shape[0] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {w.shape[0]}")
    if not np.all(np.isfinite(w)):
        raise ValueError("weight vector has non-finite entries")
    return w


@dataclass(frozen=True, eq=False)
class SampleGradientSet:
    """Per-sample gradients ``(n, d)`` and their arithmetic mean."""

    per_sample: np.ndarray
    mean: np.ndarray

    @classmethod
    def from_array(cls, grads: np.ndarray) -> "SampleGradientSet":
        grads = np.atleast_2d(np.asarray(grads, dtype=np.float64))
        if grads.shape[0] < 1:
            raise ValueError("need at least one sample gradient")
        return cls(per_sample=grads, mean=grads.mean(axis=0))

    @property
    def n(self) -> int:
        return self.per_sample.shape[0]

    @property
    def dim(self) -> int:
        return self.per_sample.shape[1]


def _check_indices(indices, n: int) -> np.ndarray:
    if indices is None:
        return np.arange(n)
    idx = np.asarray(indices, dtype=np.int64).ravel()
    if idx.size == 0:
        raise ValueError("indices must be nonempty")
    if idx.min() < 0 or idx.max() >= n:
        raise IndexError(f"sample index out of range [0, {n})")
    return idx


# ---------------------------------------------------------------------------
# quadratic ensemble


@dataclass(frozen=True, eq=False)
class QuadraticEnsemble:
    centers: np.ndarray
    curvatures: np.ndarray | None = None
    seed: int = 0
    kind = "quadratic_ensemble"

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        object.__setattr__(self, "centers", c)
        if self.curvatures is not None:
            a = np.asarray(self.curvatures, dtype=np.float64)
            if a.shape == (c.shape[1], c.shape[1]):
                a = np.broadcast_to(a, (c.shape[0],) + a.shape).copy()
            if a.shape != (c.shape[0], c.shape[1], c.shape[1]):
                raise ValueError(f"curvatures must have shape (N, d, d), got {a.shape}")
            object.__setattr__(self, "curvatures", a)

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def n_samples(self) -> int:
        return self.centers.shape[0]

    def sample_losses(self, x, idx):
        r = x[None, :] - self.centers[idx]
        if self.curvatures is None:
            return 0.5 * np.einsum("ni,ni->n", r, r)
        return 0.5 * np.einsum("ni,nij,nj->n", r, self.curvatures[idx], r)

    def sample_grads(self, x, idx):
        r = x[None, :] - self.centers[idx]
        if self.curvatures is None:
            return r
        return np.einsum("nij,nj->ni", self.curvatures[idx], r)


# ---------------------------------------------------------------------------
# double well


def double_well_potential(x) -> np.ndarray:
    """``Phi(x) = (x1^2 - 1)^2 / 4 + x2^2 / 2`` for points of shape ``(..., 2)``."""
    x = np.asarray(x, dtype=np.float64)
    x1, x2 = x[..., 0], x[..., 1]
    return 0.25 * (x1 * x1 - 1.0) ** 2 + 0.5 * x2 * x2


def double_well_field(lam: float, x):
    """Evaluate ``(Phi, grad Phi, j, grad f)`` of the double-well example.

    ``j = lam * exp(Phi) * J_ss`` with ``J_ss = exp(-|x|^4 / 4) * (-x2, x1)`` and
    ``grad f = grad Phi - j``. Works on a single point or on arrays of shape
    ``(..., 2)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != 2:
        raise ValueError("double well is defined on the plane (d = 2)")
    x1, x2 = x[..., 0], x[..., 1]
    with np.errstate(over="ignore", invalid="ignore"):
        phi = 0.25 * (x1 * x1 - 1.0) ** 2 + 0.5 * x2 * x2
        grad_phi = np.stack([x1 * (x1 * x1 - 1.0), x2], axis=-1)
        r2 = x1 * x1 + x2 * x2
        # exp(Phi) and exp(-r^4/4) are combined to avoid overflow far out
        rate = lam * np.exp(phi - 0.25 * r2 * r2)
        j = np.stack([-rate * x2, rate * x1], axis=-1)
        grad_f = grad_phi - j
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(grad_f))):
        raise NumericalError("double-well evaluation overflowed (domain escape)")
    return phi, grad_phi, j, grad_f


@dataclass(frozen=True)
class DoubleWell:
    lam: float = 0.0
    beta: float = 1.0
    seed: int = 0
    kind = "double_well"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.beta <= 0:
            raise ValueError("beta must be > 0")

    dim = 2
    n_samples = 1

    def grad_f(self, x):
        return double_well_field(self.lam, x)[3]

    def sample_losses(self, x, idx):
        # f itself has no closed form for lam > 0; the potential is reported
        return np.repeat(double_well_potential(x), len(idx))

    def sample_grads(self, x, idx):
        return np.repeat(self.grad_f(x)[None, :], len(idx), axis=0)


# ---------------------------------------------------------------------------
# tiny MLP


@dataclass(frozen=True, eq=False)
class TinyMLP:
    """Two-layer ReLU network with softmax cross-entropy, one loss per example.

    Parameter layout in the flat weight vector: ``W1 (hidden, input_dim)``,
    ``b1 (hidden,)``, ``W2 (classes, hidden)``, ``b2 (classes,)``.
    """

    inputs: np.ndarray
    labels: np.ndarray
    hidden: int = 16
    classes: int = 5
    seed: int = 0
    kind = "tiny_mlp"
    _shapes: tuple = field(init=False, repr=False)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        y = np.asarray(self.labels, dtype=np.int64).ravel()
        if X.shape[0] != y.shape[0]:
            raise ValueError("inputs and labels disagree on the number of samples")
        if self.hidden < 1 or self.classes < 1 or X.shape[1] < 1:
            raise ValueError("tiny_mlp dimensions must be positive")
        if y.size and (y.min() < 0 or y.max() >= self.classes):
            raise ValueError(f"labels must lie in [0, {self.classes})")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "labels", y)
        h, c, i = self.hidden, self.classes, X.shape[1]
        object.__setattr__(self, "_shapes", ((h, i), (h,), (c, h), (c,)))

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return sum(int(np.prod(s)) for s in self._shapes)

    def unpack(self, x):
        out, k = [], 0
        for s in self._shapes:
            n = int(np.prod(s))
            out.append(x[k:k + n].reshape(s))
            k += n
        return out

    def init_weights(self, seed: int | None = None) -> np.ndarray:
        """Uniform in ``[-a, a]`` with ``a = 1/sqrt(fan_in)`` per layer."""
        rng = np.random.default_rng(self.seed if seed is None else seed)
        h, c, i = self.hidden, self.classes, self.input_dim
        parts = []
        for shape, fan_in in zip(self._shapes, (i, i, h, h)):
            a = 1.0 / np.sqrt(fan_in)
            parts.append(rng.uniform(-a, a, size=shape).ravel())
        return np.concatenate(parts)

    def _forward(self, x, idx):
        W1, b1, W2, b2 = self.unpack(x)
        X = self.inputs[idx]
        z1 = X @ W1.T + b1
        a1 = np.maximum(z1, 0.0)
        z2 = a1 @ W2.T + b2
        z2 = z2 - z2.max(axis=1, keepdims=True)
        logp = z2 - np.log(np.exp(z2).sum(axis=1, keepdims=True))
        return X, z1, a1, logp

    def sample_losses(self, x, idx):
        _, _, _, logp = self._forward(x, idx)
        return -logp[np.arange(len(idx)), self.labels[idx]]

    def sample_grads(self, x, idx):
        W1, b1, W2, b2 = self.unpack(x)
        X, z1, a1, logp = self._forward(x, idx)
        n = len(idx)
        dz2 = np.exp(logp)
        dz2[np.arange(n), self.labels[idx]] -= 1.0
        dW2 = dz2[:, :, None] * a1[:, None, :]
        dz1 = (dz2 @ W2) * (z1 > 0)
        dW1 = dz1[:, :, None] * X[:, None, :]
        return np.concatenate(
            [dW1.reshape(n, -1), dz1, dW2.reshape(n, -1), dz2], axis=1)


# ---------------------------------------------------------------------------
# uniform interface


def sample_losses(model, x, indices=None) -> np.ndarray:
    x = as_weights(x, model.dim)
    idx = _check_indices(indices, model.n_samples)
    with np.errstate(over="raise", invalid="raise"):
        try:
            out = model.sample_losses(x, idx)
        except FloatingPointError as exc:
            raise NumericalError(f"loss evaluation overflowed: {exc}") from exc
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite loss")
    return out


def per_sample_gradients(model, x, indices=None) -> SampleGradientSet:
    """Exact per-example gradients for the requested sample indices (0-based)."""
    x = as_weights(x, model.dim)
    idx = _check_indices(indices, model.n_samples)
    grads = model.sample_grads(x, idx)
    if not np.all(np.isfinite(grads)):
        raise NumericalError("non-finite gradient")
    return SampleGradientSet.from_array(grads)


def full_gradient(model, x) -> np.ndarray:
    """Average gradient over the whole dataset."""
    return per_sample_gradients(model, x).mean


def minibatch_gradient(model, x, indices) -> np.ndarray:
    """Mean gradient over ``indices``; repeated indices count repeatedly."""
    return per_sample_gradients(model, x, indices).mean
