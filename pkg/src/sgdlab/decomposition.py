"""Linearized drift decomposition ``F = (D + Q) U`` near a critical point.

The drift convention is ``dx = -F x dt + sqrt(2 beta_inv D) dW``. The
antisymmetric ``Q`` solves the Sylvester equation

    F Q + Q F^T = F D - D F^T,

after which ``G = D + Q`` satisfies ``G F^T = F G^T`` and ``U = G^{-1} F`` is
symmetric. The stationary density is Gaussian with covariance
``beta_inv * U^{-1}``, which is cross-checked against an independent Lyapunov
solve.

Divergences of matrix fields use the row convention
``(div M)_i = sum_j d_j M_ij``, the one under which ``J = beta_inv div(Q rho)``
is divergence-free for antisymmetric ``Q``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NumericalError

OK = "ok"
NON_UNIQUE = "non-unique"
IRREDUCIBLE = "irreducible"

SINGULAR_RTOL = 1e-10


@dataclass(eq=False)
class LinearDecomposition:
    F: np.ndarray
    D: np.ndarray
    G: np.ndarray
    Q: np.ndarray
    U: np.ndarray
    residuals: dict = field(default_factory=dict)
    status: str = OK

    @property
    def dim(self) -> int:
        return self.F.shape[0]

    def tolerance(self) -> float:
        return 1e-8 * (1.0 + np.linalg.norm(self.F))

    def to_dict(self) -> dict:
        return {"status": self.status,
                "F": self.F.tolist(), "D": self.D.tolist(), "G": self.G.tolist(),
                "Q": self.Q.tolist(), "U": self.U.tolist(),
                "residuals": {k: float(v) for k, v in self.residuals.items()}}


def _square(a, name) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def antisymmetric_basis(d: int) -> np.ndarray:
    """``E_ab = e_a e_b^T - e_b e_a^T`` for ``a < b``, shape ``(d(d-1)/2, d, d)``."""
    pairs = [(a, b) for a in range(d) for b in range(a + 1, d)]
    E = np.zeros((len(pairs), d, d))
    for k, (a, b) in enumerate(pairs):
        E[k, a, b] = 1.0
        E[k, b, a] = -1.0
    return E


def solve_antisymmetric_sylvester(F, C):
    """Least-squares antisymmetric ``Q`` with ``F Q + Q F^T = C``.

    Returns ``(Q, unique)``. ``unique`` is False when the operator restricted
    to antisymmetric matrices is singular; ``Q`` is then the minimum-norm
    least-squares solution.
    """
    F = _square(F, "F")
    d = F.shape[0]
    if d == 1:
        return np.zeros((1, 1)), True
    E = antisymmetric_basis(d)
    A = (F @ E + E @ F.T).reshape(len(E), -1).T
    coef, _, rank, sv = np.linalg.lstsq(A, np.asarray(C, float).ravel(), rcond=SINGULAR_RTOL)
    unique = rank == len(E) and sv[-1] > SINGULAR_RTOL * max(sv[0], 1.0)
    Q = np.tensordot(coef, E, axes=1)
    return 0.5 * (Q - Q.T), bool(unique)


def decompose_linear(F, D) -> LinearDecomposition:
    """Split the linear drift matrix ``F`` as ``(D + Q) U``.

    Status is ``"non-unique"`` when the Sylvester operator is singular and
    ``"irreducible"`` when ``G = D + Q`` cannot be inverted (``U`` is then the
    least-squares solution of ``G U = F``).
    """
    F = _square(F, "F")
    D = _square(D, "D")
    if D.shape != F.shape:
        raise ValueError("F and D must have the same shape")
    D = 0.5 * (D + D.T)
    w = np.linalg.eigvalsh(D)
    if w[0] < -1e-10 * max(1.0, w[-1]):
        raise ValueError("D must be positive semi-definite")
    Q, unique = solve_antisymmetric_sylvester(F, F @ D - D @ F.T)
    G = D + Q
    status = OK if unique else NON_UNIQUE
    sv = np.linalg.svd(G, compute_uv=False)
    if sv[-1] <= SINGULAR_RTOL * max(sv[0], 1.0):
        status = IRREDUCIBLE
        U_raw = np.linalg.lstsq(G, F, rcond=None)[0]
    else:
        U_raw = np.linalg.solve(G, F)
    U = 0.5 * (U_raw + U_raw.T)
    residuals = {
        "sylvester": np.linalg.norm(F @ Q + Q @ F.T - (F @ D - D @ F.T)),
        "symmetry_U": np.linalg.norm(U_raw - U_raw.T),
        "recomposition": np.linalg.norm(F - G @ U),
        "constraint": np.linalg.norm(G @ F.T - F @ G.T),
    }
    return LinearDecomposition(F, D, G, Q, U, residuals, status)


def is_hurwitz(F) -> bool:
    """True when every eigenvalue of ``F`` has positive real part (stable ``-F x``)."""
    return bool(np.all(np.linalg.eigvals(_square(F, "F")).real > 0))


def ou_stationary_covariance(F, D, beta_inv: float) -> np.ndarray:
    """Solve ``F S + S F^T = 2 beta_inv D`` for the stationary covariance."""
    F = _square(F, "F")
    D = _square(D, "D")
    if not is_hurwitz(F):
        raise NumericalError("F is not Hurwitz: no stationary covariance")
    S = scipy.linalg.solve_continuous_lyapunov(F, 2.0 * beta_inv * D)
    return 0.5 * (S + S.T)


def linear_force_field(dec: LinearDecomposition, x):
    """``(j, grad f, grad Phi)`` at points ``x`` of shape ``(..., d)``.

    ``grad Phi = U x``, ``grad f = F x`` and ``j = -Q U x``.
    """
    x = np.asarray(x, dtype=np.float64)
    grad_phi = x @ dec.U.T
    grad_f = x @ dec.F.T
    j = -grad_phi @ dec.Q.T
    return j, grad_f, grad_phi


def potential_line_integral(G_field, drift, path, steps: int = 64) -> float:
    """Composite-midpoint value of ``int G^{-1} grad f . dGamma`` along a polyline.

    ``G_field`` is a constant matrix or a callable ``x -> G(x)``; ``drift``
    maps ``x -> grad f(x)``; ``path`` holds the polyline vertices ``(m, d)``.
    """
    path = np.atleast_2d(np.asarray(path, dtype=np.float64))
    if path.shape[0] < 2:
        raise ValueError("path needs at least two vertices")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    const_G = None if callable(G_field) else _square(G_field, "G")
    total = 0.0
    s = (np.arange(steps) + 0.5) / steps
    for a, b in zip(path[:-1], path[1:]):
        seg = b - a
        for p in a + s[:, None] * seg:
            G = const_G if const_G is not None else np.asarray(G_field(p), float)
            try:
                v = np.linalg.solve(G, np.asarray(drift(p), float))
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"G is singular on the path at {p}") from exc
            total += float(v @ seg) / steps
    return total


def matrix_divergence(M: np.ndarray, spacing) -> np.ndarray:
    """Row divergence ``sum_j d_j M_ij`` of a field ``(nx, ny, 2, 2)`` by central differences."""
    out = np.zeros(M.shape[:-1])
    for j, h in enumerate(spacing):
        out += np.gradient(M[..., :, j], h, axis=j, edge_order=2)
    return out


def atype_residual(phi, D, Q, beta_inv: float, grad_f, grid) -> np.ndarray:
    """Pointwise ``|grad f - (D+Q) grad Phi + beta_inv div(D+Q)|`` on a 2-D grid.

    ``phi`` has shape ``(nx, ny)``; ``D`` and ``Q`` are constant ``2x2``
    matrices or fields ``(nx, ny, 2, 2)``; ``grad_f`` has shape ``(nx, ny, 2)``.
    ``grid`` supplies the spacings ``dx`` and ``dy``.
    """
    phi = np.asarray(phi, dtype=np.float64)
    shape = phi.shape
    h = (grid.dx, grid.dy)

    def as_field(M):
        M = np.asarray(M, dtype=np.float64)
        return np.broadcast_to(M, shape + (2, 2)) if M.shape == (2, 2) else M

    G = as_field(D) + as_field(Q)
    if G.shape != shape + (2, 2):
        raise ValueError("D and Q must be 2x2 or match the grid")
    grad_phi = np.stack(np.gradient(phi, *h, edge_order=2), axis=-1)
    div = matrix_divergence(G, h)
    r = np.asarray(grad_f, float) - np.einsum("...ij,...j->...i", G, grad_phi) + beta_inv * div
    return np.linalg.norm(r, axis=-1)
