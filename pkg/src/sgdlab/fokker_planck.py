"""Finite-volume Fokker-Planck solver on a 2-D rectangle.

Solves ``rho_t = div(grad_f * rho + beta_inv * div(D rho))`` written in flux form
``rho_t + div J = 0`` with ``J = -(grad_f * rho + beta_inv * div(D rho))`` and
zero flux through the outer boundary, so no mass leaves the box.

The spatial discretization is assembled once into a sparse generator ``L``
(``d rho/dt = L rho``) together with the face-flux operators. Face fluxes
combine:

* advection by ``u = -grad f`` evaluated at face midpoints,
* the normal diffusion term ``d_x(D_xx rho)`` from cell-centre values of ``D``,
* the cross term ``d_y(D_xy rho)`` by centred differences averaged onto the face.

Two face schemes are available for the first two terms. ``"upwind"`` is the
plain first-order donor-cell flux plus a centred diffusive flux.
``"exponential"`` (Scharfetter-Gummel) blends the two through the cell Peclet
number: it reduces to the centred scheme when diffusion dominates and to
donor-cell upwinding when advection dominates, and for a gradient drift with
isotropic ``D`` its discrete steady state is exactly the sampled Gibbs density
up to O(h^2) quadrature of the potential difference. It is the default.

Densities are arrays of shape ``(nx, ny)`` indexed ``[i, j] <-> (x_i, y_j)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, NumericalError

SCHEMES = ("exponential", "upwind")


@dataclass(frozen=True)
class GridSpec:
    nx: int = 128
    ny: int = 128
    x_min: float = -2.5
    x_max: float = 2.5
    y_min: float = -2.5
    y_max: float = 2.5

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError("grid needs at least 3 cells per axis")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("empty domain")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def xc(self) -> np.ndarray:
        return self.x_min + (np.arange(self.nx) + 0.5) * self.dx

    @property
    def yc(self) -> np.ndarray:
        return self.y_min + (np.arange(self.ny) + 0.5) * self.dy

    def centers(self) -> np.ndarray:
        """Cell centres as an ``(nx, ny, 2)`` array."""
        X, Y = np.meshgrid(self.xc, self.yc, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def x_faces(self) -> np.ndarray:
        """Midpoints of interior faces normal to x, shape ``(nx-1, ny, 2)``."""
        xf = self.x_min + np.arange(1, self.nx) * self.dx
        X, Y = np.meshgrid(xf, self.yc, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def y_faces(self) -> np.ndarray:
        yf = self.y_min + np.arange(1, self.ny) * self.dy
        X, Y = np.meshgrid(self.xc, yf, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def normalize(self, rho) -> np.ndarray:
        rho = np.asarray(rho, dtype=np.float64)
        return rho / (rho.sum() * self.cell_area)

    def cell_index(self, point) -> tuple[int, int]:
        i = int(np.clip((point[0] - self.x_min) // self.dx, 0, self.nx - 1))
        j = int(np.clip((point[1] - self.y_min) // self.dy, 0, self.ny - 1))
        return i, j

    def to_dict(self) -> dict:
        return {"nx": self.nx, "ny": self.ny,
                "domain": [[self.x_min, self.x_max], [self.y_min, self.y_max]]}


@dataclass(eq=False)
class DensityGrid:
    grid: GridSpec
    rho: np.ndarray
    t: float = 0.0
    step: int = 0
    clamped: int = 0

    @property
    def mass(self) -> float:
        return float(self.rho.sum() * self.grid.cell_area)

    def copy(self) -> "DensityGrid":
        return DensityGrid(self.grid, self.rho.copy(), self.t, self.step, self.clamped)


@dataclass(eq=False)
class CurrentField:
    """Probability flux on interior faces plus its cell-centred average."""

    jx_faces: np.ndarray
    jy_faces: np.ndarray
    cell: np.ndarray

    def divergence(self, grid: GridSpec) -> np.ndarray:
        jx = np.zeros((grid.nx + 1, grid.ny))
        jy = np.zeros((grid.nx, grid.ny + 1))
        jx[1:-1] = self.jx_faces
        jy[:, 1:-1] = self.jy_faces
        return (jx[1:] - jx[:-1]) / grid.dx + (jy[:, 1:] - jy[:, :-1]) / grid.dy


@dataclass(frozen=True)
class FreeEnergyReport:
    energetic: float
    entropy: float
    free_energy: float
    kl_to_ss: float


@dataclass(eq=False)
class SteadyState:
    density: DensityGrid
    converged: bool
    rate: float
    status: str
    steps: int = 0


def _bernoulli(z):
    """``B(z) = z / (exp(z) - 1)`` with the removable singularity at 0."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    small = np.abs(z) < 1e-8
    zs = z[~small]
    out[~small] = zs / np.expm1(zs)
    out[small] = 1.0 - 0.5 * z[small]
    return out


def _diffusion_at(diffusion, points) -> np.ndarray:
    if callable(diffusion):
        D = np.asarray(diffusion(points), dtype=np.float64)
    else:
        D = np.broadcast_to(np.asarray(diffusion, dtype=np.float64),
                            points.shape[:-1] + (2, 2))
    if D.shape != points.shape[:-1] + (2, 2):
        raise ValueError(f"diffusion field has shape {D.shape}")
    return D


def _drift_at(drift, points) -> np.ndarray:
    if drift is None:
        return np.zeros(points.shape)
    g = np.asarray(drift(points), dtype=np.float64)
    if g.shape != points.shape:
        raise ValueError(f"drift field has shape {g.shape}, expected {points.shape}")
    if not np.all(np.isfinite(g)):
        raise NumericalError("drift is not finite on the grid")
    return g


class FokkerPlanck:
    """Assembled finite-volume operator for one (drift, D, beta_inv, grid).

    ``drift`` maps points ``(..., 2)`` to ``grad f`` (the SDE drift is its
    negative); ``None`` means no drift. ``diffusion`` is a constant ``2x2``
    matrix or a callable returning ``(..., 2, 2)``.
    """

    def __init__(self, grid: GridSpec, drift, diffusion, beta_inv: float,
                 scheme: str = "exponential"):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
        if beta_inv < 0:
            raise ValueError("beta_inv must be >= 0")
        self.grid = grid
        self.beta_inv = float(beta_inv)
        self.scheme = scheme
        self.drift = drift
        self.diffusion = diffusion
        self.D_cells = _diffusion_at(diffusion, grid.centers())
        self.grad_f_xfaces = _drift_at(drift, grid.x_faces())
        self.grad_f_yfaces = _drift_at(drift, grid.y_faces())
        self.flux_x, self.flux_y = self._assemble_fluxes()
        self.generator = self._assemble_generator().tocsr()

    # -- assembly -----------------------------------------------------------

    def _normal_flux(self, u, a_left, a_right, h):
        """Coefficients ``(cL, cR)`` of ``J = cL*rho_L + cR*rho_R`` on one axis.

        ``u`` is the advective velocity at the face, ``a_*`` the values of
        ``beta_inv * D_nn`` in the two cells.
        """
        if self.scheme == "upwind":
            cL = np.maximum(u, 0.0) + a_left / h
            cR = np.minimum(u, 0.0) - a_right / h
            return cL, cR
        # d_n(a rho) = a_face d_n rho + rho d_n a: fold the second part into u
        a_face = 0.5 * (a_left + a_right)
        u_eff = u - (a_right - a_left) / h
        cL = np.where(u_eff > 0, u_eff, 0.0)
        cR = np.where(u_eff < 0, u_eff, 0.0)
        pos = a_face > 1e-300
        pe = np.zeros_like(u_eff)
        pe[pos] = u_eff[pos] * h / a_face[pos]
        bl, br = _bernoulli(-pe), _bernoulli(pe)
        cL = np.where(pos, a_face / h * bl, cL)
        cR = np.where(pos, -a_face / h * br, cR)
        return cL, cR

    def _assemble_fluxes(self):
        g = self.grid
        nx, ny = g.nx, g.ny
        bi = self.beta_inv
        D = self.D_cells
        cell = np.arange(nx * ny).reshape(nx, ny)

        def cross_terms(axis):
            # centred d_t(D_nt rho) along the tangential axis, averaged to faces
            n_t = ny if axis == 0 else nx
            h_t = g.dy if axis == 0 else g.dx
            k = np.arange(n_t)
            kp = np.minimum(k + 1, n_t - 1)
            km = np.maximum(k - 1, 0)
            span = (kp - km) * h_t
            return kp, km, span

        rows, cols, vals = [], [], []
        # x faces: between (i, j) and (i+1, j)
        u = -self.grad_f_xfaces[..., 0]
        aL = bi * D[:-1, :, 0, 0]
        aR = bi * D[1:, :, 0, 0]
        cL, cR = self._normal_flux(u, aL, aR, g.dx)
        face = np.arange((nx - 1) * ny).reshape(nx - 1, ny)
        rows += [face.ravel(), face.ravel()]
        cols += [cell[:-1].ravel(), cell[1:].ravel()]
        vals += [cL.ravel(), cR.ravel()]
        Dxy = D[..., 0, 1]
        if np.any(Dxy != 0):
            jp, jm, span = cross_terms(0)
            for side in (slice(None, -1), slice(1, None)):
                ii = np.arange(nx)[side]
                rows += [face.ravel(), face.ravel()]
                cols += [cell[ii][:, jp].ravel(), cell[ii][:, jm].ravel()]
                # coefficient multiplies rho at (i, j+1) minus rho at (i, j-1),
                # with D_xy taken at those same cells
                vals += [(-0.5 * bi * Dxy[ii][:, jp] / span[None, :]).ravel(),
                         (0.5 * bi * Dxy[ii][:, jm] / span[None, :]).ravel()]
        flux_x = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                               shape=((nx - 1) * ny, nx * ny))

        rows, cols, vals = [], [], []
        u = -self.grad_f_yfaces[..., 1]
        aL = bi * D[:, :-1, 1, 1]
        aR = bi * D[:, 1:, 1, 1]
        cL, cR = self._normal_flux(u, aL, aR, g.dy)
        face = np.arange(nx * (ny - 1)).reshape(nx, ny - 1)
        rows += [face.ravel(), face.ravel()]
        cols += [cell[:, :-1].ravel(), cell[:, 1:].ravel()]
        vals += [cL.ravel(), cR.ravel()]
        Dyx = D[..., 1, 0]
        if np.any(Dyx != 0):
            ip, im, span = cross_terms(1)
            for side in (slice(None, -1), slice(1, None)):
                jj = np.arange(ny)[side]
                rows += [face.ravel(), face.ravel()]
                cols += [cell[ip][:, jj].ravel(), cell[im][:, jj].ravel()]
                vals += [(-0.5 * bi * Dyx[ip][:, jj] / span[:, None]).ravel(),
                         (0.5 * bi * Dyx[im][:, jj] / span[:, None]).ravel()]
        flux_y = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(nx * (ny - 1), nx * ny))
        return flux_x, flux_y

    def _assemble_generator(self):
        g = self.grid
        nx, ny = g.nx, g.ny
        cell = np.arange(nx * ny).reshape(nx, ny)
        fx = np.arange((nx - 1) * ny).reshape(nx - 1, ny)
        fy = np.arange(nx * (ny - 1)).reshape(nx, ny - 1)
        # flux through face leaves the left cell and enters the right cell
        div_x = sp.csr_matrix(
            (np.concatenate([np.full(fx.size, -1.0 / g.dx), np.full(fx.size, 1.0 / g.dx)]),
             (np.concatenate([cell[:-1].ravel(), cell[1:].ravel()]),
              np.concatenate([fx.ravel(), fx.ravel()]))),
            shape=(nx * ny, fx.size))
        div_y = sp.csr_matrix(
            (np.concatenate([np.full(fy.size, -1.0 / g.dy), np.full(fy.size, 1.0 / g.dy)]),
             (np.concatenate([cell[:, :-1].ravel(), cell[:, 1:].ravel()]),
              np.concatenate([fy.ravel(), fy.ravel()]))),
            shape=(nx * ny, fy.size))
        return div_x @ self.flux_x + div_y @ self.flux_y

    # -- stability ------------------------------------------------------------

    def max_stable_dt(self) -> float:
        """Largest explicit step keeping the update matrix's diagonal non-negative."""
        diag = -self.generator.diagonal()
        m = float(diag.max())
        return np.inf if m <= 0 else 1.0 / m

    def cfl_limits(self) -> dict:
        g = self.grid
        lam_max = float(np.linalg.eigvalsh(0.5 * (self.D_cells + np.swapaxes(self.D_cells, -1, -2)))[..., -1].max())
        speed = max(float(np.abs(self.grad_f_xfaces).max(initial=0.0)),
                    float(np.abs(self.grad_f_yfaces).max(initial=0.0)))
        diffusive = (np.inf if self.beta_inv * lam_max <= 0
                     else 0.5 * min(g.dx, g.dy) ** 2 / (self.beta_inv * lam_max))
        advective = np.inf if speed <= 0 else 0.5 * min(g.dx, g.dy) / speed
        return {"diffusive": diffusive, "advective": advective, "positivity": self.max_stable_dt()}

    def default_dt(self, safety: float = 0.9) -> float:
        return safety * min(self.cfl_limits().values())

    def check_dt(self, dt: float) -> None:
        if dt < 0:
            raise ValueError("dt must be >= 0")
        limits = self.cfl_limits()
        bad = {k: v for k, v in limits.items() if dt > v}
        if bad:
            raise NumericalError(f"time step {dt:.3e} violates CFL limits {bad}")

    # -- evolution ------------------------------------------------------------

    def rhs(self, rho: np.ndarray) -> np.ndarray:
        return (self.generator @ rho.ravel()).reshape(rho.shape)

    def step(self, density: DensityGrid, dt: float, n: int = 1, check: bool = True) -> DensityGrid:
        """Advance ``n`` explicit Euler steps of size ``dt``."""
        if check:
            self.check_dt(dt)
        out = density.copy()
        if dt == 0:
            return out
        L = self.generator
        r = out.rho.ravel().copy()
        for _ in range(n):
            r = r + dt * (L @ r)
        neg = r < -1e-12
        if np.any(neg):
            out.clamped += int(neg.sum())
        np.maximum(r, 0.0, out=r, where=r < 0)
        out.rho = r.reshape(out.rho.shape)
        out.t += n * dt
        out.step += n
        return out

    def current(self, rho: np.ndarray) -> CurrentField:
        g = self.grid
        r = np.asarray(rho, dtype=np.float64).ravel()
        jx = (self.flux_x @ r).reshape(g.nx - 1, g.ny)
        jy = (self.flux_y @ r).reshape(g.nx, g.ny - 1)
        pad_x = np.zeros((g.nx + 1, g.ny))
        pad_y = np.zeros((g.nx, g.ny + 1))
        pad_x[1:-1] = jx
        pad_y[:, 1:-1] = jy
        cell = np.stack([0.5 * (pad_x[1:] + pad_x[:-1]), 0.5 * (pad_y[:, 1:] + pad_y[:, :-1])], axis=-1)
        return CurrentField(jx_faces=jx, jy_faces=jy, cell=cell)

    def stationary(self) -> np.ndarray:
        """Normalized null vector of the generator via a sparse direct solve."""
        g = self.grid
        n = g.nx * g.ny
        L = self.generator.tolil(copy=True)
        # the generator has rank n-1; swap one balance equation for normalization
        k = n // 2 + g.ny // 2
        L[k, :] = np.full(n, g.cell_area)
        rhs = np.zeros(n)
        rhs[k] = 1.0
        rho = spla.spsolve(L.tocsc(), rhs)
        if not np.all(np.isfinite(rho)):
            raise NumericalError("steady-state solve failed (singular generator)")
        return rho.reshape(g.nx, g.ny)


# ---------------------------------------------------------------------------
# functional interface


def fp_step(density: DensityGrid, drift, diffusion, beta_inv: float, dt: float,
            scheme: str = "exponential") -> DensityGrid:
    """One explicit step; builds the operator each call (use :class:`FokkerPlanck` in loops)."""
    op = FokkerPlanck(density.grid, drift, diffusion, beta_inv, scheme=scheme)
    return op.step(density, dt)


def l1_distance(a: np.ndarray, b: np.ndarray, grid: GridSpec) -> float:
    return float(np.abs(a - b).sum() * grid.cell_area)


def steady_state(op: FokkerPlanck, tol: float = 1e-9, method: str = "direct",
                 rho0: np.ndarray | None = None, dt: float | None = None,
                 max_steps: int = 2_000_000, check_every: int = 200,
                 raise_on_failure: bool = False) -> SteadyState:
    """Stationary density of ``op``.

    Convergence is measured as the L1 rate ``||rho_{t+dt} - rho_t||_1 / dt``,
    which for one explicit step equals ``||L rho||_1``. ``method="direct"``
    solves ``L rho = 0`` with a sparse LU and then reports that rate;
    ``method="evolve"`` time-steps from ``rho0`` (uniform by default) until the
    rate drops below ``tol``.
    """
    g = op.grid
    if tol <= 0:
        raise ValueError("tol must be > 0")
    if method == "direct":
        rho = op.stationary()
        neg = int(np.count_nonzero(rho < -1e-12 * np.abs(rho).max()))
        rho = g.normalize(np.maximum(rho, 0.0))
        rate = float(np.abs(op.rhs(rho)).sum() * g.cell_area)
        ok = rate < tol
        res = SteadyState(DensityGrid(g, rho, clamped=neg), ok, rate,
                          "converged" if ok else "not_converged")
    elif method == "evolve":
        dt = op.default_dt() if dt is None else dt
        op.check_dt(dt)
        rho = g.normalize(np.ones((g.nx, g.ny)) if rho0 is None else rho0)
        dens = DensityGrid(g, rho)
        rate, steps = np.inf, 0
        while steps < max_steps:
            nxt = op.step(dens, dt, n=check_every, check=False)
            steps += check_every
            rate = l1_distance(nxt.rho, dens.rho, g) / (check_every * dt)
            dens = nxt
            if rate < tol:
                break
        ok = rate < tol
        res = SteadyState(dens, ok, rate, "converged" if ok else "not_converged", steps)
    else:
        raise ValueError(f"unknown method {method!r}")
    if raise_on_failure and not res.converged:
        raise ConvergenceError(f"steady state not reached: rate {res.rate:.3e} >= {tol:.3e}")
    return res


def gibbs_density(potential, grid: GridSpec, beta: float = 1.0) -> np.ndarray:
    """``exp(-beta * potential) / Z`` sampled at cell centres (quadrature oracle)."""
    phi = np.asarray(potential(grid.centers()), dtype=np.float64)
    w = np.exp(-beta * (phi - phi.min()))
    return grid.normalize(w)


def potential_from_density(rho: np.ndarray, beta_inv: float, floor: float = 0.0):
    """``Phi = -beta_inv * log(rho)`` shifted to ``min Phi = 0``.

    Cells with ``rho <= floor`` are masked with NaN; returns ``(Phi, n_masked)``.
    """
    rho = np.asarray(rho, dtype=np.float64)
    mask = rho > floor
    phi = np.full(rho.shape, np.nan)
    phi[mask] = -beta_inv * np.log(rho[mask])
    if mask.any():
        phi -= np.nanmin(phi)
    return phi, int((~mask).sum())


def current_and_force(op: FokkerPlanck, rho: np.ndarray, rel_floor: float = 1e-12):
    """Probability current and the force ``j = J / rho`` at cell centres.

    Cells with ``rho < rel_floor * max(rho)`` get NaN force.
    """
    cur = op.current(rho)
    rho = np.asarray(rho, dtype=np.float64)
    mask = rho >= rel_floor * rho.max()
    force = np.full(cur.cell.shape, np.nan)
    force[mask] = cur.cell[mask] / rho[mask][:, None]
    return cur, force


def free_energy(rho: np.ndarray, potential: np.ndarray, beta_inv: float,
                rho_ss: np.ndarray, grid: GridSpec) -> FreeEnergyReport:
    """Energetic/entropic split and ``KL(rho || rho_ss)``, natural logarithms, ``0 log 0 = 0``."""
    dA = grid.cell_area
    rho = np.asarray(rho, dtype=np.float64)
    pos = rho > 0
    energetic = float((rho * potential).sum() * dA)
    entropy = float(-(rho[pos] * np.log(rho[pos])).sum() * dA)
    if np.any(pos & ~(rho_ss > 0)):
        kl = np.inf
    else:
        kl = float((rho[pos] * np.log(rho[pos] / rho_ss[pos])).sum() * dA)
    return FreeEnergyReport(energetic=energetic, entropy=entropy,
                            free_energy=energetic - beta_inv * entropy, kl_to_ss=kl)


def entropy_production_rate(rho: np.ndarray, potential: np.ndarray, diffusion,
                            beta_inv: float, grid: GridSpec) -> float:
    """``int rho * D : grad(mu) grad(mu)^T`` with ``mu = Phi + beta_inv (log rho + 1)``.

    Gradients use centred differences; cells with ``rho <= 0`` contribute nothing.
    """
    rho = np.asarray(rho, dtype=np.float64)
    pos = rho > 0
    logr = np.where(pos, np.log(np.where(pos, rho, 1.0)), 0.0)
    mu = potential + beta_inv * (logr + 1.0)
    gx, gy = np.gradient(mu, grid.dx, grid.dy)
    grad = np.stack([gx, gy], axis=-1)
    D = _diffusion_at(diffusion, grid.centers())
    quad = np.einsum("...i,...ij,...j->...", grad, D, grad)
    return float((np.where(pos, rho * quad, 0.0)).sum() * grid.cell_area)
