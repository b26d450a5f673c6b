"""The planar double-well experiment for a list of rotation strengths ``lam``.

For each ``lam`` the runner samples the gradient field on the grid, solves for
the Fokker-Planck steady state, locates its modes and the critical points of
``f``, and measures rotation about the saddle at the origin from a long SDE
path. ``beta = 1`` throughout.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.ndimage as ndi
import scipy.optimize

from . import io
from .diagnostics import CycleReport, detect_limit_cycle
from .fokker_planck import (FokkerPlanck, GridSpec, SteadyState, gibbs_density, l1_distance,
                            steady_state)
from .models import double_well_field, double_well_potential
from .sde import SdeConfig, double_well_sde

FIELD_HEADER = ["x", "y", "fx", "fy", "grad_norm", "phi", "rho_ss"]


@dataclass
class ExperimentConfig:
    lams: tuple = (0.0, 0.5, 1.5)
    grid: GridSpec = field(default_factory=GridSpec)
    beta_inv: float = 1.0
    dt: float = 1e-4
    cycle_steps: int = 10_000_000
    record_every: int = 1000
    seed: int = 0
    x0: tuple = (1.0, 0.0)
    fp_tol: float = 1e-9
    out_dir: str | None = None

    def __post_init__(self):
        self.lams = tuple(float(v) for v in self.lams)
        if not self.lams:
            raise ValueError("lam list must be nonempty")
        if any(v < 0 for v in self.lams):
            raise ValueError("lam values must be >= 0")
        if isinstance(self.grid, dict):
            self.grid = GridSpec(**self.grid)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["grid"] = self.grid.to_dict()
        return out


@dataclass
class ModeReport:
    modes: list
    critical_points_of_f: list

    def to_dict(self) -> dict:
        return {"modes": [list(map(float, m)) for m in self.modes],
                "critical_points_of_f": [list(map(float, c)) for c in self.critical_points_of_f]}


@dataclass(eq=False)
class DoubleWellBundle:
    lam: float
    grid: GridSpec
    field: np.ndarray
    steady: SteadyState
    modes: ModeReport
    cycle: CycleReport | None
    files: list = field(default_factory=list)

    @property
    def rho(self) -> np.ndarray:
        return self.steady.density.rho

    def summary(self) -> dict:
        return {"lam": self.lam, "fp_converged": self.steady.converged,
                "fp_rate": self.steady.rate, "fp_status": self.steady.status,
                **self.modes.to_dict(),
                "cycle": None if self.cycle is None else self.cycle.to_dict()}


def gradient_field(lam: float, grid: GridSpec, rho=None) -> np.ndarray:
    """Columns ``(x, y, fx, fy, |grad f|, Phi, rho_ss)`` for every cell centre."""
    pts = grid.centers()
    phi, _, _, g = double_well_field(lam, pts)
    rho = np.full(phi.shape, np.nan) if rho is None else rho
    cols = [pts[..., 0], pts[..., 1], g[..., 0], g[..., 1], np.hypot(g[..., 0], g[..., 1]), phi, rho]
    return np.column_stack([c.ravel() for c in cols])


def _plateau_extrema(values: np.ndarray, tie_rtol: float, sign: float = 1.0):
    """Connected groups of 8-neighbour maxima of ``sign * values``.

    Ties within ``tie_rtol * max|values|`` are merged, so a peak straddling two
    cells is one group. Returns a list of index arrays, interior groups only.
    """
    v = sign * np.asarray(values, dtype=np.float64)
    tol = tie_rtol * np.abs(v).max()
    footprint = np.ones((3, 3), bool)
    neigh_max = ndi.maximum_filter(v, footprint=footprint, mode="constant", cval=-np.inf)
    candidate = v >= neigh_max - tol
    labels, n = ndi.label(candidate, structure=footprint)
    groups = []
    for k in range(1, n + 1):
        mask = labels == k
        if mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any():
            continue
        ring = ndi.binary_dilation(mask, structure=footprint) & ~mask
        groups.append((np.argwhere(mask), v[mask].max(), v[ring].max()))
    return groups


def find_modes(rho: np.ndarray, grid: GridSpec, min_excess: float = 1e-12,
               min_fraction: float = 0.1, tie_rtol: float = 1e-9) -> list:
    """Local maxima of ``rho`` over the 8-neighbourhood, as centroids of tied cells.

    A mode must exceed its surrounding ring by ``min_excess`` and reach
    ``min_fraction`` of the global maximum.
    """
    gmax = float(rho.max())
    xc, yc = grid.xc, grid.yc
    modes = []
    for cells, peak, ring in _plateau_extrema(rho, tie_rtol):
        if peak - ring < min_excess or peak < min_fraction * gmax:
            continue
        modes.append((float(xc[cells[:, 0]].mean()), float(yc[cells[:, 1]].mean())))
    return sorted(modes)


def critical_points(lam: float, grid: GridSpec, threshold: float = 0.25,
                    tol: float = 1e-10) -> list:
    """Zeros of ``grad f``: grid minima of ``|grad f|`` below ``threshold``, polished by root finding."""
    pts = grid.centers()
    norm = np.linalg.norm(double_well_field(lam, pts)[3], axis=-1)
    found = []
    for cells, peak, _ in _plateau_extrema(norm, 1e-12, sign=-1.0):
        if -peak > threshold:
            continue
        start = pts[tuple(cells[0])]
        sol = scipy.optimize.root(lambda p: double_well_field(lam, p)[3], start, tol=1e-14)
        if not sol.success or np.linalg.norm(double_well_field(lam, sol.x)[3]) > tol:
            continue
        if all(np.linalg.norm(sol.x - q) > 1e-6 for q in found):
            found.append(sol.x)
    return sorted((float(p[0]), float(p[1])) for p in found)


def fp_operator(lam: float, grid: GridSpec, beta_inv: float = 1.0) -> FokkerPlanck:
    return FokkerPlanck(grid, lambda p: double_well_field(lam, p)[3], np.eye(2), beta_inv)


def winding_run(lam: float, cfg: ExperimentConfig) -> CycleReport:
    sde = SdeConfig(beta_inv=cfg.beta_inv, dt=cfg.dt, steps=cfg.cycle_steps,
                    noise_mode="double_well", record_every=cfg.record_every, seed=cfg.seed,
                    winding_center=(0.0, 0.0))
    traj = double_well_sde(lam, sde, cfg.x0)
    return detect_limit_cycle(traj, center=(0.0, 0.0))


def run_double_well(cfg: ExperimentConfig, with_cycles: bool = True, workers: int = 1) -> dict:
    """Per-``lam`` bundles keyed by ``lam``; writes files when ``cfg.out_dir`` is set.

    The long winding runs are independent and use up to ``workers`` threads;
    results do not depend on the worker count.
    """
    run_cycles = with_cycles and cfg.cycle_steps >= 1000 * cfg.record_every
    cycles = {}
    if run_cycles:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            cycles = dict(zip(cfg.lams, pool.map(lambda lam: winding_run(lam, cfg), cfg.lams)))
    bundles = {}
    for lam in cfg.lams:
        op = fp_operator(lam, cfg.grid, cfg.beta_inv)
        ss = steady_state(op, tol=cfg.fp_tol)
        rho = ss.density.rho
        report = ModeReport(find_modes(rho, cfg.grid), critical_points(lam, cfg.grid))
        bundle = DoubleWellBundle(lam, cfg.grid, gradient_field(lam, cfg.grid, rho), ss, report,
                                  cycles.get(lam))
        if cfg.out_dir is not None:
            bundle.files = write_bundle(bundle, cfg.out_dir)
        bundles[lam] = bundle
    return bundles


def write_bundle(bundle: DoubleWellBundle, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tag = f"lam{bundle.lam:g}"
    files = [io.write_table(out / f"field_{tag}.csv", FIELD_HEADER, bundle.field.T),
             io.write_grid(out / f"rho_ss_{tag}.csv", bundle.rho, bundle.grid),
             io.write_json(out / f"summary_{tag}.json", bundle.summary())]
    files.append(out / f"rho_ss_{tag}.json")
    return files


def mode_invariance_check(bundles: dict, reference: float = 0.0) -> dict:
    """L1 distance of every steady state to the ``lam = reference`` one, and to ``exp(-Phi)``."""
    if len(bundles) < 2 or reference not in bundles:
        raise ValueError("need at least two lam values including the reference")
    ref = bundles[reference]
    grid = ref.grid
    gibbs = gibbs_density(double_well_potential, grid)
    out = {}
    for lam, b in bundles.items():
        out[lam] = {"l1_to_reference": l1_distance(b.rho, ref.rho, grid),
                    "l1_to_gibbs": l1_distance(b.rho, gibbs, grid),
                    "modes": b.modes.modes}
    return out
