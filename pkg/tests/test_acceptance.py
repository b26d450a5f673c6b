"""Acceptance criteria 1-10, each at its stated tolerance.

Every test records a one-line verdict that is printed in the pytest terminal
summary (``pytest tests/test_acceptance.py``), then asserts.
"""
import json
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from sgdlab.cli import main as cli_main
from sgdlab.datasets import make_tiny_mlp
from sgdlab.decomposition import (decompose_linear, ou_stationary_covariance,
                                  potential_line_integral)
from sgdlab.diagnostics import autocorrelation, increment_fft, low_frequency_excess
from sgdlab.diffusion import (WITH_REPLACEMENT, WITHOUT_REPLACEMENT, diffusion_matrix,
                              minibatch_variance_mc, minibatch_variance_prefactor)
from sgdlab.doublewell import ExperimentConfig, mode_invariance_check, run_double_well
from sgdlab.fokker_planck import (DensityGrid, FokkerPlanck, GridSpec, free_energy, gibbs_density,
                                  l1_distance, potential_from_density, steady_state)
from sgdlab.models import QuadraticEnsemble, double_well_field, double_well_potential, sample_losses
from sgdlab.sde import SdeConfig, double_well_sde, sde_run

GRID128 = GridSpec(128, 128)


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    assert ok, detail


def random_hurwitz_instance(rng):
    d = int(rng.integers(2, 9))
    A = rng.standard_normal((d, d))
    F = A + (np.abs(np.linalg.eigvals(A).real).max() + 0.5) * np.eye(d)
    B = rng.standard_normal((d, d))
    return F, B @ B.T / d + 0.1 * np.eye(d)


def test_criterion_01_variance_formulas():
    t0 = time.perf_counter()
    N = 8
    worst = 0.0
    for seed in range(3):
        rng = np.random.default_rng(100 + seed)
        q = QuadraticEnsemble(rng.standard_normal((N, 4)), seed=seed)
        x = rng.standard_normal(4)
        G = q.sample_grads(x, np.arange(N))
        for scheme in (WITH_REPLACEMENT, WITHOUT_REPLACEMENT):
            D = diffusion_matrix(G, scheme).matrix
            for b in (1, 2, N // 2):
                target = minibatch_variance_prefactor(scheme, b, N) * D
                mc = minibatch_variance_mc(q, x, scheme, b, 100_000, seed=seed)
                worst = max(worst, np.linalg.norm(mc - target) / np.linalg.norm(target))
    elapsed = time.perf_counter() - t0
    record(1, worst <= 0.05 and elapsed < 60,
           f"worst relative Frobenius error {worst:.4f} (<= 0.05), {elapsed:.1f}s (< 60s)")


def _monotone_run(op, rho_ss, phi, seed, max_steps=200_000):
    g = op.grid
    dens = DensityGrid(g, g.normalize(np.random.default_rng(seed).random((g.nx, g.ny))))
    dt = op.default_dt()
    prev = free_energy(dens.rho, phi, op.beta_inv, rho_ss, g)
    worst_rise = -np.inf
    for _ in range(max_steps):
        dens = op.step(dens, dt, check=False)
        cur = free_energy(dens.rho, phi, op.beta_inv, rho_ss, g)
        worst_rise = max(worst_rise, cur.free_energy - prev.free_energy)
        prev = cur
        if cur.kl_to_ss < 1e-3:
            break
    return worst_rise, prev.kl_to_ss


def test_criterion_02_free_energy_monotone():
    t0 = time.perf_counter()
    configs = {"isotropic": (lambda p: p * np.array([1.0, 2.0]), 1.0)}
    for lam in (0.0, 0.5, 1.5):
        configs[f"double-well lam={lam}"] = ((lambda lam: lambda p: double_well_field(lam, p)[3])(lam), 1.0)
    worst_rise, worst_kl = -np.inf, 0.0
    for name, (drift, beta_inv) in configs.items():
        op = FokkerPlanck(GRID128, drift, np.eye(2), beta_inv)
        rho_ss = steady_state(op).density.rho
        phi, _ = potential_from_density(rho_ss, beta_inv)
        for seed in range(5):
            rise, kl = _monotone_run(op, rho_ss, phi, seed)
            worst_rise, worst_kl = max(worst_rise, rise), max(worst_kl, kl)
    elapsed = time.perf_counter() - t0
    record(2, worst_rise <= 1e-8 and worst_kl < 1e-3 and elapsed < 600,
           f"largest per-step free-energy increase {worst_rise:.2e} (<= 1e-8), "
           f"final KL {worst_kl:.6e} (< 1e-3), {elapsed:.0f}s (< 600s)")


def test_criterion_03_detailed_balance_directions():
    iso = FokkerPlanck(GRID128, lambda p: double_well_field(0.0, p)[3], np.eye(2), 1.0)
    l1_iso = l1_distance(steady_state(iso).density.rho, gibbs_density(double_well_potential, GRID128),
                         GRID128)
    # gradient drift f = x^T A x / 2 with anisotropic noise that does not commute with A
    A = np.diag([1.0, 3.0])
    D = np.array([[1.5, 0.9], [0.9, 0.7]])
    beta_inv = 0.5
    dec = decompose_linear(A, D)
    aniso = FokkerPlanck(GRID128, lambda p: p @ A.T, D, beta_inv)
    gibbs_f = gibbs_density(lambda p: 0.5 * np.einsum("...i,ij,...j->...", p, A, p), GRID128,
                            beta=1 / beta_inv)
    l1_aniso = l1_distance(steady_state(aniso).density.rho, gibbs_f, GRID128)
    q_norm = np.linalg.norm(dec.Q)
    record(3, l1_iso <= 0.02 and l1_aniso >= 0.05 and q_norm > 0,
           f"isotropic L1 to Gibbs(f) {l1_iso:.2e} (<= 0.02); anisotropic |Q|={q_norm:.3f}, "
           f"L1 to Gibbs(f) {l1_aniso:.3f} (>= 0.05)")


def test_criterion_04_double_well():
    cfg = ExperimentConfig(lams=(0.0, 0.5, 1.5), grid=GRID128, dt=1e-4, cycle_steps=300_000_000,
                           record_every=10_000, seed=0)
    bundles = run_double_well(cfg, with_cycles=False)
    modes = np.array(bundles[0.0].modes.modes)
    mode_ok = modes.shape == (2, 2) and np.abs(np.abs(modes) - [1.0, 0.0]).max() <= GRID128.dx
    inv = mode_invariance_check(bundles)
    l1 = max(v["l1_to_reference"] for v in inv.values())
    rates = {}
    for lam in (1.5, 0.0):
        sde = SdeConfig(beta_inv=1.0, dt=cfg.dt, steps=cfg.cycle_steps, noise_mode="double_well",
                        record_every=cfg.record_every, seed=cfg.seed, winding_center=(0.0, 0.0))
        traj = double_well_sde(lam, sde, cfg.x0)
        rates[lam] = traj.meta["total_angle"] / (2 * np.pi) / cfg.cycle_steps * 1e6
    ok = mode_ok and l1 <= 0.05 and rates[1.5] >= 5 and abs(rates[0.0]) < 1
    record(4, ok, f"lam=0 modes {modes.round(4).tolist()} (cell {GRID128.dx:.4f}); max L1 across lam "
                  f"{l1:.2e} (<= 0.05); turns per 1e6 steps lam=1.5 {rates[1.5]:.2f} (>= 5), "
                  f"lam=0 {rates[0.0]:.2f} (|.| < 1)")


def test_criterion_05_linear_decomposition():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_res, worst_gibbs = 0.0, 0.0
    instances = [random_hurwitz_instance(rng) for _ in range(100)]
    for F, D in instances:
        dec = decompose_linear(F, D)
        scale = 1 + np.linalg.norm(F)
        worst_res = max(worst_res, max(dec.residuals.values()) / scale)
        S = ou_stationary_covariance(F, D, 0.5)
        worst_gibbs = max(worst_gibbs, np.linalg.norm(S - 0.5 * np.linalg.inv(dec.U)) / np.linalg.norm(S))
    worst_mc = 0.0
    for k, (F, D) in enumerate(instances[:5]):
        S = ou_stationary_covariance(F, D, 0.5)
        slowest = np.linalg.eigvals(F).real.min()
        fastest = np.abs(np.linalg.eigvals(F)).max()
        dt = 0.01 / fastest
        steps = int(np.ceil(6.0 / slowest / dt))
        cfg = SdeConfig(beta_inv=0.5, dt=dt, steps=steps, record_every=steps, noise_mode="constant",
                        diffusion=D, seed=k)
        traj = sde_run(lambda x, F=F: x @ F.T, cfg, np.zeros((10_000, F.shape[0])))
        emp = np.cov(traj.snapshots[-1].T)
        worst_mc = max(worst_mc, np.linalg.norm(emp - S) / np.linalg.norm(S))
    elapsed = time.perf_counter() - t0
    ok = worst_res <= 1e-8 and worst_gibbs <= 1e-6 and worst_mc <= 0.05 and elapsed < 300
    record(5, ok, f"worst relative residual {worst_res:.1e} (<= 1e-8); Lyapunov vs beta_inv U^-1 "
                  f"{worst_gibbs:.1e} (<= 1e-6); SDE covariance {worst_mc:.3f} (<= 0.05); "
                  f"{elapsed:.0f}s (< 300s)")


def test_criterion_06_line_integral():
    rng = np.random.default_rng(6)
    worst_exact, worst_path = 0.0, 0.0
    for _ in range(20):
        F, D = random_hurwitz_instance(rng)
        dec = decompose_linear(F, D)
        x = rng.standard_normal(F.shape[0])
        drift = lambda p, F=F: F @ p
        origin = np.zeros_like(x)
        straight = potential_line_integral(dec.G, drift, [origin, x], steps=16)
        bent = potential_line_integral(dec.G, drift, [origin, rng.standard_normal(x.size), x], steps=16)
        worst_exact = max(worst_exact, abs(straight - 0.5 * x @ dec.U @ x))
        worst_path = max(worst_path, abs(bent - straight))
    record(6, worst_exact <= 1e-6 and worst_path <= 1e-6,
           f"max |integral - x^T U x / 2| {worst_exact:.1e}, max path difference {worst_path:.1e} (<= 1e-6)")


def test_criterion_07_diagnostics():
    rng = np.random.default_rng(7)
    white = increment_fft(np.cumsum(rng.standard_normal((4096, 16)), axis=0))
    flat = white.amplitude[1:].max() / np.median(white.amplitude[1:])
    # a single series, so the +-z/sqrt(n) band is the right width for the estimator
    brown_ac = autocorrelation(rng.standard_normal(4096), max_lag=200).fraction_inside()
    # protocol fixed before looking at the outcome: snapshots every 100 steps of dt = 1e-4,
    # 2^15 samples after 1000 burn-in samples, lags up to 200
    cfg = SdeConfig(beta_inv=1.0, dt=1e-4, steps=(2**15 + 1000) * 100, record_every=100, seed=7,
                    noise_mode="double_well")
    traj = double_well_sde(1.5, cfg, (1.0, 0.0))
    excess = low_frequency_excess(traj, burnin=1000, fmax=0.02, seed=7)
    ac = autocorrelation(traj, burnin=1000, max_lag=200)
    long_outside = ac.outside()[100:].mean()
    ok = flat <= 3 and brown_ac >= 0.95 and excess >= 3 and long_outside >= 0.5
    record(7, ok, f"white-noise max/median {flat:.2f} (<= 3); noise ac inside band {brown_ac:.3f} "
                  f"(>= 0.95); lam=1.5 low-band excess {excess:.2f} (>= 3); long-lag ac outside band "
                  f"{long_outside:.2f} (>= 0.5)")


def test_criterion_08_gradient_check():
    m = make_tiny_mlp(seed=8)
    rng = np.random.default_rng(8)
    worst = 0.0
    h = 1e-6
    for _ in range(20):
        x = m.init_weights(int(rng.integers(1 << 30))) + 0.1 * rng.standard_normal(m.dim)
        k = int(rng.integers(m.n_samples))
        an = m.sample_grads(x, np.array([k]))[0]
        fd = np.empty(m.dim)
        for i in range(m.dim):
            e = np.zeros(m.dim)
            e[i] = h
            fd[i] = (sample_losses(m, x + e, [k])[0] - sample_losses(m, x - e, [k])[0]) / (2 * h)
        worst = max(worst, np.linalg.norm(an - fd) / max(np.linalg.norm(fd), 1e-5))
    record(8, worst <= 1e-5, f"worst relative error over 20 probes {worst:.1e} (<= 1e-5)")


def test_criterion_09_rank_bound():
    rng = np.random.default_rng(9)
    violations = 0
    for _ in range(50):
        n, d = int(rng.integers(2, 40)), int(rng.integers(1, 40))
        G = rng.standard_normal((n, d))
        for scheme in (WITH_REPLACEMENT, WITHOUT_REPLACEMENT):
            violations += diffusion_matrix(G, scheme).rank > min(d, n - 1)
    record(9, violations == 0, f"{violations} violations of rank(D) <= min(d, N-1) in 50 instances")


CLI_RUNS = {
    "spectrum": ["train.steps=60", "model.n=64", "model.hidden=6"],
    "simulate": ["sgd.steps=200"],
    "simulate-sde": ["mode=sde", 'drift={"kind":"double_well","lam":1.5}', "sde.steps=4000",
                     "sde.x0=[1,0]", "sde.winding_center=[0,0]"],
    "fpk": ["grid.nx=32", "grid.ny=32", "evolve_steps=50", 'drift={"kind":"double_well","lam":0.5}'],
    "decompose": [],
    "doublewell": ["grid.nx=32", "grid.ny=32", "cycle_steps=1000000", "--threads", "2"],
}


def _snapshot(out):
    files = {}
    for p in sorted(out.rglob("*")):
        if p.is_file():
            if p.name == "manifest.json":
                m = json.loads(p.read_text())
                m.pop("created")
                files[p.name] = json.dumps(m, sort_keys=True).encode()
            else:
                files[str(p.relative_to(out))] = p.read_bytes()
    return files


def test_criterion_10_cli_determinism(tmp_path):
    mismatched = []
    for name, args in CLI_RUNS.items():
        command = name.split("-")[0]
        outs = []
        for rep in range(2):
            out = tmp_path / f"{name}_{rep}"
            code = cli_main([command, "--out", str(out), "--seed", "11", *args])
            assert code == 0, f"{name} exited with {code}"
            outs.append(_snapshot(out))
        if outs[0] != outs[1]:
            mismatched.append(name)
    sim = tmp_path / "simulate-sde_0" / "trajectory.bin"
    diag_outs = []
    for rep in range(2):
        out = tmp_path / f"diagnose_{rep}"
        assert cli_main(["diagnose", "--out", str(out), f"input={sim}"]) == 0
        diag_outs.append(_snapshot(out))
    if diag_outs[0] != diag_outs[1]:
        mismatched.append("diagnose")
    record(10, not mismatched,
           f"{len(CLI_RUNS) + 1} command runs repeated; byte mismatches: {mismatched or 'none'}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
