import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from sgdlab.diffusion import (WITH_REPLACEMENT, WITHOUT_REPLACEMENT, architecture_score,
                              beta_scaling_constant, diffusion_matrix, eigenspectrum,
                              minibatch_variance_from_grads, minibatch_variance_mc,
                              minibatch_variance_prefactor, sample_batches, spectrum_summary,
                              temperatures)
from sgdlab.errors import NumericalError
from sgdlab.models import QuadraticEnsemble


def exact_variance(G, b, replace):
    """Exhaustive enumeration of every ordered (with) or unordered (without) batch."""
    n = G.shape[0]
    mean = G.mean(axis=0)
    batches = (itertools.product(range(n), repeat=b) if replace
               else itertools.combinations(range(n), b))
    devs = np.array([G[list(idx)].mean(axis=0) - mean for idx in batches])
    return devs.T @ devs / len(devs)


@pytest.mark.parametrize("n,b", [(2, 1), (4, 2), (5, 3), (6, 1), (6, 6)])
def test_formulas_match_enumeration(n, b):
    G = np.random.default_rng(n * 10 + b).standard_normal((n, 3))
    D = diffusion_matrix(G, WITH_REPLACEMENT).matrix
    Dp = diffusion_matrix(G, WITHOUT_REPLACEMENT).matrix
    np.testing.assert_allclose(exact_variance(G, b, True), D / b, atol=1e-12)
    np.testing.assert_allclose(exact_variance(G, b, False),
                               minibatch_variance_prefactor(WITHOUT_REPLACEMENT, b, n) * Dp,
                               atol=1e-12)


def test_alternative_coefficient_is_refuted():
    # N = 2, b = 1: with coefficient 1 - 1/(N-1) = 0 on g g^T the formula would be
    # (1/(N-1)) sum g_k g_k^T, which is wrong whenever the mean gradient is nonzero
    G = np.array([[1.0, 0.0], [3.0, 0.0]])
    alt = G.T @ G / (2 - 1) * (1 - 1 / 2)
    exact = exact_variance(G, 1, False)
    assert not np.allclose(alt, exact)
    np.testing.assert_allclose(0.5 * diffusion_matrix(G, WITHOUT_REPLACEMENT).matrix, exact)


def test_without_replacement_is_rescaled_with_replacement(rng):
    G = rng.standard_normal((7, 4))
    np.testing.assert_allclose(diffusion_matrix(G, WITHOUT_REPLACEMENT).matrix,
                               7 / 6 * diffusion_matrix(G, WITH_REPLACEMENT).matrix)


def test_full_batch_without_replacement_has_no_noise(rng):
    G = rng.standard_normal((6, 3))
    assert np.all(minibatch_variance_from_grads(G, WITHOUT_REPLACEMENT, 6, 100) == 0.0)


def test_monte_carlo_matches_formula():
    q = QuadraticEnsemble(np.random.default_rng(1).standard_normal((8, 3)))
    x = np.zeros(3)
    D = diffusion_matrix(q.sample_grads(x, np.arange(8)), WITH_REPLACEMENT).matrix
    V = minibatch_variance_mc(q, x, WITH_REPLACEMENT, 2, 50_000, seed=4)
    assert np.linalg.norm(V - D / 2) / np.linalg.norm(D / 2) < 0.05


def test_monte_carlo_is_deterministic(rng):
    G = rng.standard_normal((8, 2))
    a = minibatch_variance_from_grads(G, WITH_REPLACEMENT, 3, 10_000, seed=9)
    b = minibatch_variance_from_grads(G, WITH_REPLACEMENT, 3, 10_000, seed=9)
    np.testing.assert_array_equal(a, b)


def test_sample_batches_shapes(rng):
    idx = sample_batches(rng, WITHOUT_REPLACEMENT, 10, 4, 50)
    assert idx.shape == (50, 4)
    assert all(len(set(row)) == 4 for row in idx)
    with pytest.raises(ValueError):
        sample_batches(rng, WITHOUT_REPLACEMENT, 3, 4, 1)
    with pytest.raises(ValueError):
        sample_batches(rng, "bogus", 3, 1, 1)


def test_single_sample_needs_two_for_without_replacement():
    with pytest.raises(ValueError):
        diffusion_matrix(np.ones((1, 2)), WITHOUT_REPLACEMENT)
    assert diffusion_matrix(np.ones((1, 2)), WITH_REPLACEMENT).rank == 0


@given(st.integers(2, 12), st.integers(1, 10), st.integers(0, 2**31 - 1))
def test_rank_bound(n, d, seed):
    G = np.random.default_rng(seed).standard_normal((n, d))
    for scheme in (WITH_REPLACEMENT, WITHOUT_REPLACEMENT):
        assert diffusion_matrix(G, scheme).rank <= min(d, n - 1)


@given(arrays(np.float64, (6, 3), elements=st.floats(-1e3, 1e3)))
def test_diffusion_is_psd_and_symmetric(G):
    est = diffusion_matrix(G)
    np.testing.assert_array_equal(est.matrix, est.matrix.T)
    assert est.eigenvalues.min() >= 0
    assert np.all(np.diff(est.eigenvalues) <= 0)


def test_collinear_centres_give_rank_one():
    t = np.linspace(-1, 1, 5)[:, None]
    q = QuadraticEnsemble(t * np.array([[1.0, 2.0]]))
    assert diffusion_matrix(q.sample_grads(np.zeros(2), np.arange(5))).rank == 1


def test_eigenspectrum_rejects_non_psd():
    with pytest.raises(NumericalError):
        eigenspectrum(np.diag([1.0, -0.1]))
    spec = eigenspectrum(np.diag([1.0, -1e-14]))
    assert spec.eigenvalues[-1] == 0.0 and spec.rank == 1


def test_temperatures():
    t = temperatures(0.1, 10, 100)
    assert t.beta_inv == pytest.approx(0.005)
    assert t.beta_inv_without_replacement == pytest.approx(0.005 * 0.9)
    assert temperatures(0.1, 100, 100).beta_inv_without_replacement == 0.0
    with pytest.raises(ValueError):
        temperatures(0.1, 101, 100)


def test_beta_scaling_is_invariant_along_eta_over_b():
    lam = [3.0, 1.0, 0.0]
    assert beta_scaling_constant(0.1, 10, lam) == pytest.approx(beta_scaling_constant(0.2, 20, lam))


def test_architecture_score():
    assert architecture_score(np.diag([2.0, 0.0])) == pytest.approx(0.5 + 1.0)
    summary = spectrum_summary(diffusion_matrix(np.eye(3)), eta=0.1, b=1)
    assert summary["rank"] == 2 and summary["beta_inv"] == pytest.approx(0.05)
