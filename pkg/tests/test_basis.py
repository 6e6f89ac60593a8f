"""Tests for basis construction and spectral priors."""

import numpy as np
import pytest
from scipy import integrate

from margsmc import basis as bs


def test_boundary_is_zero():
    cfg = bs.hilbert_basis((1.0, 2.0), 5)
    z = np.array([-1.0, -2.0])
    np.testing.assert_allclose(bs.eval_basis(cfg, z), 0.0, atol=1e-15)


def test_first_basis_function_at_origin():
    cfg = bs.HilbertBasisConfig((1.0,), ((1,),))
    assert bs.eval_basis(cfg, np.array([0.0]))[0] == pytest.approx(1.0)


def test_even_index_is_odd_function():
    cfg = bs.HilbertBasisConfig((1.0,), ((2,),))
    rng = np.random.default_rng(0)
    z = rng.uniform(-1, 1, size=(100, 1))
    np.testing.assert_allclose(bs.eval_basis(cfg, -z), -bs.eval_basis(cfg, z), atol=1e-14)


def test_eval_is_bounded():
    cfg = bs.hilbert_basis((1.5, 0.5), 7)
    rng = np.random.default_rng(1)
    z = rng.uniform(-2, 2, size=(200, 2))
    bound = 1.0 / np.sqrt(1.5 * 0.5)
    assert np.all(np.abs(bs.eval_basis(cfg, z)) <= bound + 1e-12)


def test_clamping_counts_out_of_domain():
    bs.reset_clamp_count()
    cfg = bs.hilbert_basis((1.0,), 3)
    bs.eval_basis(cfg, np.array([[0.5], [1.5], [-3.0]]))
    assert bs.clamp_count() == 2
    # clamped value equals the boundary value
    inside = bs.eval_basis(cfg, np.array([1.0]))
    outside = bs.eval_basis(cfg, np.array([9.0]))
    np.testing.assert_array_equal(inside, outside)
    bs.reset_clamp_count()


def test_eigenvalues_1d():
    cfg = bs.HilbertBasisConfig((1.0,), ((1,),))
    assert bs.eigenvalues(cfg)[0] == pytest.approx((np.pi / 2) ** 2)


def test_eigenvalues_2d():
    cfg = bs.HilbertBasisConfig((1.0, 1.0), ((1, 1),))
    assert bs.eigenvalues(cfg)[0] == pytest.approx(2 * (np.pi / 2) ** 2)


def test_eigenvalues_monotone_in_index():
    cfg = bs.HilbertBasisConfig((2.0,), tuple((j,) for j in range(1, 10)))
    e = bs.eigenvalues(cfg)
    assert np.all(np.diff(e) > 0)


def test_spectral_density_at_zero():
    k = bs.KernelSpec(2.0, (0.5, 0.7))
    want = 2.0 * (2 * np.pi) ** 1.0 * 0.5 * 0.7
    assert bs.se_spectral_density(k, np.zeros(2)) == pytest.approx(want)


def test_spectral_density_decreasing():
    k = bs.KernelSpec(1.0, (0.8,))
    w = np.linspace(0, 10, 50)
    s = bs.se_spectral_density(k, w)
    assert np.all(np.diff(s) < 0)


def test_spectral_density_integrates_to_kernel_variance():
    """Bochner consistency: 2 * int_0^inf S(w) dw / (2 pi) = sigma^2 (d=1)."""
    k = bs.KernelSpec(3.0, (0.6,))
    val, _ = integrate.quad(lambda w: bs.se_spectral_density(k, w), 0, np.inf)
    assert 2 * val / (2 * np.pi) == pytest.approx(3.0, abs=1e-6)


def test_prior_column_covariance_positive_and_ordered():
    cfg = bs.hilbert_basis((2.0,), 6)
    k = bs.KernelSpec(1.5, (0.4,))
    v = bs.prior_column_covariance(cfg, k)
    d = np.diag(v)
    assert np.all(d > 0)
    assert np.count_nonzero(v - np.diag(d)) == 0
    order = np.argsort(bs.eigenvalues(cfg))
    assert np.all(np.diff(d[order]) <= 0)


def test_oscillator_prior_covariance_regression():
    """Reference configuration stays well conditioned (pinned regression)."""
    n_phi = 41
    l_dom = 7.5
    cfg = bs.hilbert_basis((l_dom, l_dom), n_phi)
    ell = 2 * l_dom / n_phi
    k = bs.KernelSpec(10.0, (ell, ell))
    v = bs.prior_column_covariance(cfg, k)
    d = np.diag(v)
    assert np.all(np.isfinite(d)) and np.all(d > 0)
    cond = d.max() / d.min()
    assert cond < 1e12
    # pinned values for the current defaults
    assert cond == pytest.approx(1.1891068234435875, rel=1e-9)
    assert d.max() == pytest.approx(8.360741827260807, rel=1e-9)


def test_ard_lengthscales_use_separable_form():
    cfg = bs.HilbertBasisConfig((1.0, 2.0), ((1, 2), (2, 1)))
    k = bs.KernelSpec(1.0, (0.3, 0.9))
    v = bs.prior_column_covariance(cfg, k)
    freqs = np.pi * np.array([[1, 2], [2, 1]], dtype=float) / (2 * np.array([1.0, 2.0]))
    want = [bs.se_spectral_density(k, f) for f in freqs]
    np.testing.assert_allclose(np.diag(v), want, rtol=1e-12)


def test_antisymmetric_indices():
    assert bs.antisymmetric_indices(3) == [2, 4, 6]
    assert len(bs.antisymmetric_indices(20)) == 20
    assert bs.antisymmetric_indices(20)[-1] == 40


def test_antisymmetric_basis_is_odd():
    cfg = bs.antisymmetric_basis(0.35, 5)
    rng = np.random.default_rng(2)
    z = rng.uniform(-0.35, 0.35, size=(100, 1))
    np.testing.assert_allclose(cfg.phi(-z), -cfg.phi(z), atol=1e-14)


def test_hilbert_basis_selects_smallest_eigenvalues():
    cfg = bs.hilbert_basis((1.0, 1.0), 5)
    # smallest five 2-D sums j1^2 + j2^2 with ties broken lexicographically
    assert cfg.indices == ((1, 1), (1, 2), (2, 1), (2, 2), (1, 3))


def test_config_validation():
    with pytest.raises(ValueError):
        bs.HilbertBasisConfig((0.0,), ((1,),))
    with pytest.raises(ValueError):
        bs.HilbertBasisConfig((1.0,), ((0,),))
    with pytest.raises(ValueError):
        bs.HilbertBasisConfig((1.0,), ((1,), (1,)))


def test_stacked_basis_concatenates_and_blockdiags():
    part = bs.antisymmetric_basis(0.5, 3)
    stack = bs.StackedBasis((part, part), (0, 1))
    assert stack.n_phi == 6
    z = np.array([0.1, -0.2])
    phi = stack.phi(z)
    np.testing.assert_allclose(phi[:3], part.phi(z[:1]))
    np.testing.assert_allclose(phi[3:], part.phi(z[1:]))
    k = bs.KernelSpec(1.0, (0.2,))
    v = stack.column_prior((k, k))
    assert v.shape == (6, 6)
    assert np.count_nonzero(v[:3, 3:]) == 0
