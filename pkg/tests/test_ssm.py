"""Tests for the model abstraction and integrators."""

import numpy as np
import pytest
from scipy import integrate

from margsmc import basis as bs
from margsmc import ssm
from margsmc.errors import DimensionError, NumericalError, SingularCovariance


def scalar_model(sigma_omega=0.04, sigma_e=0.01, a=0.9):
    basis = bs.hilbert_basis((5.0,), 3)

    def f(x, xi, u):
        return a * x + xi

    def h(x, u):
        return x

    def feature_map(x, u):
        return x

    return ssm.ModelSpec(
        n_x=1, n_xi=1, n_y=1, n_u=0,
        f=f, h=h,
        sigma_omega=[[sigma_omega]], sigma_e=[[sigma_e]],
        feature_map=feature_map, basis=basis,
        init=ssm.InitSpec(np.zeros(1), np.eye(1)),
    )


# ---------------------------------------------------------------------------
# RK4
# ---------------------------------------------------------------------------

def test_rk4_zero_derivative():
    x = np.array([1.0, -2.0])
    out = ssm.rk4_step(lambda xx, u: np.zeros_like(xx), x, None, 0.1)
    np.testing.assert_array_equal(out, x)


def test_rk4_constant_derivative_exact():
    c = np.array([0.7, -0.3])
    x = np.array([1.0, 2.0])
    out = ssm.rk4_step(lambda xx, u: c, x, None, 0.25)
    np.testing.assert_allclose(out, x + 0.25 * c, rtol=0, atol=0)


def test_rk4_exponential_decay():
    out = ssm.rk4_step(lambda x, u: -x, np.array([1.0]), None, 0.02)
    assert abs(out[0] - np.exp(-0.02)) < 1e-9


def test_rk4_rejects_nan():
    with pytest.raises(NumericalError):
        ssm.rk4_step(lambda x, u: np.full_like(x, np.nan), np.ones(2), None, 0.1)


# ---------------------------------------------------------------------------
# densities
# ---------------------------------------------------------------------------

def test_transition_density_mode_value():
    spec = scalar_model(sigma_omega=0.25)
    x = np.array([0.3])
    xi = np.array([0.1])
    mode = spec.f(x, xi, None)
    got = ssm.transition_density(spec, mode, x, xi, None)
    want = -0.5 * np.log(2 * np.pi * 0.25)
    assert got == pytest.approx(want)


def test_transition_density_symmetric_in_residual():
    spec = scalar_model()
    x = np.array([0.0])
    xi = np.array([0.0])
    up = ssm.transition_density(spec, np.array([0.3]), x, xi, None)
    down = ssm.transition_density(spec, np.array([-0.3]), x, xi, None)
    assert up == pytest.approx(down)


def test_transition_density_normalized():
    spec = scalar_model(sigma_omega=0.09)
    x = np.array([0.2])
    xi = np.array([-0.1])
    val, _ = integrate.quad(
        lambda xn: np.exp(ssm.transition_density(spec, np.array([xn]), x, xi, None)),
        -10, 10,
    )
    assert val == pytest.approx(1.0, abs=1e-6)


def test_measurement_density_mode_symmetry_normalization():
    spec = scalar_model(sigma_e=0.04)
    x = np.array([0.5])
    assert ssm.measurement_density(spec, spec.h(x, None), x, None) == pytest.approx(
        -0.5 * np.log(2 * np.pi * 0.04)
    )
    up = ssm.measurement_density(spec, np.array([0.8]), x, None)
    down = ssm.measurement_density(spec, np.array([0.2]), x, None)
    assert up == pytest.approx(down)
    val, _ = integrate.quad(
        lambda y: np.exp(ssm.measurement_density(spec, np.array([y]), x, None)), -8, 9
    )
    assert val == pytest.approx(1.0, abs=1e-6)


# ---------------------------------------------------------------------------
# ModelSpec validation
# ---------------------------------------------------------------------------

def test_modelspec_probe_rejects_bad_dimensions():
    basis = bs.hilbert_basis((5.0,), 3)
    with pytest.raises(DimensionError):
        ssm.ModelSpec(
            n_x=1, n_xi=1, n_y=1, n_u=0,
            f=lambda x, xi, u: np.concatenate([x, x], axis=-1),  # wrong n_x
            h=lambda x, u: x,
            sigma_omega=[[1.0]], sigma_e=[[1.0]],
            feature_map=lambda x, u: x, basis=basis,
            init=ssm.InitSpec(np.zeros(1), np.eye(1)),
        )


def test_modelspec_rejects_zero_measurement_noise():
    basis = bs.hilbert_basis((5.0,), 3)
    with pytest.raises(SingularCovariance):
        ssm.ModelSpec(
            n_x=1, n_xi=1, n_y=1, n_u=0,
            f=lambda x, xi, u: x, h=lambda x, u: x,
            sigma_omega=[[1.0]], sigma_e=[[0.0]],
            feature_map=lambda x, u: x, basis=basis,
            init=ssm.InitSpec(np.zeros(1), np.eye(1)),
        )


def test_initspec_requires_psd_cov():
    with pytest.raises(SingularCovariance):
        ssm.InitSpec(np.zeros(2), np.array([[1.0, 0.0], [0.0, -1.0]]))


# ---------------------------------------------------------------------------
# forward simulation
# ---------------------------------------------------------------------------

def test_forward_simulate_linear_contraction():
    spec = scalar_model(a=0.5)
    weights = np.zeros((1, 3))
    xs = ssm.forward_simulate(spec, weights, np.array([2.0]), np.zeros((10, 0)))
    np.testing.assert_allclose(xs[:, 0], 2.0 * 0.5 ** np.arange(10))
