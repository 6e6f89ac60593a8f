"""State-space model abstraction and continuous-to-discrete utilities.

A :class:`ModelSpec` binds the known transition f(x, xi, u) and measurement
h(x, u) to the interface variable xi, the noise covariances, the feature map
feeding the basis expansion, and the initial-state specification. Model
functions must broadcast over a leading particle axis; construction probes
them at the initial mean to catch dimension mistakes early.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DimensionError, NumericalError, SingularCovariance

_LOG_2PI = np.log(2.0 * np.pi)


def rk4_step(f_cont, x, u, dt: float) -> np.ndarray:
    """Classical fixed-step fourth-order Runge-Kutta for x' = f_cont(x, u)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    k1 = np.asarray(f_cont(x, u))
    k2 = np.asarray(f_cont(x + 0.5 * dt * k1, u))
    k3 = np.asarray(f_cont(x + 0.5 * dt * k2, u))
    k4 = np.asarray(f_cont(x + dt * k3, u))
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NumericalError("RK4 produced non-finite state")
    return out


def _chol_pd(a, what):
    a = np.asarray(a, dtype=float)
    a = 0.5 * (a + a.T)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise SingularCovariance(f"{what} must be symmetric positive definite") from None


def psd_sqrt(a) -> np.ndarray:
    """Symmetric square root of a PSD matrix (eigendecomposition, clipped)."""
    a = np.asarray(a, dtype=float)
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    if w.min(initial=0.0) < -1e-10 * max(1.0, abs(w).max(initial=0.0)):
        raise SingularCovariance("matrix is not positive semidefinite")
    return v @ np.diag(np.sqrt(np.clip(w, 0.0, None))) @ v.T


def gaussian_logpdf(resid, chol_l) -> np.ndarray:
    """Log N(resid | 0, L L^T) for residual rows; resid is (..., d)."""
    resid = np.asarray(resid, dtype=float)
    d = chol_l.shape[0]
    z = np.linalg.solve(chol_l, resid[..., None])[..., 0] if resid.ndim > 1 else np.linalg.solve(chol_l, resid)
    with np.errstate(over="ignore"):  # huge residuals overflow to -inf log density
        maha = np.sum(z**2, axis=-1)
    logdet = 2.0 * np.log(np.diag(chol_l)).sum()
    return -0.5 * (maha + logdet + d * _LOG_2PI)


@dataclass(frozen=True)
class InitSpec:
    """Initial-state specification.

    x0 ~ N(x0_mean, x0_cov); xi0 is drawn from the basis prior predictive at
    phi(feature_map(x0, u0)) unless a fixed value is given.
    """

    x0_mean: np.ndarray
    x0_cov: np.ndarray
    xi0: np.ndarray | None = None

    def __post_init__(self):
        mean = np.asarray(self.x0_mean, dtype=float)
        cov = np.asarray(self.x0_cov, dtype=float)
        object.__setattr__(self, "x0_mean", mean)
        object.__setattr__(self, "x0_cov", cov)
        if self.xi0 is not None:
            object.__setattr__(self, "xi0", np.asarray(self.xi0, dtype=float))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise DimensionError("x0_cov must be square and match x0_mean")
        psd_sqrt(cov)  # raises if not PSD


@dataclass(frozen=True)
class ModelSpec:
    """Immutable model bundle: dynamics, measurement, noise, features, basis.

    ``f(x, xi, u)`` and ``h(x, u)`` must be vectorized over a leading axis
    and reentrant; ``feature_map(x, u)`` maps states (and inputs) to the
    feature vector consumed by ``basis.phi``. Models without inputs use
    n_u = 0 and receive empty input vectors.
    """

    n_x: int
    n_xi: int
    n_y: int
    n_u: int
    f: callable
    h: callable
    sigma_omega: np.ndarray
    sigma_e: np.ndarray
    feature_map: callable
    basis: object
    init: InitSpec
    u_ref: np.ndarray | None = None  # representative input used for probing

    def __post_init__(self):
        object.__setattr__(self, "sigma_omega", np.asarray(self.sigma_omega, dtype=float))
        object.__setattr__(self, "sigma_e", np.asarray(self.sigma_e, dtype=float))
        u_ref = np.zeros(self.n_u) if self.u_ref is None else np.asarray(self.u_ref, dtype=float)
        object.__setattr__(self, "u_ref", u_ref)
        if u_ref.shape != (self.n_u,):
            raise DimensionError("u_ref must have length n_u")
        if self.sigma_omega.shape != (self.n_x, self.n_x):
            raise DimensionError("sigma_omega must be (n_x, n_x)")
        if self.sigma_e.shape != (self.n_y, self.n_y):
            raise DimensionError("sigma_e must be (n_y, n_y)")
        _chol_pd(self.sigma_omega, "sigma_omega")
        _chol_pd(self.sigma_e, "sigma_e")
        if self.init.x0_mean.shape != (self.n_x,):
            raise DimensionError("init mean must have length n_x")
        self._probe()

    def _probe(self):
        """Evaluate every model function at the init mean, single and batched."""
        u0 = self.u_ref
        x0 = self.init.x0_mean
        xi0 = np.zeros(self.n_xi)
        for batch in (False, True):
            x = np.repeat(x0[None], 2, axis=0) if batch else x0
            xi = np.repeat(xi0[None], 2, axis=0) if batch else xi0
            u = np.repeat(u0[None], 2, axis=0) if batch else u0
            lead = (2,) if batch else ()
            xp = np.asarray(self.f(x, xi, u))
            if xp.shape != lead + (self.n_x,):
                raise DimensionError(f"f returned shape {xp.shape}, expected {lead + (self.n_x,)}")
            y = np.asarray(self.h(x, u))
            if y.shape != lead + (self.n_y,):
                raise DimensionError(f"h returned shape {y.shape}, expected {lead + (self.n_y,)}")
            z = np.asarray(self.feature_map(x, u))
            if z.shape != lead + (self.basis.dims,):
                raise DimensionError(
                    f"feature_map returned shape {z.shape}, expected {lead + (self.basis.dims,)}"
                )
            phi = np.asarray(self.basis.phi(z))
            if phi.shape != lead + (self.basis.n_phi,):
                raise DimensionError(f"basis returned shape {phi.shape}")

    @cached_property
    def chol_sigma_omega(self):
        return _chol_pd(self.sigma_omega, "sigma_omega")

    @cached_property
    def chol_sigma_e(self):
        return _chol_pd(self.sigma_e, "sigma_e")

    @property
    def n_phi(self):
        return self.basis.n_phi

    def phi(self, x, u):
        """Basis vector(s) at the model features: basis.phi(feature_map(x, u))."""
        return np.asarray(self.basis.phi(self.feature_map(x, u)))


def transition_density(spec: ModelSpec, x_next, x, xi, u) -> float:
    """log N(x_next | f(x, xi, u), sigma_omega)."""
    mean = np.asarray(spec.f(np.asarray(x, dtype=float), np.asarray(xi, dtype=float), u))
    out = gaussian_logpdf(np.asarray(x_next, dtype=float) - mean, spec.chol_sigma_omega)
    return float(out) if np.ndim(out) == 0 else out


def measurement_density(spec: ModelSpec, y, x, u) -> float:
    """log N(y | h(x, u), sigma_e)."""
    mean = np.asarray(spec.h(np.asarray(x, dtype=float), u))
    out = gaussian_logpdf(np.asarray(y, dtype=float) - mean, spec.chol_sigma_e)
    return float(out) if np.ndim(out) == 0 else out


def forward_simulate(spec: ModelSpec, weights, x0, us) -> np.ndarray:
    """Noise-free rollout substituting xi = weights @ phi(feature_map(x, u)).

    Used to judge a learned function by simulating the known dynamics with
    the posterior-mean interface inserted. Returns states (T+1, n_x).
    """
    weights = np.asarray(weights, dtype=float)
    us = np.asarray(us, dtype=float).reshape(len(us), spec.n_u)
    xs = np.empty((len(us), spec.n_x))
    xs[0] = np.asarray(x0, dtype=float)
    for t in range(len(us) - 1):
        phi = spec.phi(xs[t], us[t])
        xi = weights @ phi
        xs[t + 1] = np.asarray(spec.f(xs[t], xi, us[t]))
        if not np.all(np.isfinite(xs[t + 1])):
            raise NumericalError(f"forward simulation diverged at step {t + 1}")
    return xs
