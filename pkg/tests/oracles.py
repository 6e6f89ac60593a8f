"""Independent reference implementations used to check the library.

Everything here is deliberately written from scratch via direct formulas
(normal equations, textbook Kalman recursions, quadrature), not by calling
the code under test.
"""

import numpy as np
from scipy.special import gammaln


def conjugate_regression_posterior(m0, v0, psi0, nu0, phis, xis):
    """Batch multivariate Bayesian linear regression posterior.

    Model: xi_t = A phi_t + eps_t with MNIW prior (m0, v0, psi0, nu0).
    Assembled design matrices and plain normal equations; returns
    (M_n, V_n, Psi_n, nu_n).
    """
    phis = np.asarray(phis, dtype=float)
    xis = np.asarray(xis, dtype=float)
    t_n = phis.shape[0]
    v0_inv = np.linalg.inv(v0)
    vn_inv = v0_inv + phis.T @ phis
    vn = np.linalg.inv(vn_inv)
    mn_t = vn @ (v0_inv @ m0.T + phis.T @ xis)
    psi_n = (
        psi0
        + xis.T @ xis
        + m0 @ v0_inv @ m0.T
        - mn_t.T @ vn_inv @ mn_t
    )
    return mn_t.T, vn, psi_n, nu0 + t_n


def kalman_filter(ys, f_mat, h_mat, q, r, m0, p0):
    """Textbook Kalman filter; measurement at t=0 is NOT applied (matching
    the particle filter convention that y_0 only anchors the init draw).

    Returns filtered means (T+1, n) and covariances (T+1, n, n).
    """
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    t_len = ys.shape[0]
    n = m0.size
    means = np.empty((t_len, n))
    covs = np.empty((t_len, n, n))
    m, p = np.asarray(m0, dtype=float), np.asarray(p0, dtype=float)
    means[0], covs[0] = m, p
    for t in range(1, t_len):
        m = f_mat @ m
        p = f_mat @ p @ f_mat.T + q
        s = h_mat @ p @ h_mat.T + r
        k = p @ h_mat.T @ np.linalg.inv(s)
        m = m + k @ (ys[t] - h_mat @ m)
        p = p - k @ s @ k.T
        means[t], covs[t] = m, 0.5 * (p + p.T)
    return means, covs


def rts_smoother(means, covs, f_mat, q):
    """Rauch-Tung-Striebel smoother on Kalman filter output."""
    t_len = means.shape[0]
    sm = means.copy()
    sp = covs.copy()
    for t in range(t_len - 2, -1, -1):
        pred = f_mat @ covs[t] @ f_mat.T + q
        g = covs[t] @ f_mat.T @ np.linalg.inv(pred)
        sm[t] = means[t] + g @ (sm[t + 1] - f_mat @ means[t])
        sp[t] = covs[t] + g @ (sp[t + 1] - pred) @ g.T
    return sm, sp


def student_t_logpdf(x, rho, mu, lam):
    """Multivariate Student-t log density with dof rho, location mu, scale lam."""
    x = np.asarray(x, dtype=float)
    d = mu.size
    diff = x - mu
    l = np.linalg.cholesky(lam)
    z = np.linalg.solve(l, diff)
    quad = float(z @ z)
    logdet = 2.0 * np.log(np.diag(l)).sum()
    return float(
        gammaln((rho + d) / 2.0)
        - gammaln(rho / 2.0)
        - 0.5 * d * np.log(rho * np.pi)
        - 0.5 * logdet
        - 0.5 * (rho + d) * np.log1p(quad / rho)
    )


def mniw_logpdf_scalar(a, sig2, m, v, psi, nu):
    """Scalar-case (n_xi = n_phi = 1) MNIW log density over (A, sigma^2)."""
    log_mn = (
        -0.5 * np.log(2 * np.pi)
        - 0.5 * np.log(v)
        - 0.5 * np.log(sig2)
        - 0.5 * (a - m) ** 2 / (sig2 * v)
    )
    log_iw = (
        0.5 * nu * np.log(psi)
        - 0.5 * nu * np.log(2.0)
        - gammaln(0.5 * nu)
        - 0.5 * (nu + 2.0) * np.log(sig2)
        - 0.5 * psi / sig2
    )
    return log_mn + log_iw


def random_mniw_params(rng, n_xi, n_phi, nu_extra=3.0):
    """A random valid (M, V, Psi, nu) tuple for round-trip style tests."""
    m = rng.standard_normal((n_xi, n_phi))
    a = rng.standard_normal((n_phi, n_phi + 2))
    v = a @ a.T / (n_phi + 2) + 0.5 * np.eye(n_phi)
    b = rng.standard_normal((n_xi, n_xi + 2))
    psi = b @ b.T / (n_xi + 2) + 0.5 * np.eye(n_xi)
    nu = n_xi + 1 + nu_extra + rng.uniform(0, 2)
    return m, v, psi, nu


def batch_means_se(samples, n_batches=40):
    """Monte Carlo standard error of the mean via batch means.

    ``samples`` is (n_draws, ...); correlated draws (MCMC) are handled by
    batching along the first axis.
    """
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    k = n // n_batches
    trimmed = samples[: k * n_batches]
    batches = trimmed.reshape(n_batches, k, *samples.shape[1:]).mean(axis=1)
    return batches.std(axis=0, ddof=1) / np.sqrt(n_batches)
