"""Matrix-normal inverse-Wishart (MNIW) conjugacy.

This module owns the distribution parameters, the additive sufficient
statistics, posterior/forgetting updates, sampling, the multivariate
Student-t predictive of the interface variable, and the exponential-family
log-normalizer used by ancestor sampling.

Conventions: the weight matrix ``A`` is (n_xi, n_phi), the column covariance
``V`` is (n_phi, n_phi) and the noise scale ``Psi`` is (n_xi, n_xi). The
statistics are

    chi0 (n_phi, n_xi),  chi1 (n_phi, n_phi),  chi2 (n_xi, n_xi),  chi3 scalar,

and posterior updating is component-wise addition of data statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import multigammaln

from .errors import (
    DegeneratePosterior,
    DimensionError,
    InvalidForgettingFactor,
    NumericalError,
    SingularCovariance,
    SingularStatistics,
)

_SYM_RTOL = 1e-12
#: forgetting keeps chi3 at/above n_xi + n_phi + 1 + this margin
NU_FLOOR_MARGIN = 1e-6


# ---------------------------------------------------------------------------
# numerical helpers
# ---------------------------------------------------------------------------

def _sym(a):
    """Exact symmetric part."""
    return 0.5 * (a + a.T)


def _check_symmetric(a, name):
    scale = 1.0 + np.abs(a).max(initial=0.0)
    if np.abs(a - a.T).max(initial=0.0) > _SYM_RTOL * scale:
        raise ValueError(f"{name} must be symmetric to {_SYM_RTOL} relative")


def _chol(a, err_cls, what):
    """Cholesky factor of the symmetric part, with one jitter retry.

    The jitter policy (1e-10 * trace/n on failure) covers statistics that are
    PSD by construction but nearly singular early in a run.
    """
    s = _sym(a)
    try:
        return np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        n = s.shape[0]
        jitter = 1e-10 * np.trace(s) / max(n, 1)
        if jitter <= 0.0:
            raise err_cls(f"{what} is not positive definite") from None
        try:
            return np.linalg.cholesky(s + jitter * np.eye(n))
        except np.linalg.LinAlgError:
            raise err_cls(f"{what} is not positive definite") from None


def _cho_solve(chol_l, b):
    """Solve A x = b given the lower Cholesky factor of A."""
    y = np.linalg.solve(chol_l, b)
    return np.linalg.solve(chol_l.T, y)


def _logdet_from_chol(chol_l):
    return 2.0 * np.log(np.diag(chol_l)).sum()


def _frozen_array(obj, field, value):
    arr = np.array(value, dtype=float)
    arr.setflags(write=False)
    object.__setattr__(obj, field, arr)
    return arr


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MniwParams:
    """MNIW distribution parameters {M, V, Psi, nu}.

    ``V`` and ``Psi`` must be symmetric positive definite and ``nu`` must
    exceed n_xi + 1 so the inverse-Wishart mean exists.
    """

    M: np.ndarray
    V: np.ndarray
    Psi: np.ndarray
    nu: float

    def __post_init__(self):
        m = _frozen_array(self, "M", self.M)
        v = _frozen_array(self, "V", self.V)
        psi = _frozen_array(self, "Psi", self.Psi)
        object.__setattr__(self, "nu", float(self.nu))
        if m.ndim != 2:
            raise DimensionError("M must be a 2-D (n_xi, n_phi) matrix")
        n_xi, n_phi = m.shape
        if v.shape != (n_phi, n_phi):
            raise DimensionError(f"V must be ({n_phi}, {n_phi}), got {v.shape}")
        if psi.shape != (n_xi, n_xi):
            raise DimensionError(f"Psi must be ({n_xi}, {n_xi}), got {psi.shape}")
        _check_symmetric(v, "V")
        _check_symmetric(psi, "Psi")
        _chol(v, SingularCovariance, "V")
        _chol(psi, SingularCovariance, "Psi")
        if not self.nu > n_xi + 1:
            raise DegeneratePosterior(
                f"nu = {self.nu} must exceed n_xi + 1 = {n_xi + 1}"
            )

    @property
    def n_xi(self):
        return self.M.shape[0]

    @property
    def n_phi(self):
        return self.M.shape[1]


@dataclass(frozen=True)
class SuffStats:
    """Additive sufficient statistics {chi0, chi1, chi2, chi3}.

    Also represents per-trajectory statistics (s0..s3); the two share the
    same algebra. chi3 counts observations and must be non-negative.
    """

    chi0: np.ndarray
    chi1: np.ndarray
    chi2: np.ndarray
    chi3: float

    def __post_init__(self):
        c0 = _frozen_array(self, "chi0", self.chi0)
        c1 = _frozen_array(self, "chi1", self.chi1)
        c2 = _frozen_array(self, "chi2", self.chi2)
        object.__setattr__(self, "chi3", float(self.chi3))
        if c0.ndim != 2:
            raise DimensionError("chi0 must be a 2-D (n_phi, n_xi) matrix")
        n_phi, n_xi = c0.shape
        if c1.shape != (n_phi, n_phi):
            raise DimensionError(f"chi1 must be ({n_phi}, {n_phi}), got {c1.shape}")
        if c2.shape != (n_xi, n_xi):
            raise DimensionError(f"chi2 must be ({n_xi}, {n_xi}), got {c2.shape}")
        _check_symmetric(c1, "chi1")
        _check_symmetric(c2, "chi2")
        if self.chi3 < 0:
            raise ValueError("chi3 must be non-negative")

    @classmethod
    def zeros(cls, n_phi, n_xi):
        return cls(
            np.zeros((n_phi, n_xi)),
            np.zeros((n_phi, n_phi)),
            np.zeros((n_xi, n_xi)),
            0.0,
        )

    @property
    def n_phi(self):
        return self.chi0.shape[0]

    @property
    def n_xi(self):
        return self.chi0.shape[1]


@dataclass(frozen=True)
class StudentTParams:
    """Parameters (rho, mu, Lambda, kappa) of the interface predictive."""

    rho: float
    mu: np.ndarray
    Lambda: np.ndarray
    kappa: float

    def __post_init__(self):
        mu = _frozen_array(self, "mu", self.mu)
        lam = _frozen_array(self, "Lambda", self.Lambda)
        object.__setattr__(self, "rho", float(self.rho))
        object.__setattr__(self, "kappa", float(self.kappa))
        if mu.ndim != 1:
            raise DimensionError("mu must be a vector")
        if lam.shape != (mu.size, mu.size):
            raise DimensionError("Lambda shape inconsistent with mu")
        if self.rho <= 0:
            raise DegeneratePosterior(f"rho = {self.rho} must be positive")
        if self.kappa <= 0:
            raise NumericalError(f"kappa = {self.kappa} must be positive")
        _check_symmetric(lam, "Lambda")
        _chol(lam, NumericalError, "Lambda")

    @property
    def n_xi(self):
        return self.mu.size


@dataclass(frozen=True)
class WeightNoiseSample:
    """A joint draw (A, SigmaEps) from an MNIW distribution."""

    A: np.ndarray
    SigmaEps: np.ndarray

    def __post_init__(self):
        a = _frozen_array(self, "A", self.A)
        s = _frozen_array(self, "SigmaEps", self.SigmaEps)
        if a.ndim != 2:
            raise DimensionError("A must be 2-D")
        if s.shape != (a.shape[0], a.shape[0]):
            raise DimensionError("SigmaEps shape inconsistent with A")
        _check_symmetric(s, "SigmaEps")
        _chol(s, SingularCovariance, "SigmaEps")


# ---------------------------------------------------------------------------
# parameter <-> statistics maps
# ---------------------------------------------------------------------------

def as_stats(prior) -> SuffStats:
    """Coerce a prior given as either MniwParams or raw SuffStats.

    Raw statistics admit noninformative priors (e.g. nu = n_xi) that cannot
    be represented as proper distribution parameters.
    """
    if isinstance(prior, SuffStats):
        return prior
    return stats_from_params(prior)


def stats_from_params(p: MniwParams) -> SuffStats:
    """Map distribution parameters to sufficient statistics.

    chi0 = V^-1 M^T, chi1 = V^-1, chi2 = M V^-1 M^T + Psi, chi3 = nu.
    """
    lv = _chol(p.V, SingularCovariance, "V")
    chi1 = _sym(_cho_solve(lv, np.eye(p.n_phi)))
    chi0 = _cho_solve(lv, p.M.T)
    chi2 = _sym(p.M @ chi0 + p.Psi)
    return SuffStats(chi0, chi1, chi2, p.nu)


def params_from_stats(s: SuffStats) -> MniwParams:
    """Map sufficient statistics to distribution parameters.

    Raises SingularStatistics when chi1 cannot be inverted and
    DegeneratePosterior when the implied Psi is not positive definite or the
    implied nu does not admit a proper inverse-Wishart mean.
    """
    lc = _chol(s.chi1, SingularStatistics, "chi1")
    v = _sym(_cho_solve(lc, np.eye(s.n_phi)))
    m_t = _cho_solve(lc, s.chi0)
    psi = _sym(s.chi2 - s.chi0.T @ m_t)
    if not s.chi3 > s.n_xi + 1:
        raise DegeneratePosterior(
            f"chi3 = {s.chi3} implies nu <= n_xi + 1; statistics too weak"
        )
    try:
        _chol(psi, DegeneratePosterior, "implied Psi")
    except DegeneratePosterior:
        raise DegeneratePosterior(
            "implied Psi = chi2 - chi0^T chi1^-1 chi0 is not positive definite "
            "(too-aggressive forgetting or degenerate data)"
        ) from None
    return MniwParams(m_t.T, v, psi, s.chi3)


# ---------------------------------------------------------------------------
# posterior updates
# ---------------------------------------------------------------------------

def posterior_update(s: SuffStats, phi: np.ndarray, xi: np.ndarray) -> SuffStats:
    """One-sample measurement update of the statistics."""
    phi = np.asarray(phi, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if phi.shape != (s.n_phi,):
        raise DimensionError(f"phi must have shape ({s.n_phi},), got {phi.shape}")
    if xi.shape != (s.n_xi,):
        raise DimensionError(f"xi must have shape ({s.n_xi},), got {xi.shape}")
    return SuffStats(
        s.chi0 + np.outer(phi, xi),
        s.chi1 + np.outer(phi, phi),
        s.chi2 + np.outer(xi, xi),
        s.chi3 + 1.0,
    )


def forget(s: SuffStats, gamma: float) -> SuffStats:
    """Exponential forgetting: scale every statistic by gamma.

    chi3 is kept at or above n_xi + n_phi + 1 + 1e-6 so the implied
    inverse-Wishart stays proper; the floor never raises chi3 above its
    incoming value, so gamma = 1 is always the identity.
    """
    if not 0.0 < gamma <= 1.0:
        raise InvalidForgettingFactor(f"gamma = {gamma} outside (0, 1]")
    floor = s.n_xi + s.n_phi + 1.0 + NU_FLOOR_MARGIN
    chi3 = max(gamma * s.chi3, min(s.chi3, floor))
    return SuffStats(gamma * s.chi0, gamma * s.chi1, gamma * s.chi2, chi3)


def trajectory_stats(phis, xis) -> SuffStats:
    """Statistics of a whole trajectory: sums of per-step outer products.

    Implemented as a left fold of :func:`posterior_update` so the result is
    bit-identical to applying the recursive update sample by sample.
    """
    phis = np.asarray(phis, dtype=float)
    xis = np.asarray(xis, dtype=float)
    if phis.ndim != 2 or xis.ndim != 2:
        raise DimensionError("phis and xis must be 2-D (T+1, dim) arrays")
    if phis.shape[0] != xis.shape[0]:
        raise DimensionError(
            f"length mismatch: {phis.shape[0]} basis vectors vs {xis.shape[0]} interfaces"
        )
    out = SuffStats.zeros(phis.shape[1], xis.shape[1])
    for phi, xi in zip(phis, xis):
        out = posterior_update(out, phi, xi)
    return out


def batch_update(prior: SuffStats, traj: SuffStats) -> SuffStats:
    """Batch posterior: component-wise sum of prior and trajectory statistics."""
    if prior.chi0.shape != traj.chi0.shape:
        raise DimensionError(
            f"incompatible statistics: {prior.chi0.shape} vs {traj.chi0.shape}"
        )
    return SuffStats(
        prior.chi0 + traj.chi0,
        prior.chi1 + traj.chi1,
        prior.chi2 + traj.chi2,
        prior.chi3 + traj.chi3,
    )


# ---------------------------------------------------------------------------
# sampling and predictives
# ---------------------------------------------------------------------------

def sample_mniw(p: MniwParams, rng: np.random.Generator) -> WeightNoiseSample:
    """Joint draw of (A, SigmaEps).

    SigmaEps ~ IW(Psi, nu) via the Bartlett construction, then
    A = M + chol(SigmaEps) Z chol(V)^T with Z standard normal.
    """
    n = p.n_xi
    l_psi = _chol(p.Psi, SingularCovariance, "Psi")
    # Bartlett factor for Wishart(nu, Psi^-1): lower triangular with
    # chi(nu - i) diagonal; SigmaEps = (bart^-1 L_Psi^T)^T (bart^-1 L_Psi^T).
    bart = np.zeros((n, n))
    for i in range(n):
        bart[i, i] = np.sqrt(rng.chisquare(p.nu - i))
    if n > 1:
        idx = np.tril_indices(n, -1)
        bart[idx] = rng.standard_normal(len(idx[0]))
    try:
        inner = np.linalg.solve(bart, l_psi.T)
    except np.linalg.LinAlgError:
        raise SingularCovariance("Bartlett factor singular") from None
    sigma = _sym(inner.T @ inner)
    l_sigma = _chol(sigma, SingularCovariance, "sampled SigmaEps")
    l_v = _chol(p.V, SingularCovariance, "V")
    z = rng.standard_normal((n, p.n_phi))
    a = p.M + l_sigma @ z @ l_v.T
    return WeightNoiseSample(a, sigma)


def predictive(s: SuffStats, phi: np.ndarray) -> StudentTParams:
    """Student-t predictive of the interface variable at basis vector phi.

    Works directly on the statistics: rho = chi3 - n_xi + 1, mu = Mbar phi,
    kappa = 1 / (phi^T Vbar phi) and Lambda = ((kappa+1)/(kappa rho)) Psibar.
    Building Lambda from Psibar involves no factorization of Psibar. The
    statistics only need chi1 positive definite, a positive-definite implied
    Psibar, and chi3 > n_xi - 1, which admits the noninformative nu = n_xi
    prior configuration.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (s.n_phi,):
        raise DimensionError(f"phi must have shape ({s.n_phi},), got {phi.shape}")
    lc = _chol(s.chi1, SingularStatistics, "chi1")
    sol = _cho_solve(lc, np.column_stack([phi, s.chi0]))
    v_phi = sol[:, 0]
    m_t = sol[:, 1:]
    quad = float(phi @ v_phi)
    if not np.isfinite(quad) or quad < 0.0 or (quad == 0.0 and np.any(phi != 0.0)):
        raise NumericalError("phi^T Vbar phi <= 0: Vbar lost positive definiteness")
    rho = s.chi3 - s.n_xi + 1.0
    if rho <= 0.0:
        raise DegeneratePosterior(f"predictive dof rho = {rho} not positive")
    mu = s.chi0.T @ v_phi
    psi = _sym(s.chi2 - s.chi0.T @ m_t)
    # (kappa + 1)/(kappa rho) written as (1 + quad)/rho: exact at phi = 0,
    # where the predictive degenerates to the pure-noise marginal
    lam = _sym((1.0 + quad) / rho * psi)
    with np.errstate(divide="ignore"):
        kappa = 1.0 / quad if quad > 0.0 else np.inf
    return StudentTParams(rho, mu, lam, kappa)


def sample_student_t(p: StudentTParams, rng: np.random.Generator) -> np.ndarray:
    """Draw from the multivariate Student-t via the chi-square scale mixture."""
    l_lam = _chol(p.Lambda, NumericalError, "Lambda")
    w = rng.chisquare(p.rho) / p.rho
    z = rng.standard_normal(p.n_xi)
    return p.mu + (l_lam @ z) / np.sqrt(w)


def log_normalizer(s: SuffStats) -> float:
    """Log of the exponential-family normalizing constant g of the statistics.

    log g = (nu/2) log|Psi| - (nu n_xi / 2) log 2 - (n_xi n_phi / 2) log 2pi
            - (n_xi / 2) log|V| - log Gamma_{n_xi}(nu / 2),

    evaluated entirely in the log domain; ratios of g values in ancestor
    sampling would overflow in the linear domain.
    """
    n_phi, n_xi = s.n_phi, s.n_xi
    nu = s.chi3
    if nu <= n_xi - 1.0:
        raise DegeneratePosterior(f"chi3 = {nu} too small for the multivariate gamma")
    try:
        lc = _chol(s.chi1, SingularStatistics, "chi1")
    except SingularStatistics:
        raise DegeneratePosterior("chi1 singular in log_normalizer") from None
    logdet_v = -_logdet_from_chol(lc)
    psi = _sym(s.chi2 - s.chi0.T @ _cho_solve(lc, s.chi0))
    l_psi = _chol(psi, DegeneratePosterior, "implied Psi")
    logdet_psi = _logdet_from_chol(l_psi)
    return float(
        0.5 * nu * logdet_psi
        - 0.5 * nu * n_xi * np.log(2.0)
        - 0.5 * n_xi * n_phi * np.log(2.0 * np.pi)
        - 0.5 * n_xi * logdet_v
        - multigammaln(0.5 * nu, n_xi)
    )


# ---------------------------------------------------------------------------
# stacked per-particle statistics
# ---------------------------------------------------------------------------

class SuffStatsStack:
    """Statistics of N particles held as stacked arrays.

    Maintains, next to the raw statistics, the precision inverse
    ``prec = chi1^-1`` and ``logdet_chi1`` through rank-one Sherman-Morrison
    updates, so per-step predictive parameters and log-normalizers cost
    O(n_phi^2) per particle instead of O(n_phi^3). The raw statistics remain
    exact sums; ``prec`` is an accelerator whose agreement with the one-shot
    Cholesky route is covered by tests.
    """

    __slots__ = ("chi0", "chi1", "chi2", "chi3", "prec", "logdet_chi1")

    def __init__(self, chi0, chi1, chi2, chi3, prec, logdet_chi1):
        self.chi0 = chi0
        self.chi1 = chi1
        self.chi2 = chi2
        self.chi3 = chi3
        self.prec = prec
        self.logdet_chi1 = logdet_chi1

    # -- construction -----------------------------------------------------

    @classmethod
    def from_stats(cls, s: SuffStats, n: int) -> "SuffStatsStack":
        lc = _chol(s.chi1, SingularStatistics, "chi1")
        prec1 = _sym(_cho_solve(lc, np.eye(s.n_phi)))
        logdet1 = _logdet_from_chol(lc)
        return cls(
            np.repeat(s.chi0[None], n, axis=0),
            np.repeat(s.chi1[None], n, axis=0),
            np.repeat(s.chi2[None], n, axis=0),
            np.full(n, s.chi3),
            np.repeat(prec1[None], n, axis=0),
            np.full(n, logdet1),
        )

    @classmethod
    def from_params(cls, p: MniwParams, n: int) -> "SuffStatsStack":
        return cls.from_stats(stats_from_params(p), n)

    # -- container protocol -------------------------------------------------

    def __len__(self):
        return self.chi3.shape[0]

    def __getitem__(self, i) -> SuffStats:
        return SuffStats(self.chi0[i], self.chi1[i], self.chi2[i], self.chi3[i])

    @property
    def n_phi(self):
        return self.chi1.shape[-1]

    @property
    def n_xi(self):
        return self.chi2.shape[-1]

    def copy(self) -> "SuffStatsStack":
        return SuffStatsStack(
            self.chi0.copy(), self.chi1.copy(), self.chi2.copy(),
            self.chi3.copy(), self.prec.copy(), self.logdet_chi1.copy(),
        )

    def gather(self, idx) -> "SuffStatsStack":
        """Ancestor resampling of the statistics (copies rows)."""
        return SuffStatsStack(
            self.chi0[idx], self.chi1[idx], self.chi2[idx],
            self.chi3[idx], self.prec[idx], self.logdet_chi1[idx],
        )

    # -- updates ------------------------------------------------------------

    def update(self, phis, xis, prec_phis=None):
        """In-place per-particle measurement update with (phi_i, xi_i) pairs.

        ``prec_phis`` may pass a precomputed prec @ phi product (e.g. from
        :meth:`predictive_params` on the same state) to save one pass.
        """
        u = np.einsum("npq,nq->np", self.prec, phis) if prec_phis is None else prec_phis
        denom = 1.0 + np.einsum("np,np->n", phis, u)
        if np.any(denom <= 0.0) or not np.all(np.isfinite(denom)):
            raise NumericalError("rank-one update denominator not positive")
        self.prec -= u[:, :, None] * (u / denom[:, None])[:, None, :]
        self.logdet_chi1 += np.log(denom)
        self.chi0 += phis[:, :, None] * xis[:, None, :]
        self.chi1 += phis[:, :, None] * phis[:, None, :]
        self.chi2 += xis[:, :, None] * xis[:, None, :]
        self.chi3 += 1.0

    def downdate(self, phi, xi):
        """In-place removal of one shared (phi, xi) pair from every particle."""
        u = np.einsum("npq,q->np", self.prec, phi)
        denom = 1.0 - np.einsum("np,p->n", u, phi)
        self.chi0 -= np.outer(phi, xi)[None]
        self.chi1 -= np.outer(phi, phi)[None]
        self.chi2 -= np.outer(xi, xi)[None]
        self.chi3 -= 1.0
        if np.any(self.chi3 < -1e-9):
            raise NumericalError("chi3 went negative in downdate")
        if np.any(denom <= 1e-12) or not np.all(np.isfinite(denom)):
            # roundoff ate the downdate; rebuild from the exact statistics
            self.refresh()
            return
        self.prec += u[:, :, None] * (u[:, None, :] / denom[:, None, None])
        self.logdet_chi1 += np.log(denom)

    def scale(self, gamma):
        """In-place exponential forgetting with the chi3 floor of :func:`forget`."""
        if not 0.0 < gamma <= 1.0:
            raise InvalidForgettingFactor(f"gamma = {gamma} outside (0, 1]")
        if gamma == 1.0:
            return
        floor = self.n_xi + self.n_phi + 1.0 + NU_FLOOR_MARGIN
        self.chi0 *= gamma
        self.chi1 *= gamma
        self.chi2 *= gamma
        self.chi3 = np.maximum(gamma * self.chi3, np.minimum(self.chi3, floor))
        self.prec /= gamma
        self.logdet_chi1 += self.n_phi * np.log(gamma)

    def add_stats(self, s: SuffStats):
        """In-place addition of one shared statistics block (rank-n change)."""
        self.chi0 += s.chi0[None]
        self.chi1 += s.chi1[None]
        self.chi2 += s.chi2[None]
        self.chi3 += s.chi3
        self.refresh()

    def refresh(self):
        """Recompute prec/logdet from the raw chi1 (slow path)."""
        chi1 = 0.5 * (self.chi1 + np.transpose(self.chi1, (0, 2, 1)))
        try:
            l = np.linalg.cholesky(chi1)
        except np.linalg.LinAlgError:
            raise SingularStatistics("stacked chi1 not positive definite") from None
        eye = np.broadcast_to(np.eye(self.n_phi), chi1.shape)
        self.prec = np.linalg.solve(chi1, eye.copy())
        self.logdet_chi1 = 2.0 * np.log(
            np.diagonal(l, axis1=1, axis2=2)
        ).sum(axis=1)

    # -- queries ------------------------------------------------------------

    def predictive_params(self, phis, return_prec_phis=False):
        """Per-particle Student-t predictive at per-particle basis vectors.

        Returns (rho (N,), mu (N, n_xi), Lambda (N, n_xi, n_xi), kappa (N,));
        with ``return_prec_phis`` the prec @ phi product is appended for
        reuse in the subsequent :meth:`update`.
        """
        u = np.einsum("npq,nq->np", self.prec, phis)
        quad = np.einsum("np,np->n", phis, u)
        zero_phi = ~np.any(phis != 0.0, axis=1)
        if np.any(quad[~zero_phi] <= 0.0) or not np.all(np.isfinite(quad)):
            raise NumericalError("phi^T Vbar phi <= 0 in stacked predictive")
        rho = self.chi3 - self.n_xi + 1.0
        if np.any(rho <= 0.0):
            raise DegeneratePosterior("stacked predictive dof not positive")
        mu = np.einsum("npk,np->nk", self.chi0, u)
        m_t = np.einsum("npq,nqk->npk", self.prec, self.chi0)
        psi = self.chi2 - np.einsum("npk,npl->nkl", self.chi0, m_t)
        psi = 0.5 * (psi + np.transpose(psi, (0, 2, 1)))
        # (kappa + 1)/(kappa rho) as (1 + quad)/rho: exact at phi = 0
        lam = ((1.0 + quad) / rho)[:, None, None] * psi
        with np.errstate(divide="ignore"):
            kappa = np.where(quad > 0.0, 1.0 / np.where(quad > 0.0, quad, 1.0), np.inf)
        if return_prec_phis:
            return rho, mu, lam, kappa, u
        return rho, mu, lam, kappa

    def log_normalizer(self):
        """Per-particle log g, using the maintained logdet of chi1."""
        n_phi, n_xi = self.n_phi, self.n_xi
        nu = self.chi3
        m_t = np.einsum("npq,nqk->npk", self.prec, self.chi0)
        psi = self.chi2 - np.einsum("npk,npl->nkl", self.chi0, m_t)
        psi = 0.5 * (psi + np.transpose(psi, (0, 2, 1)))
        sign, logdet_psi = np.linalg.slogdet(psi)
        if np.any(sign <= 0):
            raise DegeneratePosterior("implied Psi not positive definite in stack")
        return (
            0.5 * nu * logdet_psi
            - 0.5 * nu * n_xi * np.log(2.0)
            - 0.5 * n_xi * n_phi * np.log(2.0 * np.pi)
            + 0.5 * n_xi * self.logdet_chi1
            - multigammaln(0.5 * nu, n_xi)
        )

    def weighted_mean(self, weights) -> SuffStats:
        """Weight-averaged statistics (the posterior-summary convention)."""
        w = np.asarray(weights, dtype=float)
        return SuffStats(
            np.einsum("n,npk->pk", w, self.chi0),
            _sym(np.einsum("n,npq->pq", w, self.chi1)),
            _sym(np.einsum("n,nkl->kl", w, self.chi2)),
            float(w @ self.chi3),
        )


def sample_student_t_batch(rho, mu, lam, rng: np.random.Generator):
    """Vectorized scale-mixture draws, one per row of mu."""
    try:
        l_lam = np.linalg.cholesky(lam)
    except np.linalg.LinAlgError:
        raise NumericalError("stacked Lambda not positive definite") from None
    w = rng.chisquare(rho) / rho
    z = rng.standard_normal(mu.shape)
    return mu + np.einsum("nij,nj->ni", l_lam, z) / np.sqrt(w)[:, None]
