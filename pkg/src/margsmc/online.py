"""Marginalized auxiliary particle filter for joint online inference and learning.

Each particle carries a state, an interface value, and its own sufficient
statistics of the weight/noise posterior; the weight parameters themselves
are integrated out analytically. One :func:`step` performs, in order:
statistics forgetting, auxiliary prediction, first-stage weighting, ancestor
resampling, state propagation, a Student-t interface draw from the
ancestor's predictive, the statistics measurement update, and the
second-stage weight update, all in the log domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import conjugate
from .conjugate import MniwParams, SuffStats, SuffStatsStack
from .errors import InvalidForgettingFactor, NumericalError, ParticleCollapse
from .ssm import ModelSpec, gaussian_logpdf, psd_sqrt

_RESAMPLERS = ("multinomial", "systematic")


@dataclass(frozen=True)
class OnlineConfig:
    """Filter configuration: particle count, forgetting, resampler, seed."""

    n_particles: int
    gamma: float = 0.999
    resampler: str = "multinomial"
    seed: int | None = None

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be at least 1")
        if not 0.0 < self.gamma <= 1.0:
            raise InvalidForgettingFactor(f"gamma = {self.gamma} outside (0, 1]")
        if self.resampler not in _RESAMPLERS:
            raise ValueError(f"resampler must be one of {_RESAMPLERS}")


@dataclass
class ParticleEnsemble:
    """Weighted particle set at one time index.

    ``stats[i]`` is particle i's sufficient statistics; ``u_prev`` records
    the input at the ensemble's time index (it drives the next transition).
    """

    states: np.ndarray
    xis: np.ndarray
    log_weights: np.ndarray
    stats: SuffStatsStack
    ancestors: np.ndarray
    t: int
    u_prev: np.ndarray

    @property
    def n(self):
        return self.states.shape[0]

    def weights(self):
        return np.exp(self.log_weights)


def ess(log_weights) -> float:
    """Effective sample size of normalized log weights, in [1, N]."""
    w = np.exp(log_weights - logsumexp(log_weights))
    return float(1.0 / np.sum(w**2))


def resample_categorical(weights, n: int, mode: str, rng: np.random.Generator) -> np.ndarray:
    """Draw n ancestor indices from normalized weights.

    ``multinomial`` draws i.i.d. categorical indices; ``systematic`` uses a
    single uniform offset with stratified positions (lower variance).
    """
    w = np.asarray(weights, dtype=float)
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ParticleCollapse("degenerate weights in resampling", {"weights": w})
    total = w.sum()
    if total <= 0:
        raise ParticleCollapse("all resampling weights are zero", {"weights": w})
    cum = np.cumsum(w / total)
    cum[-1] = 1.0
    if mode == "multinomial":
        u = rng.random(n)
    elif mode == "systematic":
        u = (rng.random() + np.arange(n)) / n
    else:
        raise ValueError(f"unknown resampler {mode!r}")
    return np.searchsorted(cum, u, side="left").astype(np.intp)


def init_ensemble(
    spec: ModelSpec,
    prior: MniwParams,
    cfg: OnlineConfig,
    rng: np.random.Generator,
    u0=None,
) -> ParticleEnsemble:
    """Initial ensemble: states from the init spec, interfaces from the prior
    predictive (unless pinned), uniform weights, identical prior statistics.

    ``prior`` may also be raw SuffStats, which admits noninformative
    configurations that have no proper parameter representation."""
    n = cfg.n_particles
    u0 = np.zeros(spec.n_u) if u0 is None else np.asarray(u0, dtype=float)
    sqrt_cov = psd_sqrt(spec.init.x0_cov)
    states = spec.init.x0_mean + rng.standard_normal((n, spec.n_x)) @ sqrt_cov.T
    stats = SuffStatsStack.from_stats(conjugate.as_stats(prior), n)
    if spec.init.xi0 is not None:
        xis = np.repeat(spec.init.xi0[None], n, axis=0)
    else:
        phis = spec.phi(states, np.repeat(u0[None], n, axis=0))
        rho, mu, lam, _ = stats.predictive_params(phis)
        xis = conjugate.sample_student_t_batch(rho, mu, lam, rng)
    return ParticleEnsemble(
        states=states,
        xis=xis,
        log_weights=np.full(n, -np.log(n)),
        stats=stats,
        ancestors=np.arange(n, dtype=np.intp),
        t=0,
        u_prev=u0,
    )


def _normalize_log(logw, what, t):
    m = np.max(logw)
    if not np.isfinite(m) or np.isnan(logw).any():
        raise ParticleCollapse(
            f"{what} collapsed at t = {t}",
            {
                "t": t,
                "n_finite": int(np.isfinite(logw).sum()),
                "max_log_weight": float(m),
            },
        )
    return logw - (m + np.log(np.sum(np.exp(logw - m))))


def step(
    ens: ParticleEnsemble,
    y,
    u,
    spec: ModelSpec,
    cfg: OnlineConfig,
    rng: np.random.Generator,
) -> ParticleEnsemble:
    """Advance the ensemble by one measurement.

    The transition uses the input stored at the previous index
    (``ens.u_prev``); the measurement, features, and the returned ensemble
    use ``u``.
    """
    y = np.asarray(y, dtype=float)
    u = np.zeros(spec.n_u) if u is None else np.asarray(u, dtype=float)
    n = ens.n
    u_prev_b = np.repeat(ens.u_prev[None], n, axis=0)
    u_b = np.repeat(u[None], n, axis=0)

    stats = ens.stats.copy()
    stats.scale(cfg.gamma)

    aux = np.asarray(spec.f(ens.states, ens.xis, u_prev_b))
    log_meas_aux = gaussian_logpdf(y - np.asarray(spec.h(aux, u_b)), spec.chol_sigma_e)
    log_lambda = _normalize_log(ens.log_weights + log_meas_aux, "first-stage weights", ens.t + 1)

    anc = resample_categorical(np.exp(log_lambda), n, cfg.resampler, rng)

    mean_next = np.asarray(spec.f(ens.states[anc], ens.xis[anc], u_prev_b))
    noise = rng.standard_normal((n, spec.n_x)) @ spec.chol_sigma_omega.T
    states = mean_next + noise

    phis = spec.phi(states, u_b)
    stats = stats.gather(anc)
    rho, mu, lam, _, prec_phis = stats.predictive_params(phis, return_prec_phis=True)
    xis = conjugate.sample_student_t_batch(rho, mu, lam, rng)
    stats.update(phis, xis, prec_phis=prec_phis)

    log_meas = gaussian_logpdf(y - np.asarray(spec.h(states, u_b)), spec.chol_sigma_e)
    log_w = _normalize_log(log_meas - log_meas_aux[anc], "second-stage weights", ens.t + 1)

    if not (np.all(np.isfinite(states)) and np.all(np.isfinite(xis))):
        raise NumericalError(f"non-finite particle values at t = {ens.t + 1}")
    return ParticleEnsemble(
        states=states,
        xis=xis,
        log_weights=log_w,
        stats=stats,
        ancestors=anc,
        t=ens.t + 1,
        u_prev=u,
    )


@dataclass(frozen=True)
class PosteriorSummary:
    """Weighted posterior moments and the averaged-parameter summary."""

    state_mean: np.ndarray
    state_cov: np.ndarray
    xi_mean: np.ndarray
    xi_cov: np.ndarray
    params: MniwParams
    stats: SuffStats


def posterior_summary(ens: ParticleEnsemble) -> PosteriorSummary:
    """Weighted moments of states and interfaces plus averaged parameters.

    The parameter summary applies params_from_stats to the weight-averaged
    statistics (a documented convention, not a mixture identity).
    """
    w = ens.weights()
    sm = w @ ens.states
    xm = w @ ens.xis
    ds = ens.states - sm
    dx = ens.xis - xm
    s_cov = np.einsum("n,ni,nj->ij", w, ds, ds)
    x_cov = np.einsum("n,ni,nj->ij", w, dx, dx)
    mean_stats = ens.stats.weighted_mean(w)
    return PosteriorSummary(sm, s_cov, xm, x_cov, conjugate.params_from_stats(mean_stats), mean_stats)


@dataclass
class FilterResult:
    """Per-step filter summaries plus (optionally) full particle histories."""

    state_mean: np.ndarray
    state_std: np.ndarray
    xi_mean: np.ndarray
    xi_std: np.ndarray
    ess: np.ndarray
    ensemble: ParticleEnsemble
    states_hist: np.ndarray | None = None
    xis_hist: np.ndarray | None = None
    anc_hist: np.ndarray | None = None
    summaries: list = field(default_factory=list)

    def sample_trajectory(self, rng: np.random.Generator):
        """Draw one (x, xi) path from the filter by ancestor tracing."""
        if self.states_hist is None:
            raise ValueError("filter was run without record_history=True")
        t_len = self.states_hist.shape[0]
        xs = np.empty((t_len, self.states_hist.shape[2]))
        xis = np.empty((t_len, self.xis_hist.shape[2]))
        j = int(resample_categorical(self.ensemble.weights(), 1, "multinomial", rng)[0])
        for t in range(t_len - 1, -1, -1):
            xs[t] = self.states_hist[t, j]
            xis[t] = self.xis_hist[t, j]
            if t > 0:
                j = int(self.anc_hist[t - 1, j])
        return xs, xis


def run_filter(
    ys,
    us,
    spec: ModelSpec,
    prior: MniwParams,
    cfg: OnlineConfig,
    rng: np.random.Generator,
    record_history: bool = False,
    callback=None,
) -> FilterResult:
    """Run the filter over measurements y_{0:T} with inputs u_{0:T}.

    Following the recursion, y_0 only anchors the initial draw through the
    init spec; weighting starts at t = 1. ``callback(t, ensemble)`` is
    invoked after every step (and once at t = 0).
    """
    ys = np.asarray(ys, dtype=float).reshape(len(ys), spec.n_y)
    us = np.asarray(us, dtype=float).reshape(len(ys), spec.n_u)
    t_len = len(ys)
    ens = init_ensemble(spec, prior, cfg, rng, u0=us[0])

    state_mean = np.empty((t_len, spec.n_x))
    state_std = np.empty((t_len, spec.n_x))
    xi_mean = np.empty((t_len, spec.n_xi))
    xi_std = np.empty((t_len, spec.n_xi))
    ess_t = np.empty(t_len)
    hist_s = np.empty((t_len, cfg.n_particles, spec.n_x)) if record_history else None
    hist_x = np.empty((t_len, cfg.n_particles, spec.n_xi)) if record_history else None
    hist_a = np.empty((t_len - 1, cfg.n_particles), dtype=np.intp) if record_history else None

    def _record(t, e):
        w = e.weights()
        sm = w @ e.states
        xm = w @ e.xis
        state_mean[t] = sm
        state_std[t] = np.sqrt(np.maximum(w @ (e.states - sm) ** 2, 0.0))
        xi_mean[t] = xm
        xi_std[t] = np.sqrt(np.maximum(w @ (e.xis - xm) ** 2, 0.0))
        ess_t[t] = ess(e.log_weights)
        if record_history:
            hist_s[t] = e.states
            hist_x[t] = e.xis
            if t > 0:
                hist_a[t - 1] = e.ancestors
        if callback is not None:
            callback(t, e)

    _record(0, ens)
    for t in range(1, t_len):
        ens = step(ens, ys[t], us[t], spec, cfg, rng)
        _record(t, ens)

    return FilterResult(
        state_mean=state_mean,
        state_std=state_std,
        xi_mean=xi_mean,
        xi_std=xi_std,
        ess=ess_t,
        ensemble=ens,
        states_hist=hist_s,
        xis_hist=hist_x,
        anc_hist=hist_a,
    )
