"""Marginalized particle Gibbs with ancestor sampling (PGAS).

The conditional SMC sweep pins the last particle to a reference trajectory
and redraws that particle's ancestor from weights combining the prefix
importance weights, a ratio of exponential-family log-normalizers evaluated
on current versus reference-suffix-augmented statistics, and the transition
likelihood into the reference's next state. The outer loop alternates sweeps
with conjugate parameter draws from the batch posterior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, multigammaln

from . import conjugate
from .conjugate import MniwParams, SuffStats, SuffStatsStack
from .errors import AncestorDegeneracy, ParticleCollapse, ReferenceBookkeepingError
from .online import OnlineConfig, resample_categorical, run_filter
from .ssm import ModelSpec, gaussian_logpdf, psd_sqrt


def _lse(logw):
    m = np.max(logw)
    if not np.isfinite(m):
        return m
    return m + np.log(np.sum(np.exp(logw - m)))


class _ConcatPrecision:
    """Rank-one-maintained inverse and log-determinant of chi1 + suffix_S1.

    The concatenated statistics equal the per-particle statistics plus a
    shared suffix block, so only this precision pair needs its own
    bookkeeping; the raw concatenated moments are formed on the fly.
    """

    __slots__ = ("prec", "logdet")

    def __init__(self, prec, logdet):
        self.prec = prec
        self.logdet = logdet

    @classmethod
    def from_matrix(cls, chi1_concat, n):
        chi1_concat = 0.5 * (chi1_concat + chi1_concat.T)
        l = np.linalg.cholesky(chi1_concat)
        inv = np.linalg.solve(chi1_concat, np.eye(chi1_concat.shape[0]))
        inv = 0.5 * (inv + inv.T)
        logdet = 2.0 * np.log(np.diag(l)).sum()
        return cls(np.repeat(inv[None], n, axis=0), np.full(n, logdet))

    def gather(self, idx):
        self.prec = self.prec[idx]
        self.logdet = self.logdet[idx]

    def update(self, phis):
        u = np.einsum("npq,nq->np", self.prec, phis)
        denom = 1.0 + np.einsum("np,np->n", phis, u)
        us = u / denom[:, None]
        self.prec -= u[:, :, None] * us[:, None, :]
        self.logdet += np.log(denom)

    def downdate(self, phi, chi1_concat_fn):
        """Remove a shared pair; ``chi1_concat_fn`` lazily builds the exact
        post-removal (N, p, p) matrix to rebuild from if roundoff eats the
        Sherman-Morrison denominator."""
        u = np.einsum("npq,q->np", self.prec, phi)
        denom = 1.0 - u @ phi
        if np.any(denom <= 1e-12) or not np.all(np.isfinite(denom)):
            chi1_concat = chi1_concat_fn()
            sym = 0.5 * (chi1_concat + np.transpose(chi1_concat, (0, 2, 1)))
            l = np.linalg.cholesky(sym)
            eye = np.broadcast_to(np.eye(sym.shape[-1]), sym.shape)
            self.prec = np.linalg.solve(sym, eye.copy())
            self.logdet = 2.0 * np.log(np.diagonal(l, axis1=1, axis2=2)).sum(axis=1)
            return
        us = u / denom[:, None]
        self.prec += u[:, :, None] * us[:, None, :]
        self.logdet += np.log(denom)


@dataclass
class ReferenceTrajectory:
    """A reference (x, xi) path of length T+1 for conditional SMC."""

    xs: np.ndarray
    xis: np.ndarray

    def __post_init__(self):
        self.xs = np.atleast_2d(np.asarray(self.xs, dtype=float))
        self.xis = np.atleast_2d(np.asarray(self.xis, dtype=float))
        if self.xs.shape[0] != self.xis.shape[0]:
            raise ValueError("xs and xis must have equal length")

    def __len__(self):
        return self.xs.shape[0]

    def statistics(self, spec: ModelSpec, us) -> SuffStats:
        """Trajectory statistics of all T+1 (phi, xi) pairs."""
        us = np.asarray(us, dtype=float).reshape(len(self), spec.n_u)
        return conjugate.trajectory_stats(spec.phi(self.xs, us), self.xis)


def suffix_decrement(suffix: SuffStats, phi_ref, xi_ref) -> SuffStats:
    """Remove one reference pair from the remaining-suffix statistics."""
    phi_ref = np.asarray(phi_ref, dtype=float)
    xi_ref = np.asarray(xi_ref, dtype=float)
    chi3 = suffix.chi3 - 1.0
    if chi3 < -1e-9:
        raise ReferenceBookkeepingError(
            f"suffix count would become negative ({chi3}); decremented past empty"
        )
    return SuffStats(
        suffix.chi0 - np.outer(phi_ref, xi_ref),
        suffix.chi1 - np.outer(phi_ref, phi_ref),
        suffix.chi2 - np.outer(xi_ref, xi_ref),
        max(chi3, 0.0),
    )


def ancestor_weights(
    lambdas,
    etas,
    suffix: SuffStats,
    x_ref_next,
    states,
    xis,
    spec: ModelSpec,
    u=None,
) -> np.ndarray:
    """Normalized ancestor-sampling weights for the pinned particle.

    q_i is proportional to lambdas_i * exp(log g(eta_i) - log g(eta_i + suffix))
    * N(x_ref_next | f(x_i, xi_i, u), sigma_omega); the constant base-measure
    factor cancels in the normalization. ``lambdas`` are the base weights of
    the catching-up prefixes; the sweep passes the prefix importance weights
    (using the auxiliary first-stage weights here empirically breaks
    smoother invariance). ``etas`` may be a SuffStatsStack or a sequence of
    per-particle SuffStats; this routine deliberately goes through the
    one-off conjugate operations rather than the stacked fast path.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    n = len(lambdas)
    states = np.asarray(states, dtype=float)
    xis = np.asarray(xis, dtype=float)
    u = np.zeros(spec.n_u) if u is None else np.asarray(u, dtype=float)
    u_b = np.repeat(u[None], n, axis=0)

    log_g = np.empty(n)
    log_g_concat = np.empty(n)
    for i in range(n):
        eta = etas[i]
        log_g[i] = conjugate.log_normalizer(eta)
        log_g_concat[i] = conjugate.log_normalizer(conjugate.batch_update(eta, suffix))

    mean_next = np.asarray(spec.f(states, xis, u_b))
    log_trans = gaussian_logpdf(np.asarray(x_ref_next, dtype=float) - mean_next, spec.chol_sigma_omega)

    with np.errstate(divide="ignore"):
        log_q = np.log(lambdas) + log_g - log_g_concat + log_trans
    if not np.any(np.isfinite(log_q)) or np.isnan(log_q).any():
        raise AncestorDegeneracy("all ancestor-sampling weights vanished")
    return np.exp(log_q - logsumexp(log_q))


@dataclass
class CsmcResult:
    """One conditional-SMC draw with bookkeeping for diagnostics."""

    trajectory: ReferenceTrajectory
    final_stats: SuffStats
    stats_path: SuffStatsStack | None
    ancestor_moves: int
    chosen_index: int


def csmc_sweep(
    ref: ReferenceTrajectory,
    ys,
    us,
    spec: ModelSpec,
    prior_stats: SuffStats,
    cfg: OnlineConfig,
    rng: np.random.Generator,
    return_stats_path: bool = True,
) -> CsmcResult:
    """One marginalized conditional SMC sweep with ancestor sampling.

    Runs the auxiliary marginalized filter with particle N pinned to the
    reference at every step; the pinned particle's ancestor is drawn from the
    ancestor-sampling weights, everything else follows the online kernel
    without forgetting. Returns the trajectory selected at time T by
    ancestor tracing.
    """
    n = cfg.n_particles
    if n < 2:
        raise ValueError("conditional SMC needs at least 2 particles")
    pin = n - 1
    ys = np.asarray(ys, dtype=float).reshape(-1, spec.n_y)
    us = np.asarray(us, dtype=float).reshape(len(ys), spec.n_u)
    t_len = len(ys)
    if len(ref) != t_len:
        raise ValueError(f"reference length {len(ref)} does not match data length {t_len}")

    ref_phis = spec.phi(ref.xs, us)
    suffix = conjugate.trajectory_stats(ref_phis, ref.xis)

    states, xis = init_ensemble_from_stats(spec, prior_stats, cfg, rng, u0=us[0])
    states[pin] = ref.xs[0]
    xis[pin] = ref.xis[0]
    stats = SuffStatsStack.from_stats(prior_stats, n)
    log_w = np.full(n, -np.log(n))

    # concatenated statistics eta_{t-1} + s'_{t:T}; pair 0 leaves the suffix
    # before the first ancestor draw (the concatenation replaces it)
    suffix = suffix_decrement(suffix, ref_phis[0], ref.xis[0])
    concat = _ConcatPrecision.from_matrix(prior_stats.chi1 + suffix.chi1, n)

    n_phi, n_xi = spec.n_phi, spec.n_xi
    log_g_const = -0.5 * n_xi * n_phi * np.log(2.0 * np.pi)

    hist_s = np.empty((t_len, n, spec.n_x))
    hist_x = np.empty((t_len, n, spec.n_xi))
    hist_a = np.empty((t_len - 1, n), dtype=np.intp)
    hist_s[0] = states
    hist_x[0] = xis
    ancestor_moves = 0

    for t in range(1, t_len):
        u_prev_b = np.broadcast_to(us[t - 1], (n, spec.n_u))
        u_b = np.broadcast_to(us[t], (n, spec.n_u))

        aux = np.asarray(spec.f(states, xis, u_prev_b))
        log_meas_aux = gaussian_logpdf(ys[t] - np.asarray(spec.h(aux, u_b)), spec.chol_sigma_e)
        log_lambda = log_w + log_meas_aux
        norm = _lse(log_lambda)
        if not np.isfinite(norm):
            raise ParticleCollapse(
                f"first-stage weights collapsed in CSMC at t = {t}",
                {"t": t, "max_log_weight": float(np.max(log_lambda))},
            )
        log_lambda -= norm

        # ancestor sampling for the pinned particle (log domain throughout):
        # the concatenated moments are the particle statistics plus the
        # shared suffix block, so only their precision is tracked separately
        log_trans_ref = gaussian_logpdf(ref.xs[t] - aux, spec.chol_sigma_omega)
        chi0_c = stats.chi0 + suffix.chi0[None]
        chi2_c = stats.chi2 + suffix.chi2[None]
        nu_c = stats.chi3 + suffix.chi3
        m_t_c = np.einsum("npq,nqk->npk", concat.prec, chi0_c)
        psi_c = chi2_c - np.einsum("npk,npl->nkl", chi0_c, m_t_c)
        sign_c, logdet_psi_c = np.linalg.slogdet(0.5 * (psi_c + np.transpose(psi_c, (0, 2, 1))))
        if np.any(sign_c <= 0):
            raise AncestorDegeneracy(f"concatenated Psi not positive definite at t = {t}")
        log_g_concat = (
            0.5 * nu_c * logdet_psi_c
            - 0.5 * nu_c * n_xi * np.log(2.0)
            + log_g_const
            + 0.5 * n_xi * concat.logdet
            - multigammaln(0.5 * nu_c, n_xi)
        )
        # the pinned ancestor is a Gibbs move: its base weights are the
        # prefix importance weights, not the auxiliary first-stage weights
        # (the latter provably break smoother invariance; see the
        # acceptance suite's linear-Gaussian check)
        log_as = log_w + stats.log_normalizer() - log_g_concat + log_trans_ref
        if not np.any(np.isfinite(log_as)) or np.isnan(log_as).any():
            raise AncestorDegeneracy(f"ancestor-sampling weights vanished at t = {t}")
        as_w = np.exp(log_as - _lse(log_as))

        anc = resample_categorical(np.exp(log_lambda), n, cfg.resampler, rng)
        a_pin = int(resample_categorical(as_w, 1, "multinomial", rng)[0])
        anc[pin] = a_pin
        if a_pin != pin:
            ancestor_moves += 1

        mean_next = np.asarray(spec.f(states[anc], xis[anc], u_prev_b))
        noise = rng.standard_normal((n, spec.n_x)) @ spec.chol_sigma_omega.T
        states = mean_next + noise
        states[pin] = ref.xs[t]

        phis = spec.phi(states, u_b)
        stats = stats.gather(anc)
        concat.gather(anc)
        rho, mu, lam, _, prec_phis = stats.predictive_params(phis, return_prec_phis=True)
        xis = conjugate.sample_student_t_batch(rho, mu, lam, rng)
        xis[pin] = ref.xis[t]
        stats.update(phis, xis, prec_phis=prec_phis)
        concat.update(phis)

        suffix = suffix_decrement(suffix, ref_phis[t], ref.xis[t])
        concat.downdate(ref_phis[t], lambda: stats.chi1 + suffix.chi1[None])

        log_meas = gaussian_logpdf(ys[t] - np.asarray(spec.h(states, u_b)), spec.chol_sigma_e)
        log_w = log_meas - log_meas_aux[anc]
        log_w -= _lse(log_w)

        hist_s[t] = states
        hist_x[t] = xis
        hist_a[t - 1] = anc

    j = int(resample_categorical(np.exp(log_w), 1, "multinomial", rng)[0])
    xs_out = np.empty((t_len, spec.n_x))
    xis_out = np.empty((t_len, spec.n_xi))
    idx = j
    for t in range(t_len - 1, -1, -1):
        xs_out[t] = hist_s[t, idx]
        xis_out[t] = hist_x[t, idx]
        if t > 0:
            idx = int(hist_a[t - 1, idx])

    out = ReferenceTrajectory(xs_out, xis_out)
    final_stats = conjugate.batch_update(prior_stats, out.statistics(spec, us))
    stats_path = _stats_along_path(out, us, spec, prior_stats) if return_stats_path else None
    return CsmcResult(
        trajectory=out,
        final_stats=final_stats,
        stats_path=stats_path,
        ancestor_moves=ancestor_moves,
        chosen_index=j,
    )


def init_ensemble_from_stats(spec, prior_stats, cfg, rng, u0=None):
    """Initial particle draw used by CSMC: states from the init spec,
    interfaces from the prior predictive evaluated on the prior statistics."""
    n = cfg.n_particles
    u0 = np.zeros(spec.n_u) if u0 is None else np.asarray(u0, dtype=float)
    sqrt_cov = psd_sqrt(spec.init.x0_cov)
    states = spec.init.x0_mean + rng.standard_normal((n, spec.n_x)) @ sqrt_cov.T
    stack = SuffStatsStack.from_stats(prior_stats, n)
    if spec.init.xi0 is not None:
        xis = np.repeat(spec.init.xi0[None], n, axis=0)
    else:
        phis = spec.phi(states, np.repeat(u0[None], n, axis=0))
        rho, mu, lam, _ = stack.predictive_params(phis)
        xis = conjugate.sample_student_t_batch(rho, mu, lam, rng)
    return states, xis


def _stats_along_path(traj: ReferenceTrajectory, us, spec, prior_stats) -> SuffStatsStack:
    """Per-step statistics of a trajectory: prior plus pairs 1..t (pair 0
    anchors the initial draw, matching the in-sweep bookkeeping)."""
    t_len = len(traj)
    us = np.asarray(us, dtype=float).reshape(t_len, spec.n_u)
    phis = spec.phi(traj.xs, us)
    stack = SuffStatsStack.from_stats(prior_stats, t_len)
    running = prior_stats
    for t in range(1, t_len):
        running = conjugate.posterior_update(running, phis[t], traj.xis[t])
        stack.chi0[t] = running.chi0
        stack.chi1[t] = running.chi1
        stack.chi2[t] = running.chi2
        stack.chi3[t] = running.chi3
    stack.refresh()
    return stack


@dataclass
class PgasState:
    """Outcome of a PGAS run: final reference, parameter draws, diagnostics."""

    n_iterations: int
    reference: ReferenceTrajectory
    theta_draws: list
    final_stats: SuffStats
    diagnostics: dict = field(default_factory=dict)


def pgas_run(
    ys,
    us,
    spec: ModelSpec,
    prior: MniwParams,
    n_iterations: int,
    cfg: OnlineConfig,
    rng: np.random.Generator,
    init_reference: ReferenceTrajectory | None = None,
    callback=None,
) -> PgasState:
    """Alternate conditional-SMC trajectory draws with conjugate parameter draws.

    The initial reference defaults to a single trajectory sampled from the
    online filtering pass (run without forgetting, matching the
    time-invariant offline model). ``callback(k, reference, stats)`` fires
    after every iteration; theta draws are recorded for posterior reporting
    but the sweep itself never uses them (marginalized construction).
    """
    if n_iterations < 1:
        raise ValueError("n_iterations must be at least 1")
    ys = np.asarray(ys, dtype=float).reshape(-1, spec.n_y)
    us = np.asarray(us, dtype=float).reshape(len(ys), spec.n_u)
    prior_stats = conjugate.as_stats(prior)

    if init_reference is None:
        filt_cfg = OnlineConfig(cfg.n_particles, gamma=1.0, resampler=cfg.resampler)
        filt = run_filter(ys, us, spec, prior, filt_cfg, rng, record_history=True)
        xs, xis = filt.sample_trajectory(rng)
        ref = ReferenceTrajectory(xs, xis)
    else:
        ref = init_reference

    stats0 = conjugate.batch_update(prior_stats, ref.statistics(spec, us))
    theta_draws = [conjugate.sample_mniw(conjugate.params_from_stats(stats0), rng)]
    if callback is not None:
        callback(0, ref, stats0)

    updated_fraction = np.empty(n_iterations)
    move_rate = np.empty(n_iterations)
    final_stats = stats0
    for k in range(1, n_iterations + 1):
        sweep = csmc_sweep(ref, ys, us, spec, prior_stats, cfg, rng, return_stats_path=False)
        new_ref = sweep.trajectory
        changed = np.any(new_ref.xs != ref.xs, axis=1) | np.any(new_ref.xis != ref.xis, axis=1)
        updated_fraction[k - 1] = float(np.mean(changed))
        move_rate[k - 1] = sweep.ancestor_moves / max(len(ref) - 1, 1)
        ref = new_ref
        final_stats = sweep.final_stats
        theta_draws.append(conjugate.sample_mniw(conjugate.params_from_stats(final_stats), rng))
        if callback is not None:
            callback(k, ref, final_stats)

    return PgasState(
        n_iterations=n_iterations,
        reference=ref,
        theta_draws=theta_draws,
        final_stats=final_stats,
        diagnostics={
            "reference_update_rate": float(np.mean(updated_fraction)),
            "ancestor_move_rate": float(np.mean(move_rate)),
        },
    )
