"""Simulation testbeds and the positioning-benchmark data loader.

Three systems exercise the library end to end: a single-mass oscillator with
an unknown nonlinear spring/damper force, a single-track lateral vehicle
model with unknown tire-friction curves, and an electro-mechanical
positioning system (EMPS) whose velocity-dependent resistance force is
learned from benchmark data. Simulators integrate the true continuous
dynamics with RK4 and add discrete-time process noise; the matching
inference models freeze the interface variable across one RK4 step.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import basis as basis_mod
from .conjugate import MniwParams, SuffStats
from .errors import DomainError, FormatError, NumericalError, ParseError
from .ssm import InitSpec, ModelSpec, rk4_step

logger = logging.getLogger(__name__)


def _zero_mean_prior(v0, iw_scale, nu, n_xi):
    """Prior over weights/noise with zero mean, given column covariance.

    A requested nu at or below n_xi + 1 has no proper parameter form (the
    inverse-Wishart mean does not exist); it is accepted as raw statistics
    with a warning, relying on data (offline) or the forgetting floor
    (online) to make the posterior proper.
    """
    n_phi = v0.shape[0]
    psi = float(iw_scale) * np.eye(n_xi)
    nu = float(nu)
    if nu > n_xi + 1:
        return MniwParams(np.zeros((n_xi, n_phi)), v0, psi, nu)
    logger.warning(
        "prior nu = %g is at or below n_xi + 1 = %d; using the noninformative "
        "statistics form", nu, n_xi + 1,
    )
    chi1 = np.diag(1.0 / np.diag(v0)) if np.count_nonzero(v0 - np.diag(np.diag(v0))) == 0 else np.linalg.inv(v0)
    return SuffStats(np.zeros((n_phi, n_xi)), chi1, psi, nu)


@dataclass
class SimResult:
    """Ground-truth trajectory bundle from a simulator."""

    xs: np.ndarray
    us: np.ndarray
    ys: np.ndarray
    xi_true: np.ndarray


@dataclass
class CaseStudy:
    """Everything an experiment needs: model, prior, data, and truth hooks."""

    name: str
    model: ModelSpec
    prior: MniwParams
    ys: np.ndarray
    us: np.ndarray
    dt: float
    truth_states: np.ndarray | None = None
    truth_xis: np.ndarray | None = None
    grid_bounds: tuple | None = None
    truth_fn: object = None
    extras: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# single-mass oscillator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OscillatorConfig:
    """Mass on a nonlinear spring and saturating damper, driven by force steps.

    The numeric defaults are this repository's reference values; they were
    chosen to give stable, well-excited trajectories inside the basis domain.
    """

    m: float = 1.0
    c1: float = 1.0
    c2: float = 0.008
    d1: float = 1.5
    d2: float = 0.3
    dt: float = 0.02
    duration: float = 15.0
    force_steps: tuple = (
        (0.0, 0.8), (2.2, -1.8), (3.6, 3.0), (5.0, -4.5), (6.3, 5.5), (7.6, -6.5),
        (8.9, 7.5), (10.2, -8.0), (11.4, 8.5), (12.6, -7.0), (13.8, 6.0),
    )
    sigma_omega: tuple = ((4e-6, 0.0), (0.0, 4e-3))
    sigma_e: tuple = ((1e-4,),)
    x0_mean: tuple = (0.0, 0.0)
    x0_cov: tuple = ((1e-6, 0.0), (0.0, 1e-6))

    def __post_init__(self):
        if self.m <= 0:
            raise ValueError("mass must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    def force(self, t):
        """Piecewise-constant external force at time(s) t."""
        times = np.array([s[0] for s in self.force_steps])
        values = np.array([s[1] for s in self.force_steps])
        idx = np.clip(np.searchsorted(times, np.asarray(t, dtype=float), side="right") - 1, 0, None)
        return values[idx]


def oscillator_target(s, sdot, cfg: OscillatorConfig):
    """True combined spring and damper force.

    F_s = c1 s + c2 s^3; F_d = d1 sdot / (1 + d2 sdot tanh(sdot)).
    """
    s = np.asarray(s, dtype=float)
    sdot = np.asarray(sdot, dtype=float)
    f_s = cfg.c1 * s + cfg.c2 * s**3
    f_d = cfg.d1 * sdot / (1.0 + cfg.d2 * sdot * np.tanh(sdot))
    return f_s + f_d


def simulate_oscillator(cfg: OscillatorConfig, rng: np.random.Generator) -> SimResult:
    """Simulate the oscillator; returns states, inputs, noisy outputs, true xi."""
    t_len = int(round(cfg.duration / cfg.dt)) + 1
    ts = np.arange(t_len) * cfg.dt
    us = cfg.force(ts)[:, None]
    sqrt_q = np.linalg.cholesky(np.asarray(cfg.sigma_omega))
    sqrt_r = np.linalg.cholesky(np.asarray(cfg.sigma_e))

    def deriv(x, u):
        return np.stack(
            [x[..., 1], (u - oscillator_target(x[..., 0], x[..., 1], cfg)) / cfg.m],
            axis=-1,
        )

    xs = np.empty((t_len, 2))
    xs[0] = cfg.x0_mean
    for t in range(t_len - 1):
        xs[t + 1] = rk4_step(deriv, xs[t], us[t, 0], cfg.dt) + sqrt_q @ rng.standard_normal(2)
        if not np.all(np.isfinite(xs[t + 1])):
            raise NumericalError(f"oscillator simulation diverged at step {t + 1}")
    ys = xs[:, :1] + rng.standard_normal((t_len, 1)) @ sqrt_r.T
    xi_true = oscillator_target(xs[:, 0], xs[:, 1], cfg)[:, None]
    return SimResult(xs=xs, us=us, ys=ys, xi_true=xi_true)


def build_oscillator(
    rng: np.random.Generator,
    case_params: dict | None = None,
    basis_params: dict | None = None,
    prior_params: dict | None = None,
    noise_params: dict | None = None,
) -> CaseStudy:
    """Assemble the oscillator case study: simulate data, build model + prior.

    Basis defaults follow the reference configuration: domain half-length
    7.5 in both state coordinates, 41 basis functions picked by smallest
    eigenvalue, kernel variance 10 with lengthscale 2L/n_phi, and an
    inverse-Wishart scale of 40.
    """
    cp = dict(case_params or {})
    noise = dict(noise_params or {})
    cfg_kwargs = {k: v for k, v in cp.items() if k in OscillatorConfig.__dataclass_fields__}
    if "sigma_omega" in noise:
        cfg_kwargs["sigma_omega"] = tuple(map(tuple, np.asarray(noise["sigma_omega"], dtype=float)))
    if "sigma_e" in noise:
        cfg_kwargs["sigma_e"] = tuple(map(tuple, np.asarray(noise["sigma_e"], dtype=float)))
    cfg = OscillatorConfig(**cfg_kwargs)
    sim = simulate_oscillator(cfg, rng)

    bp = {"L": 7.5, "n_phi": 41, "sigma2": 10.0, "lengthscale": None, "eval_margin": 0.9}
    bp.update(basis_params or {})
    l_dom = float(bp["L"])
    n_phi = int(bp["n_phi"])
    ell = bp["lengthscale"] or 2.0 * l_dom / n_phi
    l_eval = float(bp["eval_margin"]) * l_dom
    bas = basis_mod.hilbert_basis((l_dom, l_dom), n_phi)
    kernel = basis_mod.KernelSpec(float(bp["sigma2"]), (float(ell), float(ell)))
    v0 = basis_mod.prior_column_covariance(bas, kernel)

    pp = {"iw_scale": 40.0, "nu": None}
    pp.update(prior_params or {})
    nu0 = pp["nu"] if pp["nu"] is not None else 1 + n_phi + 1  # n_xi + n_phi + 1
    prior = _zero_mean_prior(v0, pp["iw_scale"], nu0, 1)

    m = cfg.m
    dt = cfg.dt

    def f(x, xi, u):
        def deriv(xx, _):
            return np.stack([xx[..., 1], (u[..., 0] - xi[..., 0]) / m], axis=-1)

        return rk4_step(deriv, x, None, dt)

    def h(x, u):
        return x[..., :1]

    def feature_map(x, u):
        return x

    model = ModelSpec(
        n_x=2, n_xi=1, n_y=1, n_u=1,
        f=f, h=h,
        sigma_omega=np.asarray(cfg.sigma_omega), sigma_e=np.asarray(cfg.sigma_e),
        feature_map=feature_map, basis=bas,
        init=InitSpec(np.asarray(cfg.x0_mean), np.asarray(cfg.x0_cov)),
    )

    def truth_fn(pts):
        return oscillator_target(pts[:, 0], pts[:, 1], cfg)[:, None]

    # the evaluation box stops short of the basis boundary: every basis
    # function vanishes there, so the inverse-variance weight degenerates on
    # a ring the model cannot represent
    return CaseStudy(
        name="oscillator",
        model=model,
        prior=prior,
        ys=sim.ys,
        us=sim.us,
        dt=dt,
        truth_states=sim.xs,
        truth_xis=sim.xi_true,
        grid_bounds=((-l_eval, l_eval), (-l_eval, l_eval)),
        truth_fn=truth_fn,
        extras={"config": cfg},
    )


# ---------------------------------------------------------------------------
# single-track vehicle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TireParams:
    """Magic-formula lateral friction parameters (peak, stiffness, shape, curvature)."""

    mu_max: float = 1.0
    b: float = 10.0
    c: float = 1.9
    e: float = 0.97


@dataclass(frozen=True)
class VehicleConfig:
    """Single-track lateral dynamics driven by a two-sine steering schedule.

    Chassis and tire numbers are this repository's reference values. The
    longitudinal force coefficient acts at the front axle in both equations.
    """

    m: float = 1500.0
    izz: float = 2500.0
    lf: float = 1.2
    lr: float = 1.5
    mu_x: float = 0.0
    tire: TireParams = TireParams()
    vx: float = 15.0
    steer_amp1: float = 0.06
    steer_freq1: float = 0.25
    steer_amp2: float = 0.035
    steer_freq2: float = 0.75
    dt: float = 0.02
    duration: float = 30.0
    sigma_omega: tuple = ((1e-6, 0.0), (0.0, 1e-6))
    sigma_e: tuple = ((1e-3, 0.0), (0.0, 1e-5))
    x0_mean: tuple = (0.0, 0.0)
    x0_cov: tuple = ((1e-6, 0.0), (0.0, 1e-6))

    def __post_init__(self):
        for name in ("m", "izz", "lf", "lr", "vx"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.tire.b <= 0 or self.tire.c <= 0:
            raise ValueError("tire stiffness and shape factors must be positive")

    @property
    def fz_f(self):
        g = 9.81
        return self.m * g * self.lr / (self.lf + self.lr)

    @property
    def fz_r(self):
        g = 9.81
        return self.m * g * self.lf / (self.lf + self.lr)

    def steering(self, t):
        t = np.asarray(t, dtype=float)
        return self.steer_amp1 * np.sin(2 * np.pi * self.steer_freq1 * t) + self.steer_amp2 * np.sin(
            2 * np.pi * self.steer_freq2 * t
        )


def magic_formula(alpha, tire: TireParams):
    """Lateral friction coefficient mu_y(alpha) of the magic-formula tire."""
    alpha = np.asarray(alpha, dtype=float)
    if np.any(np.abs(alpha) >= np.pi / 2):
        raise DomainError("side-slip angle magnitude must be below pi/2")
    zeta = tire.b * np.tan(alpha)
    return tire.mu_max * np.sin(tire.c * np.arctan(zeta - tire.e * (zeta - np.arctan(zeta))))


def side_slip_angles(x, u, cfg: VehicleConfig):
    """Front/rear side-slip angles from the standard kinematic relations."""
    vy = x[..., 0]
    yaw = x[..., 1]
    vx = u[..., 0]
    delta = u[..., 1]
    a_f = delta - np.arctan((vy + cfg.lf * yaw) / vx)
    a_r = -np.arctan((vy - cfg.lr * yaw) / vx)
    return np.stack([a_f, a_r], axis=-1)


def _vehicle_deriv(x, mu_f, mu_r, u, cfg: VehicleConfig):
    vx = u[..., 0]
    delta = u[..., 1]
    cd = np.cos(delta)
    sd = np.sin(delta)
    vy_dot = (cfg.fz_f * mu_f * cd + cfg.fz_r * mu_r + cfg.fz_f * cfg.mu_x * sd) / cfg.m - vx * x[..., 1]
    yaw_dot2 = (cfg.lf * cfg.fz_f * mu_f * cd - cfg.lr * cfg.fz_r * mu_r + cfg.lf * cfg.fz_f * cfg.mu_x * sd) / cfg.izz
    return np.stack([vy_dot, yaw_dot2], axis=-1)


def simulate_vehicle(cfg: VehicleConfig, rng: np.random.Generator) -> SimResult:
    """Simulate the single-track model with the true tire curve.

    Outputs are [vy_dot, yaw rate] + noise, with the acceleration channel
    evaluated from the dynamics at the current state.
    """
    t_len = int(round(cfg.duration / cfg.dt)) + 1
    ts = np.arange(t_len) * cfg.dt
    us = np.stack([np.full(t_len, cfg.vx), cfg.steering(ts)], axis=-1)
    sqrt_q = np.linalg.cholesky(np.asarray(cfg.sigma_omega))
    sqrt_r = np.linalg.cholesky(np.asarray(cfg.sigma_e))

    def deriv(x, u):
        alphas = side_slip_angles(x, u, cfg)
        mu_f = magic_formula(alphas[..., 0], cfg.tire)
        mu_r = magic_formula(alphas[..., 1], cfg.tire)
        return _vehicle_deriv(x, mu_f, mu_r, u, cfg)

    xs = np.empty((t_len, 2))
    xs[0] = cfg.x0_mean
    for t in range(t_len - 1):
        xs[t + 1] = rk4_step(deriv, xs[t], us[t], cfg.dt) + sqrt_q @ rng.standard_normal(2)
        if not np.all(np.isfinite(xs[t + 1])):
            raise NumericalError(f"vehicle simulation diverged at step {t + 1}")

    alphas = side_slip_angles(xs, us, cfg)
    xi_true = np.stack(
        [magic_formula(alphas[:, 0], cfg.tire), magic_formula(alphas[:, 1], cfg.tire)], axis=-1
    )
    ys_clean = np.stack([_vehicle_deriv(xs, xi_true[:, 0], xi_true[:, 1], us, cfg)[:, 0], xs[:, 1]], axis=-1)
    ys = ys_clean + rng.standard_normal((t_len, 2)) @ sqrt_r.T
    return SimResult(xs=xs, us=us, ys=ys, xi_true=xi_true)


def build_vehicle(
    rng: np.random.Generator,
    case_params: dict | None = None,
    basis_params: dict | None = None,
    prior_params: dict | None = None,
    noise_params: dict | None = None,
) -> CaseStudy:
    """Assemble the vehicle case study.

    The per-axle friction curves are learned as two parallel one-dimensional
    anti-symmetric bases over the respective side-slip angle, stacked into a
    single weight matrix. The simulator records the acceleration channel,
    but the inference model conditions on the yaw-rate channel only: an
    acceleration measurement depends on the unknown friction itself, and
    interface-dependent measurement functions are out of scope here.
    """
    cp = dict(case_params or {})
    noise = dict(noise_params or {})
    cfg_kwargs = {k: v for k, v in cp.items() if k in VehicleConfig.__dataclass_fields__}
    if "tire" in cfg_kwargs and isinstance(cfg_kwargs["tire"], dict):
        cfg_kwargs["tire"] = TireParams(**cfg_kwargs["tire"])
    if "sigma_omega" in noise:
        cfg_kwargs["sigma_omega"] = tuple(map(tuple, np.asarray(noise["sigma_omega"], dtype=float)))
    if "sigma_e" in noise:
        cfg_kwargs["sigma_e"] = tuple(map(tuple, np.asarray(noise["sigma_e"], dtype=float)))
    cfg = VehicleConfig(**cfg_kwargs)
    sim = simulate_vehicle(cfg, rng)

    bp = {"L": 0.35, "n_antisymmetric": 20, "sigma2": 1.0, "lengthscale": None, "eval_margin": 0.9}
    bp.update(basis_params or {})
    l_alpha = float(bp["L"])
    l_eval = float(bp["eval_margin"]) * l_alpha
    n_part = int(bp["n_antisymmetric"])
    ell = bp["lengthscale"] or 2.0 * l_alpha / n_part
    part = basis_mod.antisymmetric_basis(l_alpha, n_part)
    bas = basis_mod.StackedBasis((part, part), (0, 1))
    kernel = basis_mod.KernelSpec(float(bp["sigma2"]), (float(ell),))
    v0 = bas.column_prior((kernel, kernel))

    pp = {"iw_scale": 0.1, "nu": None}
    pp.update(prior_params or {})
    n_phi = bas.n_phi
    nu0 = pp["nu"] if pp["nu"] is not None else 2 + n_phi + 1
    prior = _zero_mean_prior(v0, pp["iw_scale"], nu0, 2)

    dt = cfg.dt

    def f(x, xi, u):
        def deriv(xx, _):
            return _vehicle_deriv(xx, xi[..., 0], xi[..., 1], u, cfg)

        return rk4_step(deriv, x, None, dt)

    def h(x, u):
        return x[..., 1:]

    def feature_map(x, u):
        return side_slip_angles(x, u, cfg)

    sigma_e_model = np.asarray(cfg.sigma_e)[1:, 1:]
    model = ModelSpec(
        n_x=2, n_xi=2, n_y=1, n_u=2,
        f=f, h=h,
        sigma_omega=np.asarray(cfg.sigma_omega), sigma_e=sigma_e_model,
        feature_map=feature_map, basis=bas,
        init=InitSpec(np.asarray(cfg.x0_mean), np.asarray(cfg.x0_cov)),
        u_ref=np.array([cfg.vx, 0.0]),
    )

    def truth_fn(pts):
        # both outputs are the same physical curve evaluated on their own axis
        return np.stack(
            [magic_formula(pts[:, 0], cfg.tire), magic_formula(pts[:, 1], cfg.tire)], axis=-1
        )

    return CaseStudy(
        name="vehicle",
        model=model,
        prior=prior,
        ys=sim.ys[:, 1:],
        us=sim.us,
        dt=dt,
        truth_states=sim.xs,
        truth_xis=sim.xi_true,
        grid_bounds=((-l_eval, l_eval), (-l_eval, l_eval)),
        truth_fn=truth_fn,
        extras={"config": cfg, "ys_full": sim.ys},
    )


# ---------------------------------------------------------------------------
# EMPS benchmark
# ---------------------------------------------------------------------------

@dataclass
class EmpsRecord:
    """Uniformly sampled benchmark record: time, measured position, force."""

    t: np.ndarray
    s: np.ndarray
    tau: np.ndarray
    s_ref: np.ndarray | None = None

    @property
    def dt(self):
        return float(self.t[1] - self.t[0])

    def __len__(self):
        return self.t.size

    def decimate(self, k: int) -> "EmpsRecord":
        if k < 1:
            raise ValueError("decimation factor must be >= 1")
        sl = slice(None, None, k)
        ref = self.s_ref[sl] if self.s_ref is not None else None
        return EmpsRecord(self.t[sl], self.s[sl], self.tau[sl], ref)


def load_emps(path) -> EmpsRecord:
    """Load an EMPS CSV with header ``t,s,tau`` (optionally ``,s_ref``).

    Raises ParseError with line/column context for malformed content and
    FormatError when the sampling grid is not uniform to 1e-9 s.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("file is empty", line=1) from None
        cols = [c.strip() for c in header]
        if cols[:3] != ["t", "s", "tau"]:
            raise ParseError(f"expected header 't,s,tau', got {','.join(cols)!r}", line=1, column=1)
        has_ref = len(cols) > 3 and cols[3] == "s_ref"
        want = 4 if has_ref else 3
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != want:
                raise ParseError(f"expected {want} columns, got {len(row)}", line=lineno, column=len(row))
            parsed = []
            for colno, cell in enumerate(row, start=1):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ParseError(f"could not parse {cell!r} as a number", line=lineno, column=colno) from None
            rows.append(parsed)
    if not rows:
        raise ParseError("no data rows after the header", line=2)
    data = np.asarray(rows, dtype=float)
    t = data[:, 0]
    if len(t) >= 2:
        dts = np.diff(t)
        if np.any(dts <= 0):
            raise FormatError("timestamps must be strictly increasing")
        if np.abs(dts - dts[0]).max() > 1e-9:
            raise FormatError("sampling grid is not uniform to 1e-9 s")
    return EmpsRecord(t, data[:, 1], data[:, 2], data[:, 3] if data.shape[1] > 3 else None)


def build_emps(
    rng: np.random.Generator,
    case_params: dict | None = None,
    basis_params: dict | None = None,
    prior_params: dict | None = None,
    noise_params: dict | None = None,
) -> CaseStudy:
    """Assemble the EMPS case study from a benchmark CSV.

    ``case_params`` must provide ``path``; ``decimate`` (default 5) thins the
    1 kHz grid to keep offline runs tractable. The applied force is used
    directly as the input; no controller is simulated.
    """
    cp = dict(case_params or {})
    if "path" not in cp:
        raise ValueError("EMPS case study needs case_params['path']")
    rec = load_emps(cp["path"]).decimate(int(cp.get("decimate", 5)))
    mass = float(cp.get("mass", 95.1089))
    dt = rec.dt

    noise = dict(noise_params or {})
    sigma_omega = np.asarray(noise.get("sigma_omega", [[1e-10, 0.0], [0.0, 1e-6]]), dtype=float)
    sigma_e = np.asarray(noise.get("sigma_e", [[1e-8]]), dtype=float)

    bp = {"L": 0.2, "n_phi": 10, "sigma2": 20.0, "lengthscale": None, "eval_margin": 0.9}
    bp.update(basis_params or {})
    l_dom = float(bp["L"])
    l_eval = float(bp["eval_margin"]) * l_dom
    n_phi = int(bp["n_phi"])
    ell = bp["lengthscale"] or 2.0 * l_dom / n_phi
    bas = basis_mod.hilbert_basis((l_dom,), n_phi)
    kernel = basis_mod.KernelSpec(float(bp["sigma2"]), (float(ell),))
    v0 = basis_mod.prior_column_covariance(bas, kernel)

    pp = {"iw_scale": 4.0, "nu": None}
    pp.update(prior_params or {})
    nu0 = pp["nu"] if pp["nu"] is not None else 1 + n_phi + 1
    prior = _zero_mean_prior(v0, pp["iw_scale"], nu0, 1)

    def f(x, xi, u):
        def deriv(xx, _):
            return np.stack([xx[..., 1], (u[..., 0] - xi[..., 0]) / mass], axis=-1)

        return rk4_step(deriv, x, None, dt)

    def h(x, u):
        return x[..., :1]

    def feature_map(x, u):
        return x[..., 1:]

    x0 = np.array([rec.s[0], 0.0])
    model = ModelSpec(
        n_x=2, n_xi=1, n_y=1, n_u=1,
        f=f, h=h,
        sigma_omega=sigma_omega, sigma_e=sigma_e,
        feature_map=feature_map, basis=bas,
        init=InitSpec(x0, np.diag([1e-8, 1e-8])),
    )
    return CaseStudy(
        name="emps",
        model=model,
        prior=prior,
        ys=rec.s[:, None],
        us=rec.tau[:, None],
        dt=dt,
        grid_bounds=((-l_eval, l_eval),),
        extras={"record": rec, "mass": mass},
    )


CASE_STUDIES = {
    "oscillator": build_oscillator,
    "vehicle": build_vehicle,
    "emps": build_emps,
}
