"""End-to-end check of the positioning-system pipeline on synthetic data.

Generates an EMPS-like data set (mass + viscous/Coulomb friction + offset)
in the benchmark CSV format, learns the resistance force offline, and
verifies that forward simulation with the learned function beats forward
simulation with no resistance model by a wide margin. This covers the full
code path of the external-benchmark criterion without the external data.
"""

import numpy as np

from margsmc import casestudies as cs
from margsmc import conjugate as cj
from margsmc import evaluation, offline, online, ssm


MASS = 90.0
FV, FC, OFF = 200.0, 18.0, -3.0  # viscous, Coulomb, offset


def friction(v):
    return FV * v + FC * np.tanh(400.0 * v) + OFF


def synthesize(path, rng, duration=4.0, dt=0.005, seed_phase=0.0):
    """Closed-loop-ish force profile driving a point mass with friction."""
    t_len = int(duration / dt) + 1
    ts = np.arange(t_len) * dt
    # smooth multi-sine force rich enough to excite a range of velocities
    tau = (
        60.0 * np.sin(2 * np.pi * 0.5 * ts + seed_phase)
        + 35.0 * np.sin(2 * np.pi * 1.7 * ts + 1.1 + seed_phase)
        + 15.0 * np.sin(2 * np.pi * 3.3 * ts + 2.3)
    )
    xs = np.zeros((t_len, 2))
    for t in range(t_len - 1):
        def deriv(x, u):
            return np.stack([x[..., 1], (u - friction(x[..., 1])) / MASS], axis=-1)

        xs[t + 1] = ssm.rk4_step(deriv, xs[t], tau[t], dt)
    s_meas = xs[:, 0] + rng.normal(0, 1e-5, size=t_len)
    with open(path, "w", newline="\n") as fh:
        fh.write("t,s,tau\n")
        for row in zip(ts, s_meas, tau):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    return xs


def test_emps_pipeline_learns_resistance(tmp_path):
    rng = np.random.default_rng(0)
    train = tmp_path / "train.csv"
    test = tmp_path / "test.csv"
    xs_train = synthesize(train, rng, seed_phase=0.0)
    xs_test = synthesize(test, rng, seed_phase=0.9)
    vmax = np.abs(xs_train[:, 1]).max()

    case = cs.build_emps(
        np.random.default_rng(1),
        case_params={"path": str(train), "decimate": 1, "mass": MASS},
        basis_params={"L": 1.3 * vmax, "n_phi": 10, "sigma2": 5e4},
        prior_params={"iw_scale": 1.0},
        noise_params={"sigma_omega": [[1e-10, 0.0], [0.0, 1e-4]], "sigma_e": [[1e-8]]},
    )
    ocfg = online.OnlineConfig(50, gamma=1.0)
    state = offline.pgas_run(case.ys, case.us, case.model, case.prior, 20, ocfg,
                             np.random.default_rng(2))
    params = cj.params_from_stats(state.final_stats)

    # learned curve close to the true friction over the visited range
    v_grid = np.linspace(-0.8 * vmax, 0.8 * vmax, 41)[:, None]
    learned = case.model.basis.phi(v_grid) @ params.M.T
    err = evaluation.rmse(learned[:, 0], friction(v_grid[:, 0]))
    scale = float(np.sqrt(np.mean(friction(v_grid[:, 0]) ** 2)))
    assert err < 0.15 * scale

    # forward simulation on held-out data: learned model vs no-resistance
    test_case = cs.build_emps(
        np.random.default_rng(3),
        case_params={"path": str(test), "decimate": 1, "mass": MASS},
        basis_params={"L": 1.3 * vmax, "n_phi": 10, "sigma2": 5e4},
    )
    x0 = np.array([test_case.ys[0, 0], 0.0])
    sim_learned = ssm.forward_simulate(test_case.model, params.M, x0, test_case.us)
    sim_none = ssm.forward_simulate(test_case.model, np.zeros_like(params.M), x0, test_case.us)
    rmse_learned = evaluation.rmse(sim_learned[:, 0], xs_test[:, 0])
    rmse_none = evaluation.rmse(sim_none[:, 0], xs_test[:, 0])
    assert rmse_learned < 0.1 * rmse_none
