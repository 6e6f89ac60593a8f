"""Configuration-driven experiment runner.

``margsmc run --config cfg.json`` executes an online (particle filter) or
offline (particle Gibbs) experiment on a registered case study and writes
five artifacts into the output directory:

    trajectory.csv     time, posterior state/interface mean and std, truth
    function_grid.csv  grid point, posterior mean, marginal std, truth
    errors.csv         error metrics vs time (online) or iteration (offline)
    posterior.json     final distribution parameters and statistics
    run_meta.json      fully resolved configuration, seed, versions

Reruns with the same configuration and seed are byte-identical.
Exit codes: 0 ok, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__, conjugate, evaluation, offline, online
from .casestudies import CASE_STUDIES
from .errors import ConfigError, DegeneratePosterior, MargSmcError

_DEFAULTS = {
    "mode": "online",
    "case_study": "oscillator",
    "seed": 0,
    "out_dir": "runs/out",
    "particles": 200,
    "iterations": 800,
    "gamma": 0.999,
    "resampler": "multinomial",
    "error_stride": 10,
    "grid": {"points_per_dim": 101},
    "basis": {},
    "prior": {},
    "noise": {},
    "case_params": {},
}

_SCALARS = {
    "mode": str,
    "case_study": str,
    "seed": int,
    "out_dir": str,
    "particles": int,
    "iterations": int,
    "gamma": float,
    "resampler": str,
    "error_stride": int,
}


def resolve_config(raw: dict) -> dict:
    """Merge a raw config dict over the defaults; unknown keys are errors."""
    cfg = json.loads(json.dumps(_DEFAULTS))  # deep copy
    for key, value in raw.items():
        if key not in cfg:
            raise ConfigError(f"{key}: unknown configuration key")
        if isinstance(cfg[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{key}: expected an object")
            cfg[key].update(value)
        else:
            cfg[key] = value
    for key, typ in _SCALARS.items():
        try:
            cfg[key] = typ(cfg[key])
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected {typ.__name__}, got {cfg[key]!r}") from None
    return cfg


def validate(cfg: dict) -> list:
    """Dry-run all invariant checks; returns a list of violation messages."""
    report = []
    if cfg["mode"] not in ("online", "offline"):
        report.append(f"mode: must be 'online' or 'offline', got {cfg['mode']!r}")
    if cfg["case_study"] not in CASE_STUDIES:
        report.append(
            f"case_study: unknown {cfg['case_study']!r}; known: {sorted(CASE_STUDIES)}"
        )
    if cfg["particles"] < 2:
        report.append(f"particles: need at least 2, got {cfg['particles']}")
    if not 0.0 < cfg["gamma"] <= 1.0:
        report.append(f"gamma: must lie in (0, 1], got {cfg['gamma']}")
    if cfg["resampler"] not in ("multinomial", "systematic"):
        report.append(f"resampler: must be 'multinomial' or 'systematic', got {cfg['resampler']!r}")
    if cfg["mode"] == "offline" and cfg["iterations"] < 1:
        report.append(f"iterations: need at least 1, got {cfg['iterations']}")
    if cfg["error_stride"] < 1:
        report.append(f"error_stride: need at least 1, got {cfg['error_stride']}")
    if cfg["grid"].get("points_per_dim", 101) < 2:
        report.append("grid.points_per_dim: need at least 2")
    if cfg["case_study"] == "emps" and "path" not in cfg["case_params"]:
        report.append("case_params.path: required for the emps case study")
    return report


# ---------------------------------------------------------------------------
# artifact writers / readers
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    return f"{float(x):.17g}"


def write_csv(path, header, columns):
    """Write columns (sequences of equal length) as a CSV with LF endings and
    17-significant-digit floats."""
    rows = len(columns[0])
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(rows):
            fh.write(",".join(_fmt(col[i]) for col in columns) + "\n")


def read_csv(path) -> dict:
    """Read one of this module's CSVs back as {column: float array}."""
    with open(path, newline="") as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        data = data.reshape(0, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def _json_ready(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    return obj


def write_json(path, payload):
    with open(path, "w", newline="\n") as fh:
        json.dump(_json_ready(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# experiment drivers
# ---------------------------------------------------------------------------

def _build_case(cfg: dict, rng: np.random.Generator):
    builder = CASE_STUDIES[cfg["case_study"]]
    return builder(
        rng,
        case_params=cfg["case_params"],
        basis_params=cfg["basis"],
        prior_params=cfg["prior"],
        noise_params=cfg["noise"],
    )


def _grid_for(case, cfg, stats):
    if case.grid_bounds is None:
        return None
    return evaluation.function_grid(
        case.model.basis, stats, case.grid_bounds,
        cfg["grid"]["points_per_dim"], case.truth_fn,
    )


def _trajectory_columns(case, t_idx, s_mean, s_std, x_mean, x_std):
    header = ["t", "time"]
    cols = [t_idx, t_idx * case.dt]
    for i in range(case.model.n_x):
        header += [f"x{i}_mean", f"x{i}_std"]
        cols += [s_mean[:, i], s_std[:, i]]
    for i in range(case.model.n_xi):
        header += [f"xi{i}_mean", f"xi{i}_std"]
        cols += [x_mean[:, i], x_std[:, i]]
    if case.truth_states is not None:
        for i in range(case.model.n_x):
            header.append(f"x{i}_true")
            cols.append(case.truth_states[:, i])
    if case.truth_xis is not None:
        for i in range(case.model.n_xi):
            header.append(f"xi{i}_true")
            cols.append(case.truth_xis[:, i])
    return header, cols


def _write_function_grid(path, case, grid):
    if grid is None:
        return
    header = [f"z{i}" for i in range(grid.points.shape[1])]
    cols = [grid.points[:, i] for i in range(grid.points.shape[1])]
    for i in range(grid.mean.shape[1]):
        header += [f"xi{i}_mean", f"xi{i}_std"]
        cols += [grid.mean[:, i], np.sqrt(grid.variance[:, i])]
    if grid.truth is not None:
        for i in range(grid.truth.shape[1]):
            header.append(f"xi{i}_true")
            cols.append(grid.truth[:, i])
    write_csv(path, header, cols)


def _posterior_payload(stats, params):
    return {
        "params": {"M": params.M, "V": params.V, "Psi": params.Psi, "nu": params.nu},
        "stats": {"chi0": stats.chi0, "chi1": stats.chi1, "chi2": stats.chi2, "chi3": stats.chi3},
    }


def run_online(cfg: dict, case, out: Path, rng: np.random.Generator):
    ocfg = online.OnlineConfig(cfg["particles"], gamma=cfg["gamma"], resampler=cfg["resampler"])
    stride = cfg["error_stride"]
    err_rows = []
    sq_resid_sum = np.zeros(())

    def callback(t, ens):
        nonlocal sq_resid_sum
        w = ens.weights()
        state_mean = w @ ens.states
        resid = np.asarray(case.model.h(state_mean[None], ens.u_prev[None]))[0] - case.ys[t]
        sq_resid_sum = sq_resid_sum + np.sum(resid**2)
        if t % stride != 0 and t != len(case.ys) - 1:
            return
        row = {"t": t, "time": t * case.dt}
        # running RMSE between predicted and observed outputs up to t
        row["rmse_meas"] = float(np.sqrt(sq_resid_sum / ((t + 1) * case.model.n_y)))
        if case.grid_bounds is not None and case.truth_fn is not None:
            stats = ens.stats.weighted_mean(w)
            try:
                grid = _grid_for(case, cfg, stats)
                wr = evaluation.wrmse(grid, stats)
            except DegeneratePosterior:
                # noninformative priors stay improper for the first steps
                wr = np.full(case.model.n_xi, np.nan)
            for i, v in enumerate(wr):
                row[f"wrmse_{i}"] = v
        err_rows.append(row)

    result = online.run_filter(case.ys, case.us, case.model, case.prior, ocfg, rng, callback=callback)
    t_idx = np.arange(len(case.ys), dtype=float)
    header, cols = _trajectory_columns(case, t_idx, result.state_mean, result.state_std,
                                       result.xi_mean, result.xi_std)
    write_csv(out / "trajectory.csv", header, cols)

    summary = online.posterior_summary(result.ensemble)
    _write_function_grid(out / "function_grid.csv", case, _grid_for(case, cfg, summary.stats))
    if err_rows:
        keys = list(err_rows[0])
        write_csv(out / "errors.csv", keys, [[r[k] for r in err_rows] for k in keys])
    write_json(out / "posterior.json", _posterior_payload(summary.stats, summary.params))
    return summary


def run_offline(cfg: dict, case, out: Path, rng: np.random.Generator):
    ocfg = online.OnlineConfig(cfg["particles"], gamma=cfg["gamma"], resampler=cfg["resampler"])
    k_iter = cfg["iterations"]
    t_len = len(case.ys)
    err_rows = []
    acc_x = np.zeros((t_len, case.model.n_x))
    acc_x2 = np.zeros((t_len, case.model.n_x))
    acc_xi = np.zeros((t_len, case.model.n_xi))
    acc_xi2 = np.zeros((t_len, case.model.n_xi))
    kept = 0

    def callback(k, ref, stats):
        nonlocal kept
        if k > 0:
            np.add(acc_x, ref.xs, out=acc_x)
            np.add(acc_x2, ref.xs**2, out=acc_x2)
            np.add(acc_xi, ref.xis, out=acc_xi)
            np.add(acc_xi2, ref.xis**2, out=acc_xi2)
            kept += 1
        if k % max(cfg["error_stride"], 1) == 0 or k == k_iter:
            row = {"iteration": k}
            if case.grid_bounds is not None and case.truth_fn is not None:
                grid = _grid_for(case, cfg, stats)
                for i, v in enumerate(evaluation.wrmse(grid, stats)):
                    row[f"wrmse_{i}"] = v
            err_rows.append(row)

    state = offline.pgas_run(case.ys, case.us, case.model, case.prior, k_iter, ocfg, rng,
                             callback=callback)
    x_mean = acc_x / kept
    x_std = np.sqrt(np.maximum(acc_x2 / kept - x_mean**2, 0.0))
    xi_mean = acc_xi / kept
    xi_std = np.sqrt(np.maximum(acc_xi2 / kept - xi_mean**2, 0.0))
    t_idx = np.arange(t_len, dtype=float)
    header, cols = _trajectory_columns(case, t_idx, x_mean, x_std, xi_mean, xi_std)
    write_csv(out / "trajectory.csv", header, cols)

    final_params = conjugate.params_from_stats(state.final_stats)
    _write_function_grid(out / "function_grid.csv", case, _grid_for(case, cfg, state.final_stats))
    if err_rows:
        keys = list(err_rows[0])
        write_csv(out / "errors.csv", keys, [[r[k] for r in err_rows] for k in keys])
    payload = _posterior_payload(state.final_stats, final_params)
    payload["diagnostics"] = state.diagnostics
    write_json(out / "posterior.json", payload)
    return state


def run(cfg: dict) -> Path:
    """Execute a resolved configuration; returns the output directory."""
    problems = validate(cfg)
    if problems:
        raise ConfigError("; ".join(problems))
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "config": cfg,
        "versions": {
            "margsmc": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": ".".join(map(str, sys.version_info[:3])),
        },
    }
    try:
        seeds = np.random.SeedSequence(cfg["seed"]).spawn(2)
        case = _build_case(cfg, np.random.default_rng(seeds[0]))
        rng = np.random.default_rng(seeds[1])
        if cfg["mode"] == "online":
            run_online(cfg, case, out, rng)
        else:
            run_offline(cfg, case, out, rng)
    finally:
        # the meta file is written even when the run fails, so a failed run
        # remains reproducible
        write_json(out / "run_meta.json", meta)
    return out


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return resolve_config(raw)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="margsmc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--out", default=None, help="override the output directory")
    p_val = sub.add_parser("validate", help="check a config without running it")
    p_val.add_argument("--config", required=True)
    sub.add_parser("list-casestudies", help="print the registered case studies")
    args = parser.parse_args(argv)

    try:
        if args.command == "list-casestudies":
            for name in sorted(CASE_STUDIES):
                print(name)
            return 0
        cfg = _load_config(args.config)
        if args.command == "validate":
            problems = validate(cfg)
            for p in problems:
                print(p)
            if problems:
                return 2
            print("ok")
            return 0
        if args.seed is not None:
            cfg["seed"] = int(args.seed)
        if args.out is not None:
            cfg["out_dir"] = str(args.out)
        out = run(cfg)
        print(f"wrote artifacts to {out}")
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except MargSmcError as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
