"""Tests for the experiment runner CLI and its artifacts."""

import json

import numpy as np
import pytest

from margsmc import cli
from margsmc.errors import ConfigError

TINY = {
    "mode": "online",
    "case_study": "oscillator",
    "seed": 3,
    "particles": 25,
    "error_stride": 5,
    "grid": {"points_per_dim": 11},
    "case_params": {"duration": 1.0},
}

TINY_OFFLINE = {
    "mode": "offline",
    "case_study": "oscillator",
    "seed": 3,
    "particles": 10,
    "iterations": 3,
    "gamma": 1.0,
    "error_stride": 1,
    "grid": {"points_per_dim": 9},
    "case_params": {"duration": 0.5},
}

ARTIFACTS = ["trajectory.csv", "function_grid.csv", "errors.csv", "posterior.json", "run_meta.json"]


def write_config(tmp_path, payload, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(payload))
    return p


def test_online_smoke_produces_all_artifacts(tmp_path):
    cfg = dict(TINY, out_dir=str(tmp_path / "out"))
    out = cli.run(cli.resolve_config(cfg))
    for name in ARTIFACTS:
        assert (out / name).exists(), name


def test_offline_smoke_produces_all_artifacts(tmp_path):
    cfg = dict(TINY_OFFLINE, out_dir=str(tmp_path / "out"))
    out = cli.run(cli.resolve_config(cfg))
    for name in ARTIFACTS:
        assert (out / name).exists(), name


def test_offline_vehicle_smoke(tmp_path):
    """Exercises the multivariate-interface CSMC path end to end."""
    cfg = cli.resolve_config({
        "mode": "offline",
        "case_study": "vehicle",
        "seed": 2,
        "particles": 8,
        "iterations": 2,
        "gamma": 1.0,
        "error_stride": 1,
        "grid": {"points_per_dim": 9},
        "case_params": {"duration": 1.0},
        "out_dir": str(tmp_path / "veh"),
    })
    out = cli.run(cfg)
    post = json.loads((out / "posterior.json").read_text())
    m = np.asarray(post["params"]["M"])
    assert m.shape == (2, 40) and np.all(np.isfinite(m))


def test_rerun_is_byte_identical(tmp_path):
    cfg1 = dict(TINY, out_dir=str(tmp_path / "a"))
    cfg2 = dict(TINY, out_dir=str(tmp_path / "a2"))
    out1 = cli.run(cli.resolve_config(cfg1))
    out2 = cli.run(cli.resolve_config(cfg2))
    for name in ARTIFACTS:
        if name == "run_meta.json":
            continue  # differs in out_dir by construction
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_run_meta_reexecution_equivalence(tmp_path):
    """The resolved config in run_meta fully determines the artifacts."""
    cfg = dict(TINY, out_dir=str(tmp_path / "a"))
    out1 = cli.run(cli.resolve_config(cfg))
    meta = json.loads((out1 / "run_meta.json").read_text())
    cfg2 = dict(meta["config"], out_dir=str(tmp_path / "b"))
    out2 = cli.run(cli.resolve_config(cfg2))
    for name in ARTIFACTS:
        if name == "run_meta.json":
            continue
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_artifacts_round_trip_through_readers(tmp_path):
    cfg = dict(TINY, out_dir=str(tmp_path / "out"))
    out = cli.run(cli.resolve_config(cfg))
    traj = cli.read_csv(out / "trajectory.csv")
    assert "x0_mean" in traj and len(traj["t"]) == 51
    grid = cli.read_csv(out / "function_grid.csv")
    assert "xi0_mean" in grid and len(grid["z0"]) == 121
    errors = cli.read_csv(out / "errors.csv")
    assert "wrmse_0" in errors
    post = json.loads((out / "posterior.json").read_text())
    assert np.asarray(post["params"]["M"]).shape == (1, 41)
    meta = json.loads((out / "run_meta.json").read_text())
    assert meta["config"]["seed"] == 3


def test_csv_floats_round_trip_exactly(tmp_path):
    path = tmp_path / "x.csv"
    values = np.array([1 / 3, np.pi, 1e-17, 123456.789012345678, -2.5e300])
    cli.write_csv(path, ["v"], [values])
    back = cli.read_csv(path)["v"]
    np.testing.assert_array_equal(back, values)


def test_validate_flags_violations():
    cfg = cli.resolve_config({"particles": 1, "gamma": 1.5})
    report = cli.validate(cfg)
    assert any("particles" in r for r in report)
    assert any("gamma" in r for r in report)


def test_validate_default_config_clean():
    assert cli.validate(cli.resolve_config({})) == []


def test_resolve_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        cli.resolve_config({"particle_count": 100})


def test_main_exit_codes(tmp_path, capsys):
    good = write_config(tmp_path, dict(TINY, out_dir=str(tmp_path / "out")))
    bad = write_config(tmp_path, {"gamma": 7.0}, name="bad.json")
    assert cli.main(["validate", "--config", str(good)]) == 0
    assert cli.main(["validate", "--config", str(bad)]) == 2
    assert cli.main(["list-casestudies"]) == 0
    out = capsys.readouterr().out
    assert "oscillator" in out and "vehicle" in out and "emps" in out
    assert cli.main(["run", "--config", str(bad)]) == 2
    missing = tmp_path / "nope.json"
    assert cli.main(["validate", "--config", str(missing)]) == 2


def test_main_run_with_overrides(tmp_path):
    cfg_path = write_config(tmp_path, dict(TINY, out_dir=str(tmp_path / "ignored")))
    out_dir = tmp_path / "cli-out"
    assert cli.main(["run", "--config", str(cfg_path), "--seed", "9", "--out", str(out_dir)]) == 0
    meta = json.loads((out_dir / "run_meta.json").read_text())
    assert meta["config"]["seed"] == 9


def test_run_meta_written_on_runtime_failure(tmp_path):
    # nonexistent EMPS path passes validation shape but fails at build time
    cfg = cli.resolve_config({
        "mode": "online",
        "case_study": "emps",
        "out_dir": str(tmp_path / "out"),
        "case_params": {"path": str(tmp_path / "missing.csv")},
    })
    with pytest.raises(FileNotFoundError):
        cli.run(cfg)
    assert (tmp_path / "out" / "run_meta.json").exists()


def test_shipped_configs_validate():
    import importlib.resources as resources

    for name in (
        "oscillator_online.json",
        "oscillator_offline.json",
        "vehicle_online.json",
        "vehicle_offline.json",
        "emps_offline.json",
    ):
        raw = json.loads(resources.files("margsmc").joinpath("configs", name).read_text())
        assert cli.validate(cli.resolve_config(raw)) == []
