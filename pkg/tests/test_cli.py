import csv
import json

import numpy as np
import pytest

from bf_transport_fem.cli import (
    CHANNEL_SIDES,
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_MESH,
    EXIT_OK,
    EXIT_SOLVER,
    main,
    run_convergence,
    run_simulate,
)
from bf_transport_fem.config import ConfigError, RunConfig, load_config
from bf_transport_fem.mesh import build_rectangle, save_mesh
from bf_transport_fem.postprocess import CSV_HEADER, read_csv

from conftest import parse_legacy_vtk

# the channel feed profile does not vanish at the inlet corners
pytestmark = pytest.mark.filterwarnings("ignore:inlet velocity:UserWarning")

SMALL_CHANNEL = {
    "scenario": "simulate",
    "model": {"t_final": 0.05},
    "mesh": {"builtin": "channel", "nx": 24, "ny": 4},
    "output": {"vtk": "final"},
}


def write_config(tmp_path, raw, name="c.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return path


# ---- configuration ----------------------------------------------------------------

def test_config_round_trip():
    cfg = RunConfig.from_dict({
        "scenario": "convergence", "manufactured": True,
        "mesh": {"builtin": "unit_square", "n": [8, 16]},
        "model": {"a1": 0.1}, "solver": {"picard_tol": 1e-9, "on_nonconvergence": "warn"},
    })
    again = RunConfig.from_json(cfg.to_json())
    assert again == cfg
    assert again.to_json() == cfg.to_json()


def test_config_defaults():
    cfg = RunConfig.from_dict({"scenario": "simulate", "mesh": {"builtin": "channel"}})
    assert cfg.solver.picard_tol == 1e-8
    assert cfg.solver.picard_max_iter == 50
    assert cfg.solver.on_nonconvergence == "abort"
    assert cfg.mesh.n_list() == [8, 16, 32, 64]


@pytest.mark.parametrize("raw, match", [
    ({"scenario": "simulate", "mesh": {"builtin": "channel"}, "colour": 1}, "unknown"),
    ({"scenario": "simulate", "mesh": {"builtin": "channel", "depth": 2}}, "unknown"),
    ({"scenario": "simulate", "mesh": {}}, "exactly one"),
    ({"scenario": "simulate", "mesh": {"builtin": "channel", "file": "m.txt"}}, "exactly one"),
    ({"scenario": "walk", "mesh": {"builtin": "channel"}}, "scenario"),
    ({"mesh": {"builtin": "channel"}}, "scenario"),
    ({"scenario": "convergence", "manufactured": True, "mesh": {"builtin": "unit_square", "n": [16, 8]}},
     "increasing"),
    ({"scenario": "convergence", "mesh": {"builtin": "unit_square"}}, "manufactured"),
    ({"scenario": "simulate", "mesh": {"builtin": "channel"}, "output": {"vtk": "sometimes"}}, "vtk"),
    ({"scenario": "simulate", "mesh": {"builtin": "channel"}, "solver": {"picard_tol": -1}}, "solver"),
])
def test_config_validation(raw, match):
    with pytest.raises(ConfigError, match=match):
        RunConfig.from_dict(raw)


def test_config_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="JSON"):
        load_config(p)


# ---- exit codes -----------------------------------------------------------------

def test_exit_config_error(tmp_path):
    path = write_config(tmp_path, {"scenario": "simulate", "mesh": {"builtin": "channel"}, "extra": 1})
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_CONFIG


def test_exit_command_mismatch(tmp_path):
    path = write_config(tmp_path, SMALL_CHANNEL)
    assert main(["convergence", "--config", str(path), "--quiet"]) == EXIT_CONFIG


def test_exit_missing_config_file(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "none.json"), "--quiet"]) == EXIT_IO


def test_exit_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    path = write_config(tmp_path, SMALL_CHANNEL)
    assert main(["simulate", "--config", str(path), "--out", str(blocker / "sub"), "--quiet"]) == EXIT_IO


def test_exit_mesh_error(tmp_path):
    mesh_path = tmp_path / "m.txt"
    save_mesh(build_rectangle(2.0, 1.0, 4, 2, CHANNEL_SIDES), mesh_path)
    lines = mesh_path.read_text().splitlines()
    lines[1] = "0.0 zero"
    mesh_path.write_text("\n".join(lines) + "\n")
    raw = dict(SMALL_CHANNEL, mesh={"file": str(mesh_path)})
    path = write_config(tmp_path, raw)
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_MESH


def test_exit_solver_nonconvergence(tmp_path):
    # the coarsest validation mesh does not converge in its first step
    raw = {"scenario": "convergence", "manufactured": True, "mesh": {"builtin": "unit_square", "n": 8}}
    path = write_config(tmp_path, raw)
    assert main(["convergence", "--config", str(path), "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_SOLVER
    rows = read_csv(tmp_path / "o" / "convergence.csv")
    assert rows == []


def test_exit_solver_iteration_cap(tmp_path):
    raw = dict(SMALL_CHANNEL, solver={"picard_max_iter": 1})
    path = write_config(tmp_path, raw)
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_SOLVER


# ---- runs -----------------------------------------------------------------------

def test_convergence_table_shape(tmp_path):
    cfg = RunConfig.from_dict({
        "scenario": "convergence", "manufactured": True,
        "mesh": {"builtin": "unit_square", "n": [8, 16]}, "model": {"a1": 0.1},
    })
    table, failed = run_convergence(cfg, tmp_path)
    assert failed == []
    assert [r.h for r in table.reports] == [1 / 8, 1 / 16]
    rates = table.rates()
    assert all(v is None for v in rates[0].values())
    assert all(np.isfinite(v) for v in rates[1].values())
    rows = read_csv(tmp_path / "convergence.csv")
    assert len(rows) == 2 and list(rows[0]) == CSV_HEADER
    assert rows[1]["r_u"] is not None


def test_simulate_channel_ten_steps(tmp_path):
    raw = dict(SMALL_CHANNEL, model={"t_final": 0.1}, mesh={"builtin": "channel", "nx": 48, "ny": 6})
    path = write_config(tmp_path, raw)
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(path), "--out", str(out), "--quiet"]) == EXIT_OK
    with (out / "wall_concentration.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 10
    assert all(r["converged"] == "1" for r in rows)
    for r in rows:
        vals = [float(r[k]) for k in ("wall_min", "wall_max", "wall_mean", "interior_mean", "update_norm")]
        assert np.all(np.isfinite(vals))
    assert float(rows[-1]["wall_max"]) > float(rows[-1]["interior_mean"])
    assert (out / "state_final.vtk").exists() and (out / "state_final_multiplier.vtk").exists()


def test_simulate_zero_data_gives_zero_fields(tmp_path):
    cfg = RunConfig.from_dict(dict(
        SMALL_CHANNEL, model={"t_final": 0.03, "a0": 0.0, "phi_in": 0.0, "inlet_peak": 0.0},
        output={"vtk": "every"},
    ))
    rows = run_simulate(cfg, tmp_path)
    assert len(rows) == 3
    for name in ("state_00001.vtk", "state_00003.vtk", "state_00003_multiplier.vtk"):
        arrays = parse_legacy_vtk((tmp_path / name).read_text())["arrays"]
        assert arrays
        for arr in arrays.values():
            assert np.max(np.abs(arr)) <= 1e-12
    for r in rows:
        assert max(abs(v) for v in r[5:]) <= 1e-12


def test_simulate_is_deterministic(tmp_path):
    path = write_config(tmp_path, SMALL_CHANNEL)
    for d in ("a", "b"):
        assert main(["simulate", "--config", str(path), "--out", str(tmp_path / d), "--quiet"]) == EXIT_OK
    for name in ("wall_concentration.csv", "state_final.vtk"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_simulate_from_mesh_file(tmp_path):
    mesh_path = tmp_path / "m.txt"
    save_mesh(build_rectangle(2.0, 0.5, 8, 2, CHANNEL_SIDES), mesh_path)
    cfg = RunConfig.from_dict(dict(SMALL_CHANNEL, mesh={"file": str(mesh_path)}, model={"t_final": 0.02}))
    rows = run_simulate(cfg, tmp_path)
    assert len(rows) == 2 and all(r[4] for r in rows)
