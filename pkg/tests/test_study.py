import numpy as np
import pytest

from mcfem.exactflow import SphereSolution
from mcfem.mesh import mesh_size
from mcfem.solver import rk4_stable_step
from mcfem.study import (
    StudyConfig,
    convergence_cell,
    initial_step,
    run_study,
    study_eoc_tables,
    time_converged_run,
)

UNIT = SphereSolution(1.0)


@pytest.mark.parametrize("kwargs", [
    {"scheme": "linearly_implicit_euler"},
    {"degrees": ()},
    {"degrees": (0,)},
    {"levels": (-1, 2)},
    {"levels": (2, 2)},
    {"tau_factor": 0.0},
    {"guard": 1.5},
    {"max_halvings": 0},
    {"t_end": 0.3},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        StudyConfig(**kwargs).validate()


def test_default_config_is_valid():
    cfg = StudyConfig()
    cfg.validate()
    d = cfg.to_dict()
    assert d["degrees"] == [1, 2, 3] and d["levels"] == [1, 2, 3, 4]


def test_initial_step(sphere):
    mesh, x0 = sphere(2, 1)
    h = mesh_size(mesh, x0)[0]
    assert initial_step(mesh, x0, "semidiscrete_rkc", 0.125) == pytest.approx(0.125 * h * h)
    tau = initial_step(mesh, x0, "semidiscrete_rk4", 10.0)
    assert tau == pytest.approx(rk4_stable_step(mesh, x0))


def test_time_converged_run_meets_guard(sphere):
    mesh, x0 = sphere(2, 1)
    run = time_converged_run(mesh, x0, UNIT, "semidiscrete_rkc", 1e-2, 0.05, guard=0.01)
    assert run.guard_met and run.guard_ratio < 0.01
    assert run.area_monotone
    assert len(run.taus) == run.halvings + 1 == len(run.errors)
    assert all(b == pytest.approx(a / 2, rel=0.3) for a, b in zip(run.taus, run.taus[1:]))
    assert run.n_steps * run.tau == pytest.approx(0.05)


def test_time_converged_run_reports_unmet_guard(sphere):
    mesh, x0 = sphere(2, 1)
    run = time_converged_run(mesh, x0, UNIT, "semidiscrete_rkc", 2.5e-2, 0.05, guard=1e-9, max_halvings=1)
    assert not run.guard_met
    assert run.halvings == 1


def test_convergence_cell_fields():
    row = convergence_cell(1, 1, StudyConfig(degrees=(1,), levels=(1,)))
    assert row["degree"] == 1 and row["level"] == 1 and row["nodes"] == 42
    assert row["guard_met"] and row["area_monotone"]
    for key in ("l2_error", "defect_norm", "sup_one_minus_delta", "sup_normal_error", "interp_L2_error",
                "area_error"):
        assert np.isfinite(row[key]) and row[key] > 0


def test_study_and_eoc_tables():
    rows = run_study(StudyConfig(degrees=(1,), levels=(3, 1, 2)), workers=1)
    assert [r["level"] for r in rows] == [1, 2, 3]
    assert all(a["h"] > b["h"] for a, b in zip(rows, rows[1:]))
    tables = study_eoc_tables(rows)
    assert len(tables[(1, "l2_error")].orders) == 2
    assert tables[(1, "sup_one_minus_delta")].orders[-1] == pytest.approx(2.0, abs=0.3)


def test_eoc_tables_skip_single_cells():
    assert study_eoc_tables([{"degree": 1, "h": 0.5, "l2_error": 1.0}], columns=("l2_error",)) == {}
