import csv

import numpy as np
import pytest

from riskaverse import (GeneratorFunctional, GridSpec, NumericalError, PolicyGrid, RiskCostSpec, ValidationError,
                        crosscheck_value_mc, extract_policy, solve_hjb_system)
from riskaverse.hjb import control_candidates
from riskaverse.verification import brownian_model, heat_costs, heat_error, lq_costs, lq_model, riccati_oracle

from conftest import const

ZERO = GeneratorFunctional("zero")


def test_constant_terminal_is_stationary():
    grid = GridSpec([-2.0], [2.0], 21, 10)
    vg, pol, diag = solve_hjb_system(brownian_model(), heat_costs(const(3.0)), ZERO, None, grid)
    assert np.max(np.abs(vg.values - 3.0)) <= 1e-10
    assert np.all(pol.controls == 0.0)
    assert diag.max_residual <= 1e-10


def test_heat_polynomial_small_grid():
    err, vg = heat_error(101, 50, {"kind": "quadratic", "state": 1.0}, lambda x, tau: x**2 + 2 * tau)
    assert err <= 1e-8
    assert vg.value_at(0, 0.0, [0.0]) == pytest.approx(2.0, abs=1e-8)


def test_heat_two_dimensional_quadratic():
    from riskaverse.catalog import diffusion_function, drift_function
    from riskaverse.sde import DiffusionModel
    model = DiffusionModel(2, [([0.0], [0.0])], drift_function(const([0.0, 0.0]), 2, 1),
                           diffusion_function(const([[1.0, 0.5], [0.0, 1.0]]), 2, 1))
    costs = RiskCostSpec.from_config([{"running": const(0.0),
                                       "terminal": {"kind": "quadratic", "state": [[1, 0], [0, 1]]}}], 2, [1])
    grid = GridSpec([-3.0, -3.0], [3.0, 3.0], 31, 20)
    vg, _, _ = solve_hjb_system(model, costs, GeneratorFunctional("zero", dim=2), None, grid)
    # E|x + sigma B_1|^2 = |x|^2 + trace(sigma sigma^T) = |x|^2 + 2.25
    assert vg.value_at(0, 0.0, [0.6, -0.6]) == pytest.approx(0.72 + 2.25, abs=1e-8)


def test_cfl_refuse_reports_needed_steps():
    grid = GridSpec([-5.0], [5.0], 201, 5)
    with pytest.raises(NumericalError) as exc:
        solve_hjb_system(brownian_model(np.sqrt(2.0)), heat_costs(const(0.0)), ZERO, None, grid, substep="refuse")
    assert exc.value.details["required_time_steps"] > 5


def test_auto_substeps_keep_cfl_below_one():
    grid = GridSpec([-5.0], [5.0], 201, 5)
    _, _, diag = solve_hjb_system(brownian_model(np.sqrt(2.0)), heat_costs(const(0.0)), ZERO, None, grid)
    assert max(diag.cfl) <= 0.9 + 1e-12
    assert min(diag.substeps) > 1


def test_grid_dimension_mismatch():
    with pytest.raises(ValidationError):
        solve_hjb_system(brownian_model(), heat_costs(const(0.0)), ZERO, None, GridSpec([0, 0], [1, 1], 6, 2))


def test_grid_too_coarse_for_boundary_closure():
    with pytest.raises(ValidationError):
        GridSpec([0.0], [1.0], 5, 2)


def test_singleton_control_policy():
    grid = GridSpec([-1.0], [1.0], 11, 4)
    model = brownian_model(control_box=(0.3, 0.3))
    vg, _, _ = solve_hjb_system(model, heat_costs(const(1.0)), ZERO, None, grid)
    row, gap, ties = extract_policy(vg, model, heat_costs(const(1.0)), ZERO, None, 0)
    assert np.all(row == 0.3)


def test_separable_cost_policy_is_pointwise_minimum():
    grid = GridSpec([-2.0], [2.0], 21, 10)
    model = brownian_model(control_box=(-2.0, 2.0))
    costs = RiskCostSpec.from_config([{"running": {"kind": "quadratic", "control": 1.0, "control_target": [1.0]},
                                       "terminal": {"kind": "quadratic", "state": 1.0}}], 1, [1])
    vg, pol, _ = solve_hjb_system(model, costs, ZERO, [0.0], grid, control_points=17)
    row, _, _ = extract_policy(vg, model, costs, ZERO, [0.0], 0, control_points=17)
    assert np.all(row == 1.0)
    assert np.array_equal(pol.controls, row)


def test_lq_against_riccati_oracle():
    grid = GridSpec([-5.0], [5.0], 201, 60)
    vg, pol, _ = solve_hjb_system(lq_model(), lq_costs(), ZERO, [0.0], grid, control_points=101)
    x = grid.axes[0]
    core = np.abs(x) <= 2
    q, r = riccati_oracle(1.0, grid.times)
    exact = q[0] * x**2 + r[0]
    assert np.max(np.abs(vg.values[0, core, 0] - exact[core]) / exact[core]) <= 0.02
    feedback = np.clip(-q[:, None] * x[None, :], -5, 5)
    assert np.max(np.abs(pol.controls[:-1, core, 0] - feedback[:-1, core])) <= 2 * 0.1


def test_riccati_oracle_terminal_and_stationary_limit():
    q, r = riccati_oracle(20.0, [0.0, 20.0])
    assert q[-1] == 0.0 and r[-1] == 0.0
    # long horizons approach the algebraic solution q = 1
    assert q[0] == pytest.approx(1.0, abs=1e-8)


def test_control_candidates_grid():
    cands = control_candidates(lq_model(), 0, 11)
    assert cands.shape == (11, 1)
    assert cands[0, 0] == -5.0 and cands[-1, 0] == 5.0


def test_policy_grid_lookup_uses_nearest_node():
    grid = GridSpec([0.0], [1.0], 6, 2)
    model = brownian_model(control_box=(-1.0, 1.0))
    controls = np.arange(18, dtype=float).reshape(3, 6, 1) / 20
    pol = PolicyGrid(grid, controls, model)
    # t = 0.6 falls in the second time slice, x = 0.72 rounds to node 4
    assert pol(0.6, np.array([[0.72]]))[0, 0] == pytest.approx(10 / 20)
    assert pol(1.0, np.array([[0.1]]))[0, 0] == pytest.approx(12 / 20)


def test_policy_grid_rejects_out_of_box_controls():
    grid = GridSpec([0.0], [1.0], 6, 2)
    with pytest.raises(ValidationError):
        PolicyGrid(grid, np.full((3, 6, 1), 2.0), brownian_model(control_box=(-1.0, 1.0)))


def test_value_grid_csv(tmp_path):
    grid = GridSpec([-1.0], [1.0], 6, 2)
    vg, _, _ = solve_hjb_system(brownian_model(), heat_costs(const(2.0)), ZERO, None, grid)
    vg.to_csv(tmp_path / "v.csv")
    rows = list(csv.reader(open(tmp_path / "v.csv")))
    assert rows[0] == ["t", "x0", "agent", "value"]
    assert len(rows) == 1 + 3 * 6
    assert all(float(r[-1]) == pytest.approx(2.0, abs=1e-12) for r in rows[1:])
    assert vg.metadata()["boundary"] == "cubic_extrapolation"


def test_crosscheck_heat_instance():
    grid = GridSpec([-5.0], [5.0], 101, 50)
    model = brownian_model(np.sqrt(2.0))
    costs = heat_costs({"kind": "quadratic", "state": 1.0})
    vg, pol, _ = solve_hjb_system(model, costs, ZERO, None, grid)
    rep = crosscheck_value_mc(vg, model, costs, ZERO, pol, [[-1.0], [0.5]], n_paths=20000, steps=20, seed=5)
    assert rep.passed


def test_crosscheck_rejects_points_near_boundary():
    grid = GridSpec([-5.0], [5.0], 21, 10)
    model = brownian_model()
    costs = heat_costs(const(0.0))
    vg, pol, _ = solve_hjb_system(model, costs, ZERO, None, grid)
    with pytest.raises(ValidationError):
        crosscheck_value_mc(vg, model, costs, ZERO, pol, [[4.8]], n_paths=100)
