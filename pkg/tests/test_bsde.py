import numpy as np
import pytest

from riskaverse import (GeneratorFunctional, NumericalError, TimeGrid, TreeModel, simulate_forward,
                        solve_bsde_lsmc, solve_bsde_tree)
from riskaverse.bsde import polynomial_basis

from conftest import scalar_model


@pytest.fixture(scope="module")
def brownian_paths():
    return simulate_forward(scalar_model(), None, TimeGrid(0.0, 1.0, 50), 20_000, 11, [0.0])


def test_constant_terminal_zero_generator(brownian_paths):
    sol = solve_bsde_lsmc(brownian_paths, GeneratorFunctional("zero"), np.full(20_000, 7.0))
    assert np.allclose(sol.Y, 7.0, atol=1e-10)
    assert np.max(np.abs(sol.Z)) <= 1e-8


def test_linear_z_closed_form(brownian_paths):
    # Y_t = B_t + beta (T - t), Z = 1
    g = GeneratorFunctional("linear_z", a=[0.5])
    sol = solve_bsde_lsmc(brownian_paths, g, brownian_paths.states[:, -1, 0])
    assert abs(sol.y0 - 0.5) <= 0.02
    assert np.allclose(sol.Z[:, :-1].mean(), 1.0, atol=0.02)


def test_linear_y_exponential_growth(brownian_paths):
    sol = solve_bsde_lsmc(brownian_paths, GeneratorFunctional("linear_y", b=1.0), np.ones(20_000))
    assert abs(sol.y0 - np.e) <= 0.03


def test_ill_conditioned_regression_aborts():
    paths = simulate_forward(scalar_model(), None, TimeGrid(0.0, 1.0, 5), 200, 0, [0.0])
    # two distinct states only: higher powers are linear in the lower ones
    paths.states[:, :, 0] = np.where(np.arange(200) % 2, 1.0, -1.0)[:, None]
    with pytest.raises(NumericalError) as exc:
        solve_bsde_lsmc(paths, GeneratorFunctional("zero"), np.ones(200), degree=4, ridge=0.0)
    assert exc.value.details["condition_number"] > 1e12


def test_polynomial_basis_size():
    x = np.random.default_rng(0).normal(size=(10, 2))
    assert polynomial_basis(x, 2).shape == (10, 6)


def test_tree_zero_generator_is_binomial_average():
    tree = TreeModel.brownian(10, 1.0)
    leaves = np.random.default_rng(1).normal(size=11)
    root = solve_bsde_tree(tree, GeneratorFunctional("zero"), leaves).root
    from scipy.stats import binom
    weights = binom.pmf(np.arange(11), 10, 0.5)
    assert root == pytest.approx(weights @ leaves, abs=1e-12)


def test_tree_translation_shift_exact():
    tree = TreeModel.brownian(12, 1.0)
    g = GeneratorFunctional("abs_z", mu=0.3)
    leaves = np.sin(3 * tree.leaves)
    a = solve_bsde_tree(tree, g, leaves)
    b = solve_bsde_tree(tree, g, leaves + 0.75)
    assert all(np.max(np.abs(yb - ya - 0.75)) <= 1e-10 for ya, yb in zip(a.Y, b.Y))


@pytest.mark.parametrize("scheme", ["flow", "implicit"])
def test_tree_linear_z_within_step(scheme):
    depth = 12
    tree = TreeModel.brownian(depth, 1.0)
    root = solve_bsde_tree(tree, GeneratorFunctional("linear_z", a=[0.5]), tree.leaves, scheme=scheme).root
    assert abs(root - 0.5) <= 2.0 / depth


def test_tree_linear_y_matches_exponential():
    tree = TreeModel.brownian(12, 1.0)
    root = solve_bsde_tree(tree, GeneratorFunctional("linear_y", b=1.0), np.ones(13)).root
    assert abs(root - np.e) <= 1e-3


def test_tree_subtree_agrees_with_full_solution():
    tree = TreeModel.brownian(8, 1.0)
    g = GeneratorFunctional("capped_quadratic_z", theta=1.0, R=2.0)
    leaves = np.cos(tree.leaves)
    full = solve_bsde_tree(tree, g, leaves)
    sub = solve_bsde_tree(tree.subtree(3, 2), g, leaves[2:2 + 6])
    assert sub.root == pytest.approx(full.Y[3][2], abs=1e-12)
