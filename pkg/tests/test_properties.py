"""Property tests for the invariants of each module."""

import json

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from riskaverse import (ConvexSet, GeneratorFunctional, GridSpec, RiskCostSpec, TimeGrid, TreeModel, check_assumption1,
                        check_comparison, extract_policy, pareto_dominates, pareto_filter, pareto_mask,
                        simulate_forward, solve_bsde_lsmc, solve_bsde_tree, solve_hjb_system)
from riskaverse.config import dump_config, reference_config, validate_config
from riskaverse.generators import composite
from riskaverse.sde import brownian_increments
from riskaverse.verification import brownian_model, lq_model, random_generator

from conftest import const, scalar_model

FAST = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)
points2 = arrays(float, (2,), elements=finite)


# ---------------------------------------------------------------------------
# convex sets

def convex_sets():
    box = st.tuples(points2, arrays(float, (2,), elements=st.floats(0.1, 3))).map(
        lambda p: ConvexSet("box", lo=p[0], hi=p[0] + p[1]))
    ball = st.tuples(points2, st.floats(0.1, 3)).map(lambda p: ConvexSet("ball", center=p[0], radius=p[1]))
    # polytopes around the origin: random halfplanes with positive offsets
    poly = st.tuples(arrays(float, (4, 2), elements=st.floats(-1, 1)),
                     arrays(float, (4,), elements=st.floats(0.2, 2))).filter(
        lambda p: np.all(np.linalg.norm(p[0], axis=1) > 0.1)).map(
        lambda p: ConvexSet("polyhedron", A=p[0], b=p[1]))
    return st.one_of(box, ball, poly)


@FAST
@given(convex_sets(), points2)
def test_projection_idempotent(K, a):
    p = K.project(a)
    assert np.max(np.abs(K.project(p) - p)) <= 1e-10
    assert K.contains(p)


@FAST
@given(convex_sets(), points2, points2)
def test_projection_nonexpansive(K, a, b):
    assert np.linalg.norm(K.project(a) - K.project(b)) <= np.linalg.norm(a - b) + 1e-9


@FAST
@given(convex_sets(), points2, points2)
def test_dist_sq_midpoint_convex(K, a, b):
    assert K.dist_sq((a + b) / 2) <= (K.dist_sq(a) + K.dist_sq(b)) / 2 + 1e-9


@FAST
@given(convex_sets(), points2)
def test_projection_is_nearest_among_set_samples(K, a):
    p = K.project(a)
    rng = np.random.default_rng(0)
    cloud = K.project(rng.normal(scale=4.0, size=(200, 2)))
    assert np.linalg.norm(a - p) <= np.min(np.linalg.norm(cloud - a, axis=1)) + 1e-8


# ---------------------------------------------------------------------------
# Pareto ordering

vectors = arrays(float, st.integers(1, 4), elements=st.integers(0, 3).map(float))
point_sets = st.integers(1, 3).flatmap(
    lambda d: st.lists(arrays(float, (d,), elements=st.integers(0, 4).map(float)), min_size=1, max_size=40))


@FAST
@given(point_sets)
def test_filter_output_is_antichain(P):
    out = pareto_filter(P)
    assert not any(pareto_dominates(v, w) for v in out for w in out)


@FAST
@given(point_sets)
def test_filter_idempotent_and_covering(P):
    once = pareto_filter(P)
    assert [list(v) for v in pareto_filter(once)] == [list(v) for v in once]
    # every dropped point is dominated by a kept one
    kept = np.array(once)
    for v, keep in zip(P, pareto_mask(P)):
        if not keep:
            assert np.any(np.all(kept <= v, axis=1) & np.any(kept < v, axis=1))


@FAST
@given(st.integers(1, 4).flatmap(lambda d: st.tuples(*[arrays(float, (d,), elements=st.integers(0, 2).map(float))] * 3)))
def test_dominance_irreflexive_and_transitive(triple):
    u, v, w = triple
    assert not pareto_dominates(u, u)
    if pareto_dominates(u, v) and pareto_dominates(v, w):
        assert pareto_dominates(u, w)
    assert not (pareto_dominates(u, v) and pareto_dominates(v, u))


# ---------------------------------------------------------------------------
# generators

@FAST
@given(st.integers(0, 2**31))
def test_sum_lipschitz_bounded_by_parts(seed):
    rng = np.random.default_rng(seed)
    a, b = random_generator(rng), random_generator(rng)
    rep = check_assumption1(a + b, probes=200, seed=seed)
    assert rep.lipschitz_quotient <= a.lipschitz + b.lipschitz + 1e-9


@FAST
@given(st.integers(0, 2**31))
def test_composite_is_cost_plus_generator(seed):
    rng = np.random.default_rng(seed)
    g = random_generator(rng)
    model = scalar_model(box=(-1.0, 1.0))
    costs = RiskCostSpec.from_config([{"running": {"kind": "quadratic", "state": 2.0, "control": 0.5},
                                       "terminal": const(0.0)}], 1, [1])
    gj = composite(g, costs, model, 0)
    x, y, z, u = rng.normal(size=(5, 1)), rng.normal(size=5), rng.normal(size=(5, 1)), rng.uniform(-1, 1, (5, 1))
    assert np.array_equal(gj(0.3, x, y, z, u), costs.running[0](0.3, x, u) + g(0.3, y, z))


# ---------------------------------------------------------------------------
# forward simulation

@FAST
@given(st.integers(0, 2**32 - 1), st.integers(1, 300), st.integers(1, 4))
def test_simulation_deterministic(seed, n, threads):
    model = scalar_model({"kind": "ou", "rate": 0.7, "mean": 1.0})
    grid = TimeGrid(0.0, 1.0, 7)
    a = simulate_forward(model, None, grid, n, seed, [0.5], chunk_size=64)
    b = simulate_forward(model, None, grid, n, seed, [0.5], chunk_size=64, threads=threads)
    assert np.array_equal(a.states, b.states)


def test_increment_statistics_within_4_sigma():
    n, dt = 50_000, 0.01
    dB = brownian_increments(n, 5, 2, dt, seed=17)
    for k in range(5):
        inc = dB[:, k, :]
        assert np.all(np.abs(inc.mean(axis=0)) <= 4 * np.sqrt(dt / n))
        cov = np.cov(inc, rowvar=False)
        # sample covariance entries have standard deviation about dt * sqrt(2 / n)
        assert np.all(np.abs(cov - dt * np.eye(2)) <= 4 * dt * np.sqrt(2.0 / n))


def test_ou_mean_error_trend_under_refinement():
    # common random numbers: coarse increments are sums of the finest ones
    model = scalar_model({"kind": "ou", "rate": 1.0, "mean": 0.0})
    n, fine = 20_000, 64
    dB = brownian_increments(n, fine, 1, 1.0 / fine, seed=3)
    errors = []
    for M in (4, 8, 16, 32, 64):
        inc = dB.reshape(n, M, fine // M, 1).sum(axis=2)
        p = simulate_forward(model, None, TimeGrid(0.0, 1.0, M), n, 3, [2.0], increments=inc)
        errors.append(abs(p.states[:, -1, 0].mean() - 2 * np.exp(-1)))
    assert all(b < a for a, b in zip(errors, errors[1:]))
    # weak order one: the error roughly halves with the step
    assert 1.5 <= errors[0] / errors[1] <= 3.0


# ---------------------------------------------------------------------------
# backward solvers

@FAST
@given(st.integers(0, 2**31))
def test_lsmc_terminal_exact(seed):
    rng = np.random.default_rng(seed)
    paths = simulate_forward(scalar_model(), None, TimeGrid(0.0, 1.0, 5), 300, seed, [0.0])
    xi = np.sin(paths.states[:, -1, 0] * rng.uniform(0.5, 2))
    sol = solve_bsde_lsmc(paths, random_generator(rng), xi)
    assert np.array_equal(sol.Y[:, -1], xi)


@FAST
@given(st.integers(0, 2**31))
def test_tree_zero_generator_is_martingale(seed):
    rng = np.random.default_rng(seed)
    tree = TreeModel.brownian(int(rng.integers(1, 12)), 1.0)
    sol = solve_bsde_tree(tree, GeneratorFunctional("zero"), rng.normal(size=tree.depth + 1))
    for k in range(tree.depth):
        succ = 0.5 * (sol.Y[k + 1][1:] + sol.Y[k + 1][:-1])
        assert np.max(np.abs(sol.Y[k] - succ)) <= 1e-12


@FAST
@given(st.integers(0, 2**31))
def test_tree_comparison_exact(seed):
    rng = np.random.default_rng(seed)
    tree = TreeModel.brownian(6, 1.0)
    g2 = random_generator(rng)
    g1 = g2 + GeneratorFunctional("abs_z", mu=rng.uniform(0, 0.5))
    xi2 = rng.uniform(-1, 1, 7)
    xi1 = xi2 + rng.uniform(0, 0.5, 7)
    rep = check_comparison(tree, xi1, g1, xi2, g2, seed=seed)
    assert rep.passed and rep.tree_min_difference >= -1e-12


@FAST
@given(st.integers(0, 2**31), st.floats(-3, 3))
def test_tree_translation_exact_for_shift_invariant_generators(seed, nu):
    rng = np.random.default_rng(seed)
    g = [GeneratorFunctional("zero"), GeneratorFunctional("abs_z", mu=rng.uniform(0, 1)),
         GeneratorFunctional("linear_z", a=[rng.uniform(-1, 1)]),
         GeneratorFunctional("capped_quadratic_z", theta=rng.uniform(0, 1), R=rng.uniform(1, 2))][seed % 4]
    tree = TreeModel.brownian(8, 1.0)
    xi = rng.normal(size=9)
    a, b = solve_bsde_tree(tree, g, xi), solve_bsde_tree(tree, g, xi + nu)
    assert abs(b.root - a.root - nu) <= 1e-10


@pytest.mark.parametrize("g", [GeneratorFunctional("zero"), GeneratorFunctional("linear_z", a=[0.5]),
                               GeneratorFunctional("abs_z", mu=0.3), GeneratorFunctional("linear_y", b=0.5),
                               GeneratorFunctional("capped_quadratic_z", theta=1.0, R=2.0)])
def test_lsmc_agrees_with_tree(g):
    M = 50
    paths = simulate_forward(scalar_model(), None, TimeGrid(0.0, 1.0, M), 40_000, 21, [0.0])
    xT = paths.states[:, -1, 0]
    sol = solve_bsde_lsmc(paths, g, np.sin(xT) + 0.5 * xT)
    tree = TreeModel.brownian(400, 1.0)
    root = solve_bsde_tree(tree, g, np.sin(tree.leaves) + 0.5 * tree.leaves).root
    assert abs(sol.y0 - root) <= 3 * (sol.y0_stderr + 1.0 / M)


# ---------------------------------------------------------------------------
# value grids

HEAT_GRID = GridSpec([-3.0], [3.0], 31, 10)


@FAST
@given(st.floats(-5, 5), st.integers(0, 2**31))
def test_terminal_shift_raises_values_by_constant(kappa, seed):
    rng = np.random.default_rng(seed)
    model = brownian_model(control_box=(-1.0, 1.0))
    costs = RiskCostSpec.from_config([{"running": {"kind": "quadratic", "control": 1.0, "state": 0.5},
                                       "terminal": {"kind": "quadratic", "state": float(rng.uniform(0, 1))}}],
                                     1, [1])
    g = GeneratorFunctional("abs_z", mu=float(rng.uniform(0, 1)))
    base, _, _ = solve_hjb_system(model, costs, g, [0.0], HEAT_GRID, control_points=9)
    up, _, _ = solve_hjb_system(model, costs, g, [0.0], HEAT_GRID, control_points=9, terminal_shift=[kappa])
    assert np.max(np.abs(up.values - base.values - kappa)) <= 1e-9 * (1 + abs(kappa))


@FAST
@given(st.floats(0, 3))
def test_terminal_increase_never_lowers_values(bump):
    model = brownian_model(control_box=(-1.0, 1.0))
    g = GeneratorFunctional("linear_y", b=0.5)
    low = RiskCostSpec.from_config([{"running": {"kind": "quadratic", "control": 1.0},
                                     "terminal": {"kind": "quadratic", "state": 1.0}}], 1, [1])
    high = RiskCostSpec.from_config([{"running": {"kind": "quadratic", "control": 1.0},
                                      "terminal": {"kind": "quadratic", "state": 1.0, "offset": bump}}], 1, [1])
    a, _, _ = solve_hjb_system(model, low, g, [0.0], HEAT_GRID, control_points=9)
    b, _, _ = solve_hjb_system(model, high, g, [0.0], HEAT_GRID, control_points=9)
    assert np.min(b.values - a.values) >= -1e-12


@FAST
@given(st.floats(-10, 10))
def test_policy_invariant_under_running_cost_shift(c):
    model = lq_model(2.0)
    grid = GridSpec([-2.0], [2.0], 21, 10)
    mk = lambda off: RiskCostSpec.from_config([{"running": {"kind": "quadratic", "state": 1.0, "control": 1.0,  # noqa: E731
                                                            "offset": off}, "terminal": const(0.0)}], 1, [1])
    g = GeneratorFunctional("zero")
    vg, _, _ = solve_hjb_system(model, mk(0.0), g, [0.0], grid, control_points=9)
    shifted = type(vg)(grid, vg.values + c)
    a, _, _ = extract_policy(vg, model, mk(0.0), g, [0.0], 0, control_points=9)
    b, _, _ = extract_policy(shifted, model, mk(c), g, [0.0], 0, control_points=9)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# configuration

@FAST
@given(st.integers(0, 2**31), st.integers(1, 200), st.floats(0.1, 5))
def test_config_round_trip(seed, steps, T):
    cfg = reference_config()
    cfg["seed"] = seed
    cfg["grids"]["time"] = {"T": T, "steps": steps}
    text = dump_config(validate_config(cfg))
    again = json.loads(text)
    assert dump_config(validate_config(again)) == text
    assert again == cfg
