import numpy as np
import pytest

from effectlab import (
    CostModel,
    InfeasibleConfigError,
    ObjectiveSpec,
    SearchSpec,
    ShrinkageSpec,
    TeacherSpec,
    coordinate_ascent,
    diag_dominance_check,
    enumerate_grid,
    estimate_effects_cm,
    gen_teacher,
    local_gain,
    log_from_arrays,
    multistart,
    near_opt_bound,
    objective,
    objective_grid,
    support_counts,
    two_swap_bound,
    verify_1swap,
)
from conftest import full_grid_log, random_space

TINY_TAU = ShrinkageSpec(tau_main=1e-12, tau_pair=1e-12)


def make_instance(rng, d=None, pair_scale=0.5, n_records=None):
    """Random effect table plus support from a random log."""
    space = random_space(rng, d=d)
    teacher = gen_teacher(TeacherSpec(
        space, pair_scale=pair_scale, residual_scale=0.0, noise=0.0,
        seed=int(rng.integers(0, 2**31)),
    ))
    n = n_records or 3 * space.grid_size
    grid = enumerate_grid(space)
    idx = rng.integers(0, len(grid), size=n)
    log = log_from_arrays(
        space, [grid[i] for i in idx], [teacher.response(grid[i]) for i in idx]
    )
    table = estimate_effects_cm(log, shrinkage=TINY_TAU)
    return table, support_counts(log)


def dominant_instance(rng, d=3):
    """Mains with wide gaps and tiny interactions, risk off: the dominance
    certificate should fire."""
    space = random_space(rng, d=d)
    teacher = gen_teacher(TeacherSpec(
        space, main_scale=0.0, pair_scale=0.0, residual_scale=0.0, noise=0.0,
        seed=int(rng.integers(0, 2**31)),
    ))
    mains = []
    for L in space.level_counts:
        base = rng.permutation(L).astype(float) * 2.0  # gaps of at least 2
        mains.append(base - base.mean())
    pairs = {}
    for jk in teacher.truth.pairs:
        shape = teacher.truth.pairs[jk].shape
        m = rng.normal(0, 0.02, size=shape)
        m -= m.mean(axis=1, keepdims=True)
        m -= m.mean(axis=0, keepdims=True)
        pairs[jk] = m
    import dataclasses

    table = dataclasses.replace(teacher.truth, mains=tuple(mains), pairs=pairs)
    log = log_from_arrays(space, enumerate_grid(space), [0.0] * space.grid_size)
    return table, support_counts(log)


def exhaustive_argmax(table, sc, spec, cost=None):
    grid = enumerate_grid(table.space)
    best = None
    for x in grid:
        if not spec.feasible(x):
            continue
        val = objective(table, x, sc, spec, cost)
        if best is None or val > best[0] + 1e-15:
            best = (val, x)
    return best


# ---------------------------------------------------------------------------
# Local gain
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(8))
def test_local_gain_matches_objective_difference(seed):
    rng = np.random.default_rng(200 + seed)
    table, sc = make_instance(rng)
    spec = ObjectiveSpec(lambda_risk=0.8, lambda_cost=0.5)
    cost = CostModel(
        table.space,
        tuple(rng.uniform(0, 1, size=L) for L in table.space.level_counts),
    )
    grid = enumerate_grid(table.space)
    x = grid[int(rng.integers(0, len(grid)))]
    for j in range(table.space.num_factors):
        base = local_gain(table, sc, spec, cost, j, x[j], x)
        for lvl in range(table.space.level_counts[j]):
            swapped = x[:j] + (lvl,) + x[j + 1:]
            direct = objective(table, swapped, sc, spec, cost) - objective(table, x, sc, spec, cost)
            via_gain = local_gain(table, sc, spec, cost, j, lvl, x) - base
            assert direct == pytest.approx(via_gain, abs=1e-10)


def test_local_gain_additive_depends_on_mains_and_cost_only():
    rng = np.random.default_rng(7)
    space = random_space(rng, d=3)
    teacher = gen_teacher(TeacherSpec(space, pair_scale=0.0, residual_scale=0.0,
                                      noise=0.0, seed=1))
    log = full_grid_log(space, teacher.values)
    table = estimate_effects_cm(log, shrinkage=TINY_TAU)
    sc = support_counts(log)
    spec = ObjectiveSpec(lambda_risk=0.0, lambda_cost=1.0)
    cost = CostModel(space, tuple(np.arange(L) * 0.1 for L in space.level_counts))
    grid = enumerate_grid(space)
    for lvl in range(space.level_counts[0]):
        gains = {
            x: local_gain(table, sc, spec, cost, 0, lvl, x) for x in grid[:4]
        }
        values = list(gains.values())
        assert max(values) - min(values) < 1e-9  # context-free for additive tables


def test_local_gain_same_level_is_reference(space_2x2, xor_log):
    table = estimate_effects_cm(xor_log, shrinkage=TINY_TAU)
    sc = support_counts(xor_log)
    spec = ObjectiveSpec(lambda_risk=0.0)
    x = (0, 1)
    g = local_gain(table, sc, spec, None, 0, x[0], x)
    assert g == pytest.approx(local_gain(table, sc, spec, None, 0, x[0], x))
    # replacing a level by itself never changes the objective
    assert objective(table, x, sc, spec) - objective(table, x, sc, spec) == 0.0


# ---------------------------------------------------------------------------
# Coordinate ascent
# ---------------------------------------------------------------------------

def test_ascent_additive_one_sweep():
    rng = np.random.default_rng(31)
    space = random_space(rng, d=4)
    teacher = gen_teacher(TeacherSpec(space, pair_scale=0.0, residual_scale=0.0,
                                      noise=0.0, seed=2))
    log = full_grid_log(space, teacher.values)
    table = estimate_effects_cm(log, shrinkage=TINY_TAU)
    sc = support_counts(log)
    spec = ObjectiveSpec(lambda_risk=0.0)
    start = tuple(0 for _ in range(space.num_factors))
    x, trace = coordinate_ascent(table, sc, spec, None, start)
    expected = tuple(int(np.argmax(g)) for g in table.mains)
    assert x == expected
    assert trace.steps[1][1] == expected  # reached after the first sweep


@pytest.mark.parametrize("seed", range(20))
def test_ascent_reaches_1swap_optimum(seed):
    rng = np.random.default_rng(400 + seed)
    table, sc = make_instance(rng)
    spec = ObjectiveSpec(lambda_risk=float(rng.uniform(0, 1)))
    grid = enumerate_grid(table.space)
    start = grid[int(rng.integers(0, len(grid)))]
    x, trace = coordinate_ascent(table, sc, spec, None, start)
    assert trace.termination == "converged"
    assert trace.verified_1swap is True
    ok, violation = verify_1swap(table, sc, spec, None, x)
    assert ok, violation
    values = trace.values
    assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))


def test_ascent_trace_strictly_increases_between_updates():
    rng = np.random.default_rng(77)
    table, sc = make_instance(rng, d=3)
    spec = ObjectiveSpec(lambda_risk=0.3)
    start = tuple(0 for _ in table.space.level_counts)
    _, trace = coordinate_ascent(table, sc, spec, None, start)
    vals = trace.values
    for a, b in zip(vals, vals[1:-1]):
        assert b > a - 1e-12
    assert len(trace.steps) - 1 <= table.space.grid_size  # sweep count bound


def test_ascent_infeasible_start(space_2x2, xor_log):
    table = estimate_effects_cm(xor_log, shrinkage=TINY_TAU)
    sc = support_counts(xor_log)
    spec = ObjectiveSpec(banned_levels={0: frozenset({0})})
    with pytest.raises(InfeasibleConfigError):
        coordinate_ascent(table, sc, spec, None, (0, 0))


def test_two_basin_instance_and_multistart(space_2x2):
    # Diagonal interaction with a slight tilt: two 1-swap optima whose values
    # differ; exhaustive evaluation identifies both basins.
    import dataclasses

    log = full_grid_log(space_2x2, np.zeros((2, 2)))
    base = estimate_effects_cm(log, shrinkage=TINY_TAU)
    mains = (np.array([0.05, -0.05]), np.array([0.0, 0.0]))
    pair = np.array([[0.5, -0.5], [-0.5, 0.5]])
    table = dataclasses.replace(base, mains=mains, pairs={(0, 1): pair})
    sc = support_counts(log)
    spec = ObjectiveSpec(lambda_risk=0.0)

    values = {x: objective(table, x, sc, spec) for x in enumerate_grid(space_2x2)}
    optima = [x for x in values if verify_1swap(table, sc, spec, None, x)[0]]
    assert sorted(optima) == [(0, 0), (1, 1)]
    assert values[(0, 0)] > values[(1, 1)]

    x_a, _ = coordinate_ascent(table, sc, spec, None, (0, 0))
    x_b, _ = coordinate_ascent(table, sc, spec, None, (1, 1))
    assert {x_a, x_b} == {(0, 0), (1, 1)}

    best, traces = multistart(table, sc, spec, None, SearchSpec(restarts=8, beam=2, seed=0))
    assert best == (0, 0)
    assert len(traces) >= 1


# ---------------------------------------------------------------------------
# Multistart
# ---------------------------------------------------------------------------

def test_multistart_single_restart_equals_greedy():
    rng = np.random.default_rng(51)
    space = random_space(rng, d=3)
    teacher = gen_teacher(TeacherSpec(space, pair_scale=0.0, residual_scale=0.0,
                                      noise=0.0, seed=3))
    log = full_grid_log(space, teacher.values)
    table = estimate_effects_cm(log, shrinkage=TINY_TAU)
    sc = support_counts(log)
    spec = ObjectiveSpec(lambda_risk=0.0)
    greedy_start = tuple(int(np.argmax(g)) for g in table.mains)
    x_greedy, _ = coordinate_ascent(table, sc, spec, None, greedy_start)
    x_multi, traces = multistart(table, sc, spec, None, SearchSpec(restarts=1))
    assert x_multi == x_greedy
    assert len(traces) == 1


def test_multistart_beam_one_repeats_greedy_start():
    rng = np.random.default_rng(52)
    table, sc = make_instance(rng, d=3)
    spec = ObjectiveSpec(lambda_risk=0.0)
    _, traces = multistart(table, sc, spec, None, SearchSpec(restarts=5, beam=1, seed=1))
    starts = {t.steps[0][1] for t in traces}
    assert len(starts) == 1


def test_multistart_deterministic():
    rng = np.random.default_rng(53)
    table, sc = make_instance(rng)
    spec = ObjectiveSpec(lambda_risk=0.5)
    r1 = multistart(table, sc, spec, None, SearchSpec(restarts=6, beam=3, seed=11))
    r2 = multistart(table, sc, spec, None, SearchSpec(restarts=6, beam=3, seed=11))
    assert r1[0] == r2[0]
    assert [t.final for t in r1[1]] == [t.final for t in r2[1]]


def test_multistart_dominant_converges_everywhere():
    rng = np.random.default_rng(54)
    table, sc = dominant_instance(rng, d=3)
    spec = ObjectiveSpec(lambda_risk=0.0)
    report = diag_dominance_check(table, sc, spec)
    assert report.holds
    _, traces = multistart(table, sc, spec, None, SearchSpec(restarts=6, beam=3, seed=2))
    endpoints = {t.final for t in traces}
    assert len(endpoints) == 1


# ---------------------------------------------------------------------------
# 1-swap verification
# ---------------------------------------------------------------------------

def test_verify_global_optimum_is_1swap():
    rng = np.random.default_rng(61)
    table, sc = make_instance(rng, d=3)
    spec = ObjectiveSpec(lambda_risk=0.4)
    _, x_star = exhaustive_argmax(table, sc, spec)
    ok, _ = verify_1swap(table, sc, spec, None, x_star)
    assert ok


def test_verify_detects_repairing_swap():
    rng = np.random.default_rng(62)
    space = random_space(rng, d=3)
    teacher = gen_teacher(TeacherSpec(space, pair_scale=0.0, residual_scale=0.0,
                                      noise=0.0, seed=5))
    log = full_grid_log(space, teacher.values)
    table = estimate_effects_cm(log, shrinkage=TINY_TAU)
    sc = support_counts(log)
    spec = ObjectiveSpec(lambda_risk=0.0)
    optimum = tuple(int(np.argmax(g)) for g in table.mains)
    # push one coordinate off the additive optimum
    wrong_level = (optimum[0] + 1) % space.level_counts[0]
    perturbed = (wrong_level,) + optimum[1:]
    ok, violation = verify_1swap(table, sc, spec, None, perturbed)
    assert not ok
    j, lvl, gain = violation
    assert (j, lvl) == (0, optimum[0])
    assert gain > 0


# ---------------------------------------------------------------------------
# Dominance certificate
# ---------------------------------------------------------------------------

def test_dominance_zero_interactions():
    rng = np.random.default_rng(71)
    space = random_space(rng, d=3)
    teacher = gen_teacher(TeacherSpec(space, main_scale=1.0, pair_scale=0.0,
                                      residual_scale=0.0, noise=0.0, seed=6))
    log = full_grid_log(space, teacher.values)
    table = estimate_effects_cm(log, shrinkage=TINY_TAU)
    sc = support_counts(log)
    spec = ObjectiveSpec(lambda_risk=0.0)
    report = diag_dominance_check(table, sc, spec)
    assert np.max(report.influence) < 1e-9
    assert report.holds


def test_dominance_fails_for_pure_interaction(xor_log):
    table = estimate_effects_cm(xor_log, shrinkage=TINY_TAU)
    sc = support_counts(xor_log)
    spec = ObjectiveSpec(lambda_risk=0.0)
    report = diag_dominance_check(table, sc, spec)
    assert not report.holds


@pytest.mark.parametrize("seed", range(10))
def test_dominance_implies_global_optimum(seed):
    rng = np.random.default_rng(800 + seed)
    table, sc = dominant_instance(rng, d=int(rng.integers(2, 4)))
    spec = ObjectiveSpec(lambda_risk=0.0)
    report = diag_dominance_check(table, sc, spec)
    assert report.holds
    best, _ = multistart(table, sc, spec, None, SearchSpec(restarts=4, beam=3, seed=seed))
    _, x_star = exhaustive_argmax(table, sc, spec)
    assert best == x_star


# ---------------------------------------------------------------------------
# Gap bounds
# ---------------------------------------------------------------------------

def test_near_opt_bound_values():
    assert near_opt_bound(0.0) == 0.0
    assert near_opt_bound(0.05) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        near_opt_bound(-0.1)


@pytest.mark.parametrize("seed", range(10))
def test_near_opt_bound_empirical(seed):
    import dataclasses

    rng = np.random.default_rng(900 + seed)
    table, sc = make_instance(rng, d=3)
    spec = ObjectiveSpec(lambda_risk=0.2)
    noisy = dataclasses.replace(
        table,
        mains=tuple(g + rng.normal(0, 0.05, g.shape) for g in table.mains),
        pairs={jk: m + rng.normal(0, 0.05, m.shape) for jk, m in table.pairs.items()},
    )
    J_true, _ = objective_grid(table, sc, spec)
    J_hat, _ = objective_grid(noisy, sc, spec)
    eps = float(np.max(np.abs(J_hat - J_true)))
    x_hat = np.unravel_index(int(np.argmax(J_hat)), J_hat.shape)
    x_star = np.unravel_index(int(np.argmax(J_true)), J_true.shape)
    assert J_true[x_hat] >= J_true[x_star] - near_opt_bound(eps) - 1e-12


def test_two_swap_bound_additive_zero_gap():
    rng = np.random.default_rng(81)
    space = random_space(rng, d=3)
    teacher = gen_teacher(TeacherSpec(space, pair_scale=0.0, residual_scale=0.0,
                                      noise=0.0, seed=7))
    log = full_grid_log(space, teacher.values)
    table = estimate_effects_cm(log, shrinkage=TINY_TAU)
    sc = support_counts(log)
    spec = ObjectiveSpec(lambda_risk=0.0)
    _, x_star = exhaustive_argmax(table, sc, spec)
    bound = two_swap_bound(table, sc, spec, None, x_star)
    assert bound >= -1e-12
    # actual gap is zero at a global optimum
    assert 0.0 <= bound + 1e-12


def test_two_swap_bound_covers_actual_gap(space_2x2):
    import dataclasses

    log = full_grid_log(space_2x2, np.zeros((2, 2)))
    base = estimate_effects_cm(log, shrinkage=TINY_TAU)
    mains = (np.array([0.05, -0.05]), np.array([0.0, 0.0]))
    pair = np.array([[0.5, -0.5], [-0.5, 0.5]])
    table = dataclasses.replace(base, mains=mains, pairs={(0, 1): pair})
    sc = support_counts(log)
    spec = ObjectiveSpec(lambda_risk=0.0)
    # (1, 1) is the worse 1-swap optimum; the bound covers its gap
    x_local = (1, 1)
    ok, _ = verify_1swap(table, sc, spec, None, x_local)
    assert ok
    gap = objective(table, (0, 0), sc, spec) - objective(table, x_local, sc, spec)
    bound = two_swap_bound(table, sc, spec, None, x_local)
    assert gap <= bound + 1e-12


def test_two_swap_bound_zero_table(space_2x2):
    log = full_grid_log(space_2x2, np.zeros((2, 2)))
    table = estimate_effects_cm(log, shrinkage=TINY_TAU)
    sc = support_counts(log)
    spec = ObjectiveSpec(lambda_risk=0.0)
    assert two_swap_bound(table, sc, spec, None, (0, 0)) == pytest.approx(0.0, abs=1e-12)


def test_two_swap_bound_requires_local_optimum(space_2x2):
    import dataclasses

    log = full_grid_log(space_2x2, np.zeros((2, 2)))
    base = estimate_effects_cm(log, shrinkage=TINY_TAU)
    table = dataclasses.replace(base, mains=(np.array([-1.0, 1.0]), np.array([0.0, 0.0])))
    sc = support_counts(log)
    spec = ObjectiveSpec(lambda_risk=0.0)
    with pytest.raises(ValueError, match="1-swap"):
        two_swap_bound(table, sc, spec, None, (0, 0))
