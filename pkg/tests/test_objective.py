import numpy as np
import pytest

from effectlab import (
    CostModel,
    InfeasibleConfigError,
    ObjectiveSpec,
    ShrinkageSpec,
    build_space,
    delta_cost,
    enumerate_grid,
    estimate_effects_cm,
    gen_teacher,
    log_from_arrays,
    objective,
    objective_grid,
    predict_grid,
    risk_penalty,
    support_counts,
    two_factor_predict,
    TeacherSpec,
)
from conftest import full_grid_log

TINY_TAU = ShrinkageSpec(tau_main=1e-12, tau_pair=1e-12)


@pytest.fixture
def xor_setup(xor_log):
    table = estimate_effects_cm(xor_log, shrinkage=TINY_TAU)
    return table, support_counts(xor_log)


def test_predict_zero_table(xor_setup):
    table, _ = xor_setup
    import dataclasses

    zeroed = dataclasses.replace(
        table,
        mains=tuple(np.zeros_like(g) for g in table.mains),
        pairs={jk: np.zeros_like(m) for jk, m in table.pairs.items()},
    )
    for x in enumerate_grid(table.space):
        assert two_factor_predict(zeroed, x) == pytest.approx(table.mu)


def test_predict_xor_exact(xor_setup):
    table, _ = xor_setup
    assert two_factor_predict(table, (0, 1)) == pytest.approx(1.0)
    assert two_factor_predict(table, (0, 0)) == pytest.approx(0.0)


def test_predict_recovers_second_order_teacher():
    space = build_space([("a", ["0", "1"]), ("b", ["0", "1", "2"]), ("c", ["0", "1"])])
    teacher = gen_teacher(TeacherSpec(space, residual_scale=0.0, noise=0.0, seed=3))
    log = full_grid_log(space, teacher.values)
    table = estimate_effects_cm(log, shrinkage=TINY_TAU)
    grid_pred = predict_grid(table)
    for x in enumerate_grid(space):
        assert two_factor_predict(table, x) == pytest.approx(teacher.response(x), abs=1e-10)
        assert grid_pred[x] == pytest.approx(teacher.response(x), abs=1e-10)


def test_risk_penalty_values(space_2x2):
    log = log_from_arrays(space_2x2, [(0, 0)] * 9, [0.0] * 9)
    sc = support_counts(log)
    assert risk_penalty(sc, (0, 0), gamma=1.0) == pytest.approx(0.1)  # n=9
    assert risk_penalty(sc, (1, 1), gamma=1.0) == pytest.approx(1.0)  # unseen


def test_risk_penalty_three_factor_sum():
    space = build_space([(f"f{i}", ["0", "1"]) for i in range(3)])
    log = log_from_arrays(space, enumerate_grid(space)[:1] * 1, [0.0])
    # one record puts n=1 in exactly the (0,0) cell of each of the 3 pairs
    sc = support_counts(log)
    assert risk_penalty(sc, (0, 0, 0), gamma=1.0) == pytest.approx(3 * 0.5)


def test_risk_penalty_monotone_and_range(space_2x2):
    lo = log_from_arrays(space_2x2, [(0, 0)], [0.0])
    hi = log_from_arrays(space_2x2, [(0, 0)] * 50, [0.0] * 50)
    r_lo = risk_penalty(support_counts(lo), (0, 0), gamma=1.0)
    r_hi = risk_penalty(support_counts(hi), (0, 0), gamma=1.0)
    assert r_hi < r_lo
    d = 2
    assert 0 < r_hi <= d * (d - 1) / 2


def test_objective_reduces_to_prediction(xor_setup):
    table, sc = xor_setup
    spec = ObjectiveSpec(lambda_risk=0.0, lambda_cost=0.0)
    for x in enumerate_grid(table.space):
        assert objective(table, x, sc, spec) == pytest.approx(two_factor_predict(table, x))


def test_objective_cost_linearity(xor_setup):
    table, sc = xor_setup
    cost = CostModel(
        table.space,
        (np.array([0.0, 0.1]), np.array([0.2, 0.0])),
    )
    base = ObjectiveSpec(lambda_risk=0.0, lambda_cost=0.0)
    with_cost = ObjectiveSpec(lambda_risk=0.0, lambda_cost=1.0)
    x = (1, 0)
    drop = objective(table, x, sc, base, cost) - objective(table, x, sc, with_cost, cost)
    assert drop == pytest.approx(0.3)


def test_objective_infeasible_is_error(xor_setup):
    table, sc = xor_setup
    spec = ObjectiveSpec(banned_levels={0: frozenset({1})})
    with pytest.raises(InfeasibleConfigError):
        objective(table, (1, 0), sc, spec)
    spec2 = ObjectiveSpec(banned_configs=frozenset({(0, 1)}))
    with pytest.raises(InfeasibleConfigError):
        objective(table, (0, 1), sc, spec2)


def test_penalty_changes_argmax(space_2x2):
    # The prediction optimum sits on an unsupported cell; the risk penalty
    # moves the exhaustive argmax to a supported one.
    configs = [(0, 0)] * 6 + [(0, 1)] * 6 + [(1, 0)] * 6
    responses = [0.0] * 6 + [1.0] * 6 + [1.0] * 6
    log = log_from_arrays(space_2x2, configs, responses)
    table = estimate_effects_cm(log, shrinkage=TINY_TAU)
    sc = support_counts(log)

    free = ObjectiveSpec(lambda_risk=0.0)
    priced = ObjectiveSpec(lambda_risk=2.0, gamma=1.0)
    grid = enumerate_grid(space_2x2)
    J_free, _ = objective_grid(table, sc, free)
    J_priced, _ = objective_grid(table, sc, priced)
    argmax_free = grid[int(np.argmax([J_free[x] for x in grid]))]
    argmax_priced = grid[int(np.argmax([J_priced[x] for x in grid]))]
    assert argmax_free == (1, 1)  # extrapolated, never observed
    assert argmax_priced != argmax_free


def test_baseline_shift_preserves_argmax(space_2x2):
    rng = np.random.default_rng(17)
    values = rng.normal(size=(2, 2))
    log = full_grid_log(space_2x2, values, replicates=2)
    shifted = full_grid_log(space_2x2, values + 5.0, replicates=2)
    spec = ObjectiveSpec(lambda_risk=1.0)
    t1, t2 = (estimate_effects_cm(l, shrinkage=TINY_TAU) for l in (log, shifted))
    s1, s2 = support_counts(log), support_counts(shifted)
    J1, _ = objective_grid(t1, s1, spec)
    J2, _ = objective_grid(t2, s2, spec)
    assert np.max(np.abs((J2 - J1) - 5.0)) < 1e-9
    assert np.unravel_index(np.argmax(J1), J1.shape) == np.unravel_index(np.argmax(J2), J2.shape)


def test_objective_decomposes_into_terms(xor_setup):
    table, sc = xor_setup
    cost = CostModel(table.space, (np.array([0.0, 0.5]), np.array([0.1, 0.0])), offset=1.0)
    spec = ObjectiveSpec(lambda_risk=0.7, lambda_cost=0.3)
    for x in enumerate_grid(table.space):
        direct = objective(table, x, sc, spec, cost)
        term_sum = table.mu
        term_sum += sum(table.mains[j][x[j]] for j in range(2))
        term_sum += table.pairs[(0, 1)][x[0], x[1]]
        term_sum -= 0.7 * risk_penalty(sc, x, 1.0)
        term_sum -= 0.3 * cost.total(x)
        assert direct == pytest.approx(term_sum, abs=1e-12)


def test_delta_cost(space_2x2):
    cost = CostModel(space_2x2, (np.array([0.0, 0.5]), np.array([0.0, 0.0])))
    assert delta_cost(cost, 0, 0, (0, 0)) == 0.0
    assert delta_cost(cost, 0, 1, (0, 0)) == pytest.approx(0.5)
    assert delta_cost(cost, 0, 0, (1, 0)) == pytest.approx(-0.5)


def test_spec_validation():
    with pytest.raises(ValueError):
        ObjectiveSpec(lambda_risk=-1.0)
    with pytest.raises(ValueError):
        ObjectiveSpec(gamma=0.0)


def test_spec_from_dict(space_2x2):
    data = {
        "lambda_risk": 0.5,
        "lambda_cost": 1.0,
        "gamma": 2.0,
        "banned_levels": {"a": ["a1"]},
        "banned_configs": [["a0", "b1"]],
        "costs": {"a": {"a0": 0.0, "a1": 1.0}},
    }
    spec = ObjectiveSpec.from_dict(space_2x2, data)
    cost = CostModel.from_dict(space_2x2, data)
    assert not spec.feasible((1, 0))
    assert not spec.feasible((0, 1))
    assert spec.feasible((0, 0))
    assert cost.total((1, 1)) == pytest.approx(1.0)
