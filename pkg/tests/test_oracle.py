from fractions import Fraction

import pytest

from budgetdp.budget_dpp import solve, unconstrained_value
from budgetdp.constraint_lib import HalfSpace, g_floor, g_quantile, indicator_reward, linear_reward, power_reward, zero_constraint
from budgetdp.errors import CapExceededError
from budgetdp.oracle import (
    INFEASIBLE,
    OracleBudget,
    count_strategies,
    enumerate_strategies,
    min_max_constraint,
    oracle_value,
    oracle_value_recursive,
    supinf_supsup_check,
)
from budgetdp.path_lattice import StoppingRule, induced_measure

from instances import constraints, dyadic_levels, models, rewards

HALF = Fraction(1, 2)


def test_strategy_counts():
    assert len(list(enumerate_strategies(models(1)["bet"]))) == 2
    assert len(list(enumerate_strategies(models(2)["bet"]))) == 8
    assert len(list(enumerate_strategies(models(2)["walk"]))) == 1
    assert count_strategies(models(3)["bet"]) == 2**7


def test_strategies_distinct():
    model = models(2)["stakes"]
    measures = {induced_measure(model, s) for s in enumerate_strategies(model)}
    assert len(measures) == 8


def test_cap_exceeded_reports_count():
    with pytest.raises(CapExceededError) as exc:
        list(enumerate_strategies(models(3)["bet"], budget=OracleBudget(max_strategies=100)))
    assert exc.value.count == 128 and exc.value.cap == 100


def test_caps_positive():
    with pytest.raises(ValueError):
        OracleBudget(max_strategies=0)


def test_zero_constraint_is_plain_max():
    model = models(2)["stakes"]
    f = power_reward(2)
    value, strategy = oracle_value(model, f, zero_constraint(), 0)
    assert value == unconstrained_value(model, f)
    assert strategy is not INFEASIBLE


def test_below_min_max_is_infeasible():
    model = models(2)["stakes"]
    g = constraints(2)["quantile"]
    mm = min_max_constraint(model, g)
    value, strategy = oracle_value(model, linear_reward(), g, mm - Fraction(1, 8))
    assert value == float("-inf") and strategy is INFEASIBLE and not strategy
    assert oracle_value(model, linear_reward(), g, mm)[0] > float("-inf")


def test_quantile_instance_matches_solver():
    model = models(2)["stakes"]
    g = constraints(2)["quantile"]
    f = power_reward(2)
    surface, _ = solve(model, f, g)
    for m in dyadic_levels(2):
        ov, _ = oracle_value(model, f, g, m)
        assert ov == surface.root_value(m) == oracle_value_recursive(model, f, g, m)


def test_recursive_cross_check_on_suite():
    for N in (1, 2):
        for model in models(N).values():
            for g in constraints(N).values():
                for f in rewards().values():
                    for m in dyadic_levels(N):
                        assert oracle_value(model, f, g, m)[0] == oracle_value_recursive(model, f, g, m)


def test_large_budget_is_unconstrained():
    for model in models(2).values():
        f = power_reward(2)
        for g in constraints(2).values():
            assert oracle_value(model, f, g, 1)[0] == unconstrained_value(model, f)


def test_monotone_in_budget():
    model = models(2)["saferisky"]
    f = indicator_reward(HalfSpace(0, 2))
    for g in constraints(2).values():
        vals = [oracle_value(model, f, g, m)[0] for m in dyadic_levels(2)]
        assert vals == sorted(vals)


def test_argmax_deterministic():
    model = models(2)["bet"]
    f = linear_reward()
    a = oracle_value(model, f, zero_constraint(), 0)[1]
    b = oracle_value(model, f, zero_constraint(), 0)[1]
    assert a.name == b.name == "enum#0"


def test_subtree_root():
    model = models(3)["bet"]
    root = model.child(model.root(), 1, 0)
    g = g_floor(0)
    surface, _ = solve(model, linear_reward(), g, root=root)
    for m in dyadic_levels(3):
        assert oracle_value(model, linear_reward(), g, m, root=root)[0] == surface.root_value(m)


def test_supinf_unconstrained():
    model = models(2)["stakes"]
    f = power_reward(2)
    surface, _ = solve(model, f, zero_constraint())
    rep = supinf_supsup_check(model, f, zero_constraint(), 0, 1, surface)
    assert rep.passed and rep.supsup == unconstrained_value(model, f)


def test_supinf_at_frontier_and_tau_one():
    for name in ("floor", "quantile", "drawdown"):
        model = models(2)["bet"]
        g = constraints(2)[name]
        f = indicator_reward(HalfSpace(0, 2))
        surface, _ = solve(model, f, g)
        w = surface.w[surface.root]
        for tau in (StoppingRule.at(1), StoppingRule.terminal()):
            rep = supinf_supsup_check(model, f, g, w, tau, surface)
            assert rep.passed, (name, tau.name, rep.to_dict())
            assert rep.supsup == surface.root_value(w)


def test_supinf_infeasible_all_minus_inf():
    model = models(1)["walk"]
    g = g_quantile(HalfSpace(0, 1))
    surface, _ = solve(model, linear_reward(), g)
    rep = supinf_supsup_check(model, linear_reward(), g, 0, 1, surface)
    assert rep.supsup == rep.supinf == rep.dp_value == float("-inf") and rep.passed


def test_supinf_report_format():
    model = models(2)["bet"]
    g = constraints(2)["floor"]
    surface, _ = solve(model, linear_reward(), g)
    rep = supinf_supsup_check(model, linear_reward(), g, HALF, 1, surface)
    d = rep.to_dict()
    assert set(d) == {"instance_hash", "dp_value", "oracle_value", "supsup", "supinf", "pass"}
    assert len(d["instance_hash"]) == 16
    assert rep.to_json() == supinf_supsup_check(model, linear_reward(), g, HALF, 1, surface).to_json()


def test_supinf_cap():
    model = models(2)["bet"]
    g = constraints(2)["quantile"]
    surface, _ = solve(model, linear_reward(), g)
    with pytest.raises(CapExceededError):
        supinf_supsup_check(model, linear_reward(), g, 1, 1, surface,
                            budget=OracleBudget(max_budget_processes=2))
