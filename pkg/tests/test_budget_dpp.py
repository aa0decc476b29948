import json
import warnings
from fractions import Fraction

import pytest

from budgetdp.budget_dpp import (
    BudgetGrid,
    BudgetProcess,
    SummaryGraph,
    allocate_budget,
    build_budget_process,
    check_budget_process,
    deterministic_constraint_values,
    dpp_verify,
    minimal_budget,
    pathwise_value,
    realize_strategy,
    snell_envelope,
    solve,
    unconstrained_value,
)
from budgetdp.constraint_lib import (
    HalfSpace,
    from_path_function,
    g_floor,
    g_quantile,
    indicator_reward,
    linear_reward,
    power_reward,
    zero_constraint,
)
from budgetdp.errors import (
    BudgetConstructionError,
    GridTooCoarseWarning,
    InfeasibleRootWarning,
    InfeasibleStartError,
    SnellGapError,
)
from budgetdp.oracle import enumerate_strategies
from budgetdp.path_lattice import LatticeModel, StoppingRule, Strategy, induced_measure

from instances import constraints, dyadic_levels, models, rewards

HALF = Fraction(1, 2)
QUARTER = Fraction(1, 4)


def bet_model(N, x0=1, controls=(0, 1)):
    return LatticeModel(N, (HALF, HALF), controls, lambda k, x, a, j: (x[0] + (a if j == 0 else -a),), (x0,))


def test_minimal_budget_one_step():
    model = bet_model(1, x0=0, controls=(1,))
    g = g_quantile(HalfSpace(0, 0, "above"))
    assert minimal_budget(model, g).root == HALF


def test_minimal_budget_zero_constraint():
    table = minimal_budget(bet_model(3), zero_constraint())
    assert set(table.w.values()) == {0}


def test_unconstrained_solve_equals_classical_dp():
    model = bet_model(2)
    f = power_reward(2)
    surface, _ = solve(model, f, zero_constraint())
    assert surface.root_value(0) == unconstrained_value(model, f) == 3


def test_large_budget_removes_indicator_constraint():
    for name, g in constraints(2).items():
        model = models(2)["stakes"]
        f = power_reward(2)
        surface, _ = solve(model, f, g)
        assert surface.root_value(1) == unconstrained_value(model, f), name


def test_allocate_forced_at_zero():
    v, alloc = allocate_budget(0, [[0, 1, 2], [0, 1, 2]], [0, 0], (HALF, HALF), levels=[0, HALF, 1])
    assert alloc == (0, 0) and v == 0


def test_allocate_prefers_concentrated_budget():
    levels = [0, QUARTER, HALF]
    f1 = lambda m: 2 if m >= HALF else 0
    f2 = lambda m: 1 if m >= QUARTER else 0
    v, alloc = allocate_budget(QUARTER, [f1, f2], [0, 0], (HALF, HALF), levels=levels)
    assert alloc == (HALF, 0) and v == 1


def test_allocate_symmetric_concave_splits_evenly():
    levels = [Fraction(k, 4) for k in range(5)]
    concave = [0, 3, 5, 6, 6]
    v, alloc = allocate_budget(HALF, [concave, concave], [0, 0], (HALF, HALF), levels=levels)
    assert alloc == (HALF, HALF) and v == 5


def test_allocate_infeasible_floor():
    v, alloc = allocate_budget(0, [[0, 1], [0, 1]], [1, 0], (HALF, HALF), levels=[0, 1])
    assert v == float("-inf") and alloc is None


def test_allocate_off_grid_budget():
    v, alloc = allocate_budget(Fraction(3, 8), [[0, 1, 2], [0, 1, 2]], [0, 0], (HALF, HALF), levels=[0, QUARTER, HALF])
    assert v == Fraction(3, 2) and sum(p * m for p, m in zip((HALF, HALF), alloc)) <= Fraction(3, 8)


def test_allocate_interp_mode():
    v, alloc = allocate_budget(QUARTER, [[0, 1], [0, 1]], [0, 0], (HALF, HALF), levels=[0, 1], mode="interp")
    assert v == QUARTER
    assert sum(p * m for p, m in zip((HALF, HALF), alloc)) == QUARTER


def _one_step_measure(g_up=1, g_down=0):
    model = bet_model(1, x0=0, controls=(1,))
    P = induced_measure(model, Strategy.constant(1))
    g = from_path_function(lambda s, p: 0 if s == 0 else (g_up if p.branches[0] == 0 else g_down))
    return P, g


def test_snell_one_step():
    P, g = _one_step_measure()
    S = snell_envelope(P, g)
    assert S[()] == HALF and S[(0,)] == 1 and S[(1,)] == 0


def test_snell_constant():
    P = induced_measure(bet_model(3), Strategy.constant(1))
    g = from_path_function(lambda s, p: Fraction(3, 8))
    assert set(snell_envelope(P, g).values()) == {Fraction(3, 8)}


def gap_instance():
    """Up branch violates at step 1 only, down branch at step 2 only."""
    model = bet_model(2, x0=0, controls=(1,))

    def g(s, p):
        if s == 0:
            return 0
        return 1 if (p.branches[0] == 0) == (s == 1) else 0

    return model, from_path_function(g)


def test_snell_exceeds_deterministic_times():
    model, g = gap_instance()
    P = induced_measure(model, Strategy.constant(1))
    assert max(deterministic_constraint_values(P, g)) == HALF
    assert snell_envelope(P, g)[()] == 1


def test_build_budget_process_zero():
    P = induced_measure(bet_model(2), Strategy.constant(1))
    bp = build_budget_process(P, zero_constraint(), 0)
    assert set(bp.budget.values()) == {0}
    assert check_budget_process(bp, zero_constraint()).ok


def test_build_budget_process_one_step():
    P, g = _one_step_measure()
    bp = build_budget_process(P, g, HALF)
    assert bp.budget == {(): HALF, (0,): 1, (1,): 0}
    assert check_budget_process(bp, g).ok


def test_build_budget_process_gap_reported():
    model, g = gap_instance()
    P = induced_measure(model, Strategy.constant(1))
    with pytest.raises(SnellGapError) as exc:
        build_budget_process(P, g, HALF)
    assert exc.value.snell_root == 1 and exc.value.max_deterministic == HALF


def test_build_budget_process_infeasible():
    P, g = _one_step_measure()
    with pytest.raises(BudgetConstructionError) as exc:
        build_budget_process(P, g, QUARTER)
    assert not isinstance(exc.value, SnellGapError)


def test_build_budget_process_enumerated():
    for N in (1, 2, 3):
        for model in models(N).values():
            for g in constraints(N).values():
                for s in enumerate_strategies(model):
                    P = induced_measure(model, s)
                    S0 = snell_envelope(P, g)[()]
                    for m in dyadic_levels(N):
                        if m >= S0:
                            assert check_budget_process(build_budget_process(P, g, m), g).ok


def test_check_budget_process_flags():
    P, g = _one_step_measure()
    bp = BudgetProcess({(): QUARTER, (0,): 1, (1,): 0}, P, QUARTER)
    chk = check_budget_process(bp, g)
    assert chk.supermartingale_violations == [()]
    assert chk.domination_violations == []
    bp = BudgetProcess({(): HALF, (0,): HALF, (1,): HALF}, P, HALF)
    assert check_budget_process(bp, g).domination_violations == [(0,)]


def test_realize_unconstrained_strategy_is_classical():
    model = bet_model(2)
    f = power_reward(2)
    surface, policy = solve(model, f, zero_constraint())
    strategy, bp = realize_strategy(surface, policy, 0)
    P = induced_measure(model, strategy)
    assert sum(P.masses[b] * f(P.paths[b]) for b in P.masses) == 3
    assert check_budget_process(bp, zero_constraint(), 0).ok


def test_realize_below_minimal_budget():
    model = bet_model(1, x0=0, controls=(1,))
    g = g_quantile(HalfSpace(0, 0, "above"))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        surface, policy = solve(model, linear_reward(), g)
    with pytest.raises(InfeasibleStartError):
        realize_strategy(surface, policy, QUARTER)


def test_infeasible_root_warning():
    model = bet_model(1, x0=0, controls=(1,))
    g = g_quantile(HalfSpace(0, 0, "above"))
    with pytest.warns(InfeasibleRootWarning):
        solve(model, linear_reward(), g, m=QUARTER)


def test_grid_too_coarse_warning():
    model = bet_model(1, x0=0, controls=(1,))
    g = g_quantile(HalfSpace(0, 0, "above"))
    with pytest.warns(GridTooCoarseWarning):
        surface, _ = solve(model, linear_reward(), g, grid=[0, Fraction(3, 10), 1])
    assert surface.label == "lower_bound"
    assert surface.root_value(Fraction(3, 10)) == float("-inf")


def test_realized_value_and_invariants_on_suite():
    for N in (1, 2):
        for model in models(N).values():
            for g in constraints(N).values():
                for f in rewards().values():
                    surface, policy = solve(model, f, g)
                    for m in dyadic_levels(N):
                        if m < surface.w[surface.root]:
                            continue
                        strategy, bp = realize_strategy(surface, policy, m)
                        P = induced_measure(model, strategy)
                        assert sum(P.masses[b] * f(P.paths[b]) for b in P.masses) == surface.root_value(m)
                        assert check_budget_process(bp, g, m).ok


def test_extracted_at_frontier_touches_budget():
    for N in (1, 2):
        for model in models(N).values():
            for name in ("state", "floor", "drawdown"):
                g = constraints(N)[name]
                surface, policy = solve(model, linear_reward(), g)
                w = surface.w[surface.root]
                strategy, _ = realize_strategy(surface, policy, w)
                vals = deterministic_constraint_values(induced_measure(model, strategy), g)
                assert max(vals) == w


def test_value_monotone_and_frontier():
    for N in (1, 2, 3):
        for model in models(N).values():
            for g in constraints(N).values():
                surface, _ = solve(model, linear_reward(), g)
                levels = surface.grid.levels
                for nid, vals in surface.values.items():
                    assert all(a <= b for a, b in zip(vals, vals[1:]))
                    for lvl, v in zip(levels, vals):
                        assert (v == float("-inf")) == (lvl < surface.w[nid])


def test_saturated_allocation_same_value():
    for N in (1, 2, 3):
        for model in models(N).values():
            for g in constraints(N).values():
                a, _ = solve(model, linear_reward(), g)
                b, _ = solve(model, linear_reward(), g, saturate=True)
                assert a.values == b.values


def test_one_step_recursion_regression():
    model = models(3)["stakes"]
    g = constraints(3)["drawdown"]
    surface, _ = solve(model, power_reward(2), g)
    graph = surface.graph
    levels = surface.grid.levels
    for node in graph.nodes:
        if not node.children:
            continue
        for i, m in enumerate(levels):
            best = float("-inf")
            if node.g <= m:
                for kids in node.children.values():
                    v, _ = allocate_budget(m, [surface.values[c] for c in kids], [surface.w[c] for c in kids],
                                           model.branch_probs, levels=levels)
                    best = max(best, v)
            assert surface.values[node.id][i] == best


def test_zero_budget_matches_pathwise_filter():
    for N in (1, 2, 3):
        for model in models(N).values():
            for name in ("state", "floor", "drawdown"):
                g = constraints(N)[name]
                for f in rewards().values():
                    surface, _ = solve(model, f, g)
                    assert surface.root_value(0) == pathwise_value(model, f, g)


def test_common_zero_budget():
    model = models(2)["saferisky"]
    g = constraints(2)["floor"]
    f = linear_reward()
    surface, _ = solve(model, f, g)
    graph = surface.graph
    best = float("-inf")
    for a in model.controls:
        kids = graph.nodes[graph.root].children[a]
        vals = [surface.value(c, 0) for c in kids]
        if all(v > float("-inf") for v in vals):
            best = max(best, sum(p * v for p, v in zip(model.branch_probs, vals)))
    assert best == surface.root_value(0)


def test_dpp_verify_examples():
    model = models(2)["bet"]
    g = constraints(2)["floor"]
    f = indicator_reward(HalfSpace(0, 2))
    surface, _ = solve(model, f, g)
    for tau in (0, StoppingRule.terminal(), StoppingRule.first_hit(HalfSpace(0, 2))):
        for m in dyadic_levels(2):
            report = dpp_verify(surface, model, f, g, tau, m)
            assert report.passed
            assert report.supsup == report.supinf == surface.root_value(m)


def test_interp_mode_labels_and_dominates_grid():
    model = models(2)["stakes"]
    g = constraints(2)["quantile"]
    f = power_reward(2)
    exact, _ = solve(model, f, g)
    approx, _ = solve(model, f, g, grid=BudgetGrid(exact.grid.levels, "interp"))
    assert approx.label == "approximate"
    for m in exact.grid.levels:
        assert approx.root_value(m) >= exact.root_value(m)


def test_grid_validation():
    with pytest.raises(ValueError):
        BudgetGrid((0,))
    with pytest.raises(ValueError):
        BudgetGrid((0, 0))
    assert BudgetGrid.dyadic(2).levels == tuple(dyadic_levels(2))


def test_auto_grid_exact_and_float_fallback():
    model = models(2)["bet"]
    surface, _ = solve(model, linear_reward(), constraints(2)["floor"])
    assert surface.label == "exact" and surface.grid.levels == tuple(dyadic_levels(2))
    fmodel = LatticeModel(2, (0.3, 0.7), (0, 1), lambda k, x, a, j: (x[0] + (a if j == 0 else -a),), (1,))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fs, _ = solve(fmodel, linear_reward(), g_floor(0))
    assert fs.label == "lower_bound" and len(fs.grid) == 33


def test_non_recombining_reward_keeps_paths():
    model = models(2)["bet"]
    f_path = rewards()["runmax"]
    graph = SummaryGraph(model, constraints(2)["floor"], f_path)
    assert not graph.recombine
    assert len(graph.layer(2)) > len(SummaryGraph(model, constraints(2)["floor"], linear_reward()).layer(2))


def test_csv_and_policy_export():
    model = models(2)["bet"]
    surface, policy = solve(model, linear_reward(), constraints(2)["state"])
    text = surface.to_csv()
    lines = text.splitlines()
    assert lines[0] == "step,node_id,summary_repr,budget_level,value,feasible_min_budget"
    assert len(lines) == 1 + len(surface.graph.nodes) * len(surface.grid)
    data = json.loads(policy.to_json())
    assert data["levels"] == ["0", "0.25", "0.5", "0.75", "1"]
    for node in data["nodes"].values():
        for lvl, d in node["decisions"].items():
            alloc = [Fraction(x) for x in d["allocation"]]
            assert sum(alloc) / 2 <= Fraction(lvl)


def test_threads_give_identical_surface(monkeypatch):
    model = models(3)["stakes"]
    g = constraints(3)["drawdown"]
    a, _ = solve(model, power_reward(2), g)
    monkeypatch.setenv("BUDGET_DPP_THREADS", "4")
    b, _ = solve(model, power_reward(2), g)
    assert a.values == b.values


def test_subroot_solve():
    model = models(3)["bet"]
    g = constraints(3)["floor"]
    root = model.child(model.root(), 1, 1)
    surface, _ = solve(model, linear_reward(), g, root=root)
    full, _ = solve(model, linear_reward(), g)
    nid = full.graph.node_of(root)
    for m in surface.grid.levels:
        assert surface.root_value(m) == full.value(nid, m)
