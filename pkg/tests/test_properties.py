import itertools
import random
from fractions import Fraction

from hypothesis import given, settings, strategies as st

from budgetdp.budget_dpp import (
    allocate_budget,
    build_budget_process,
    check_budget_process,
    deterministic_constraint_values,
    realize_strategy,
    snell_envelope,
    solve,
)
from budgetdp.constraint_lib import check_summary_consistency
from budgetdp.oracle import enumerate_strategies
from budgetdp.path_lattice import induced_measure

from instances import dyadic_levels, random_instance

HALF = Fraction(1, 2)
LEVELS = [Fraction(k, 4) for k in range(5)]
NEG = float("-inf")

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def nondecreasing_values(draw_list):
    out, acc = [], 0
    for d in draw_list:
        acc += d
        out.append(acc)
    return out


values = st.lists(st.integers(0, 3), min_size=5, max_size=5).map(nondecreasing_values)


@settings(max_examples=200, deadline=None)
@given(values, values, st.integers(0, 4), st.integers(0, 4), st.sampled_from(LEVELS + [Fraction(3, 8)]))
def test_allocation_is_brute_force_optimal(v1, v2, f1, f2, m):
    probs = (HALF, HALF)
    floors = [LEVELS[f1], LEVELS[f2]]
    value, alloc = allocate_budget(m, [v1, v2], floors, probs, levels=LEVELS)
    best = NEG
    for a, b in itertools.product(range(5), repeat=2):
        if LEVELS[a] >= floors[0] and LEVELS[b] >= floors[1] and HALF * (LEVELS[a] + LEVELS[b]) <= m:
            best = max(best, HALF * (v1[a] + v2[b]))
    assert value == best
    if alloc is not None:
        assert HALF * sum(alloc) <= m and all(x >= fl for x, fl in zip(alloc, floors))
        assert HALF * (v1[LEVELS.index(alloc[0])] + v2[LEVELS.index(alloc[1])]) == value


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_value_surface_shape(seed):
    model, f, g = random_instance(random.Random(seed))
    surface, _ = solve(model, f, g)
    sat, _ = solve(model, f, g, saturate=True)
    assert sat.values == surface.values
    for nid, vals in surface.values.items():
        assert all(a <= b for a, b in zip(vals, vals[1:]))
        for lvl, v in zip(surface.grid.levels, vals):
            assert (v == NEG) == (lvl < surface.w[nid])


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(0, 8))
def test_realized_strategy_attains_value(seed, j):
    model, f, g = random_instance(random.Random(seed))
    surface, policy = solve(model, f, g)
    m = dyadic_levels(model.horizon)[j % (2**model.horizon + 1)]
    if m < surface.w[surface.root]:
        return
    strategy, bp = realize_strategy(surface, policy, m)
    P = induced_measure(model, strategy)
    assert sum(P.masses[b] * f(P.paths[b]) for b in P.masses) == surface.root_value(m)
    assert check_budget_process(bp, g, m).ok
    assert max(deterministic_constraint_values(P, g)) <= m


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(0, 127))
def test_snell_budget_process(seed, k):
    model, f, g = random_instance(random.Random(seed), max_horizon=2)
    strategies = list(enumerate_strategies(model))
    P = induced_measure(model, strategies[k % len(strategies)])
    S = snell_envelope(P, g)
    assert S[()] >= max(deterministic_constraint_values(P, g))
    for b, v in S.items():
        assert v >= g.eval(len(b), P.path(b))
    bp = build_budget_process(P, g, S[()])
    assert check_budget_process(bp, g).ok


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_summary_consistency_random(seed):
    model, f, g = random_instance(random.Random(seed))
    assert check_summary_consistency(model, g, depth=model.horizon) > 0
