import math
from fractions import Fraction

import pytest

from budgetdp.constraint_lib import (
    Ball,
    Box,
    Empty,
    Everything,
    HalfSpace,
    Union,
    check_summary_consistency,
    from_path_function,
    g_drawdown,
    g_floor,
    g_quantile,
    g_state,
    log_reward,
    power_reward,
    quantile_level_transform,
    region_from_dict,
    state_margin,
    table_reward,
)
from budgetdp.errors import DomainError, SummaryMismatchError, UnsupportedRegionError
from budgetdp.path_lattice import LatticeModel, PathPrefix

HALF = Fraction(1, 2)


def path(*xs):
    return PathPrefix.from_states(list(xs))


def test_state_indicator_values():
    g = g_state(HalfSpace(0, -1, "above"))
    p = path(0, 0.5, -2)
    assert g(1, p) == 0
    assert g(2, p) == 1


def test_state_inside_is_zero():
    g = g_state(HalfSpace(0, -1, "above"))
    p = path(0, 1, 2, 3)
    assert [g(s, p) for s in range(4)] == [0, 0, 0, 0]


def test_state_absorbing():
    g = g_state(HalfSpace(0, 0, "above"))
    p = path(1, -1, 1)
    assert g(2, p) == 1


def test_state_boundary_is_violation():
    g = g_state(HalfSpace(0, -1, "above"))
    assert g(1, path(0, -1)) == 1
    assert state_margin(HalfSpace(0, -1, "above"), 1, path(0, -1)) == 0


def test_margin_closest_approach():
    assert state_margin(HalfSpace(0, -1, "above"), 2, path(0, 0.5, 3)) == 1.0


def test_ball_margin():
    p = PathPrefix.from_states([(0, 0), (1, 1)])
    assert state_margin(Ball((0, 0), 2), 1, p) == pytest.approx(2 - math.sqrt(2))


def test_union_margin_unsupported():
    u = Union((HalfSpace(0, 1), HalfSpace(0, -1, "below")))
    assert u.contains((3,)) and not u.contains((0,))
    with pytest.raises(UnsupportedRegionError):
        u.margin((3,))


def test_region_round_trip():
    regions = [HalfSpace(0, HALF, "below"), Box((0, 0), (1, 2)), Ball((0,), 1), Everything(), Empty()]
    for r in regions:
        assert region_from_dict(r.to_dict()) == r


def test_floor_touching_allowed():
    g = g_floor(-1)
    p = path(0, -0.5, -1)
    assert [g(s, p) for s in range(3)] == [0, 0, 0]


def test_floor_dip_absorbs():
    g = g_floor(0)
    p = path(1, -1, 2)
    assert [g(s, p) for s in range(3)] == [0, 1, 1]


def test_floor_equality_boundary():
    g = g_floor(0)
    assert [g(s, path(0, 0, 0)) for s in range(3)] == [0, 0, 0]


def test_floor_requires_scalar():
    g = g_floor(0)
    with pytest.raises(DomainError):
        g(0, PathPrefix.from_states([(0, 0)]))


def _grid_path(fn, n):
    return path(*[fn(Fraction(k, n)) for k in range(n + 1)])


@pytest.mark.parametrize("n", [1, 2, 4, 8])
def test_drawdown_accepts_declining_path(n):
    g = g_drawdown(HALF, 2)
    p = _grid_path(lambda t: 2 - t, n)
    assert all(g(s, p) == 0 for s in range(n + 1))


@pytest.mark.parametrize("n", [1, 2, 4, 8])
def test_drawdown_rejects_translate(n):
    g = g_drawdown(HALF, 1)
    p = _grid_path(lambda t: 1 - t, n)
    flags = [g(s, p) for s in range(n + 1)]
    first = next(s for s in range(n + 1) if 1 - Fraction(s, n) < HALF)
    assert flags == [0] * first + [1] * (n + 1 - first)
    assert flags[-1] == 1


def test_drawdown_zero_alpha_vacuous():
    g = g_drawdown(0, 1)
    assert all(g(s, path(1, 3, 0, 2)) == 0 for s in range(4))


def test_drawdown_domain():
    with pytest.raises(DomainError):
        g_drawdown(Fraction(3, 2))
    with pytest.raises(DomainError):
        g_drawdown(HALF, -1)


def test_quantile_not_absorbing():
    g = g_quantile(HalfSpace(0, 0, "above"))
    p = path(0, -1, 2)
    assert g(1, p) == 1 and g(2, p) == 0
    assert g(0, p) == 0


def test_quantile_empty_target():
    g = g_quantile(Empty())
    assert all(g(s, path(0, 1, 2)) == 1 for s in range(3))


def test_level_transform():
    assert quantile_level_transform(1) == 0
    assert quantile_level_transform(0) == 1
    assert quantile_level_transform(Fraction(3, 4)) == Fraction(1, 4)
    with pytest.raises(DomainError):
        quantile_level_transform(Fraction(5, 4))


def _bet_model(N=4):
    return LatticeModel(N, (HALF, HALF), (0, 1, 2), lambda k, x, a, j: (x[0] + (a if j == 0 else -a),), (1,))


@pytest.mark.parametrize(
    "g",
    [
        g_state(HalfSpace(0, 0, "above")),
        g_floor([0, -1, 0, 1, 0]),
        g_drawdown(HALF, 1),
        g_quantile({"default": HalfSpace(0, 1), 2: Everything()}),
    ],
    ids=["state", "floor", "drawdown", "quantile"],
)
def test_summary_matches_direct_evaluation(g):
    assert check_summary_consistency(_bet_model(), g) > 0


def test_summary_mismatch_detected():
    good = g_floor(0)
    bad = type(good)(
        eval=good.eval,
        summary_init=good.summary_init,
        summary_update=lambda k, flag, x: 0,
        summary_eval=good.summary_eval,
    )
    with pytest.raises(SummaryMismatchError):
        check_summary_consistency(_bet_model(), bad)


def test_path_function_constraint():
    g = from_path_function(lambda s, p: 1 if sum(x[0] for x in p.states[: s + 1]) < 0 else 0)
    assert check_summary_consistency(_bet_model(3), g) > 0


def test_rewards():
    assert power_reward(2)(path(0, -3)) == 9
    assert power_reward(HALF)(path(0, -1)) == float("-inf")
    assert log_reward()(path(1, 0)) == float("-inf")
    f = table_reward({(0, 1): 5})
    assert f(PathPrefix((0, 1, 2), (0, 1))) == 5
