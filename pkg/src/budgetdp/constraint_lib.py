"""Constraint functionals ``g(s, path)`` and reward functionals ``f(path)``.

Every constraint carries a finite summary reduction (``summary_init``,
``summary_update``, ``summary_eval``) so the solver can merge histories that
share a summary and a current state.  The reduction must agree with the direct
evaluation ``eval`` on every prefix; :func:`check_summary_consistency` checks
this by enumeration.
"""
from __future__ import annotations

import itertools
import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass
from fractions import Fraction
from typing import Any

from ._numeric import NEG_INF, parse_number
from .errors import DomainError, SummaryMismatchError, UnsupportedRegionError
from .path_lattice import LatticeModel, PathPrefix, as_state


# ---------------------------------------------------------------------------
# regions
# ---------------------------------------------------------------------------


class Region:
    """Subset of R^d.

    ``contains`` tests membership in the closure, ``interior`` in the interior;
    ``margin`` is the Euclidean distance to the complement (0 outside the
    interior).
    """

    kind = "region"

    def contains(self, x) -> bool:
        raise NotImplementedError

    def interior(self, x) -> bool:
        raise NotImplementedError

    def margin(self, x):
        raise UnsupportedRegionError(f"{type(self).__name__} has no distance oracle")

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class HalfSpace(Region):
    """``x[axis] >= bound`` ("above") or ``x[axis] <= bound`` ("below")."""

    axis: int
    bound: Any
    direction: str = "above"
    kind = "halfspace"

    def __post_init__(self):
        if self.direction not in ("above", "below"):
            raise ValueError(f"direction must be 'above' or 'below', got {self.direction!r}")

    def _gap(self, x):
        v = as_state(x)[self.axis]
        return v - self.bound if self.direction == "above" else self.bound - v

    def contains(self, x):
        return self._gap(x) >= 0

    def interior(self, x):
        return self._gap(x) > 0

    def margin(self, x):
        g = self._gap(x)
        return g if g > 0 else 0

    def to_dict(self):
        return {"type": "halfspace", "axis": self.axis, "bound": self.bound, "direction": self.direction}


@dataclass(frozen=True)
class Box(Region):
    lower: tuple
    upper: tuple
    kind = "box"

    def __post_init__(self):
        object.__setattr__(self, "lower", as_state(self.lower))
        object.__setattr__(self, "upper", as_state(self.upper))

    def _gap(self, x):
        x = as_state(x)
        return min(min(xi - lo, hi - xi) for xi, lo, hi in zip(x, self.lower, self.upper))

    def contains(self, x):
        return self._gap(x) >= 0

    def interior(self, x):
        return self._gap(x) > 0

    def margin(self, x):
        g = self._gap(x)
        return g if g > 0 else 0

    def to_dict(self):
        return {"type": "box", "lower": list(self.lower), "upper": list(self.upper)}


@dataclass(frozen=True)
class Ball(Region):
    center: tuple
    radius: Any
    kind = "ball"

    def __post_init__(self):
        object.__setattr__(self, "center", as_state(self.center))

    def _sq(self, x):
        return sum((xi - ci) ** 2 for xi, ci in zip(as_state(x), self.center))

    def contains(self, x):
        return self._sq(x) <= self.radius**2

    def interior(self, x):
        return self._sq(x) < self.radius**2

    def margin(self, x):
        if not self.interior(x):
            return 0
        return self.radius - math.sqrt(self._sq(x))

    def to_dict(self):
        return {"type": "ball", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Union(Region):
    members: tuple
    kind = "union"

    def contains(self, x):
        return any(r.contains(x) for r in self.members)

    def interior(self, x):
        # interior of a finite union contains the union of interiors; equality
        # holds for the built-in convex members unless they share a boundary face
        return any(r.interior(x) for r in self.members)

    def to_dict(self):
        return {"type": "union", "members": [r.to_dict() for r in self.members]}


class Everything(Region):
    kind = "all"

    def contains(self, x):
        return True

    def interior(self, x):
        return True

    def margin(self, x):
        return math.inf

    def to_dict(self):
        return {"type": "all"}

    def __eq__(self, other):
        return isinstance(other, Everything)

    def __hash__(self):
        return hash("all")

    def __repr__(self):
        return "Everything()"


class Empty(Region):
    kind = "empty"

    def contains(self, x):
        return False

    def interior(self, x):
        return False

    def margin(self, x):
        return 0

    def to_dict(self):
        return {"type": "empty"}

    def __eq__(self, other):
        return isinstance(other, Empty)

    def __hash__(self):
        return hash("empty")

    def __repr__(self):
        return "Empty()"


def region_from_dict(d: Mapping) -> Region:
    t = d.get("type")
    if t == "halfspace":
        return HalfSpace(int(d.get("axis", 0)), parse_number(d["bound"]), d.get("direction", "above"))
    if t == "box":
        return Box(tuple(parse_number(v) for v in d["lower"]), tuple(parse_number(v) for v in d["upper"]))
    if t == "ball":
        return Ball(tuple(parse_number(v) for v in d["center"]), parse_number(d["radius"]))
    if t == "union":
        return Union(tuple(region_from_dict(m) for m in d["members"]))
    if t == "all":
        return Everything()
    if t == "empty":
        return Empty()
    raise ValueError(f"unknown region type {t!r}")


class StepMap:
    """Per-step parameter: a constant, a sequence indexed by step, a mapping
    with an optional ``"default"``, or a callable."""

    def __init__(self, spec, name="value"):
        self.spec = spec
        self.name = name

    def __call__(self, k: int):
        s = self.spec
        if callable(s) and not isinstance(s, Region):
            return s(k)
        if isinstance(s, Mapping):
            if k in s:
                return s[k]
            if "default" in s:
                return s["default"]
            raise KeyError(f"{self.name} undefined at step {k}")
        if isinstance(s, Sequence) and not isinstance(s, (str, tuple)):
            return s[k]
        return s


# ---------------------------------------------------------------------------
# functionals
# ---------------------------------------------------------------------------


def _fold(prefix: PathPrefix, init, update):
    summary = init(prefix.states[0])
    for k in range(1, prefix.step + 1):
        summary = update(k, summary, prefix.states[k])
    return summary


@dataclass(frozen=True)
class ConstraintFunctional:
    """``g(s, prefix)`` plus a summary reduction.

    ``summary_update(k, summary, x_k)`` folds the state reached at step ``k``;
    ``summary_eval(k, summary, x_k)`` must equal ``eval(k, prefix)``.
    """

    eval: Callable[[int, PathPrefix], Any]
    summary_init: Callable[[tuple], Any]
    summary_update: Callable[[int, Any, tuple], Any]
    summary_eval: Callable[[int, Any, tuple], Any]
    kind: str = "custom"
    absorbing: bool = False
    indicator: bool = False

    def __call__(self, s: int, prefix: PathPrefix):
        return self.eval(s, prefix.truncate(s) if prefix.step > s else prefix)

    def summarize(self, prefix: PathPrefix):
        return _fold(prefix, self.summary_init, self.summary_update)


def from_path_function(eval_fn, kind="custom", indicator=False) -> ConstraintFunctional:
    """Custom constraint without a compact summary: the summary is the whole
    state history, so the solver cannot merge nodes."""
    return ConstraintFunctional(
        eval=eval_fn,
        summary_init=lambda x: (x,),
        summary_update=lambda k, h, x: h + (x,),
        summary_eval=lambda k, h, x: eval_fn(k, PathPrefix.from_states(h)),
        kind=kind,
        indicator=indicator,
    )


def zero_constraint() -> ConstraintFunctional:
    return ConstraintFunctional(
        eval=lambda s, p: 0,
        summary_init=lambda x: None,
        summary_update=lambda k, s, x: None,
        summary_eval=lambda k, s, x: 0,
        kind="none",
        absorbing=True,
        indicator=True,
    )


def g_state(open_sets) -> ConstraintFunctional:
    """0 while the path has stayed in the open regions at every grid time, 1 after
    the first exit (absorbing)."""
    region = StepMap(open_sets, "open set")

    def outside(k, x):
        return 0 if region(k).interior(x) else 1

    def eval_fn(s, prefix):
        return max(outside(t, prefix.states[t]) for t in range(s + 1))

    return ConstraintFunctional(
        eval=eval_fn,
        summary_init=lambda x: outside(0, x),
        summary_update=lambda k, flag, x: max(flag, outside(k, x)),
        summary_eval=lambda k, flag, x: flag,
        kind="state",
        absorbing=True,
        indicator=True,
    )


def state_margin(open_sets, s: int, prefix: PathPrefix):
    """``min_{t <= s}`` distance of ``x_t`` to the complement of the open set at ``t``."""
    region = StepMap(open_sets, "open set")
    return min(region(t).margin(prefix.states[t]) for t in range(s + 1))


def _scalar(x, what):
    x = as_state(x)
    if len(x) != 1:
        raise DomainError(f"{what} needs one-dimensional states, got dimension {len(x)}")
    return x[0]


def g_floor(floor_path) -> ConstraintFunctional:
    """0 while ``x_t >= floor(t)`` has held at every grid time (touching allowed)."""
    floor = StepMap(floor_path, "floor")

    def below(k, x):
        return 0 if _scalar(x, "floor constraint") >= floor(k) else 1

    def eval_fn(s, prefix):
        return max(below(t, prefix.states[t]) for t in range(s + 1))

    return ConstraintFunctional(
        eval=eval_fn,
        summary_init=lambda x: below(0, x),
        summary_update=lambda k, flag, x: max(flag, below(k, x)),
        summary_eval=lambda k, flag, x: flag,
        kind="floor",
        absorbing=True,
        indicator=True,
    )


def g_drawdown(alpha, start_x=0) -> ConstraintFunctional:
    """0 while ``x_t >= alpha(t) * max_{r <= t} x_r`` has held at every grid time."""
    if start_x < 0:
        raise DomainError(f"drawdown constraint needs a nonnegative start, got {start_x}")
    level = StepMap(alpha, "alpha")
    if not callable(alpha):
        values = alpha.values() if isinstance(alpha, Mapping) else (
            alpha if isinstance(alpha, Sequence) and not isinstance(alpha, str) else [alpha]
        )
        for a in values:
            if not 0 <= a <= 1:
                raise DomainError(f"alpha must lie in [0, 1], got {a}")

    def a_at(k):
        a = level(k)
        if not 0 <= a <= 1:
            raise DomainError(f"alpha must lie in [0, 1], got {a} at step {k}")
        return a

    def eval_fn(s, prefix):
        peak = None
        for t in range(s + 1):
            x = _scalar(prefix.states[t], "drawdown constraint")
            peak = x if peak is None else max(peak, x)
            if x < a_at(t) * peak:
                return 1
        return 0

    def init(x):
        x = _scalar(x, "drawdown constraint")
        return (x, 0 if x >= a_at(0) * x else 1)

    def update(k, summary, x):
        peak, flag = summary
        x = _scalar(x, "drawdown constraint")
        peak = max(peak, x)
        return (peak, max(flag, 0 if x >= a_at(k) * peak else 1))

    return ConstraintFunctional(
        eval=eval_fn,
        summary_init=init,
        summary_update=update,
        summary_eval=lambda k, summary, x: summary[1],
        kind="drawdown",
        absorbing=True,
        indicator=True,
    )


def g_quantile(targets) -> ConstraintFunctional:
    """0 when the current state lies in the closed target ``G(s)``, else 1.

    Not absorbing: only the state at time ``s`` matters.
    """
    target = StepMap(targets, "target")

    def miss(k, x):
        return 0 if target(k).contains(x) else 1

    return ConstraintFunctional(
        eval=lambda s, prefix: miss(s, prefix.states[s]),
        summary_init=lambda x: None,
        summary_update=lambda k, s, x: None,
        summary_eval=lambda k, s, x: miss(k, x),
        kind="quantile",
        absorbing=False,
        indicator=True,
    )


def quantile_level_transform(m):
    """Success probability ``m`` -> budget level ``1 - m`` for the miss indicator."""
    if not 0 <= m <= 1:
        raise DomainError(f"probability level must lie in [0, 1], got {m}")
    return 1 - m


# ---------------------------------------------------------------------------
# rewards
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RewardFunctional:
    """``f(full path)``; ``terminal`` is set when ``f`` only reads the last state,
    which lets the solver merge histories."""

    eval: Callable[[PathPrefix], Any]
    terminal: Callable[[tuple], Any] | None = None
    name: str = "reward"

    def __call__(self, path: PathPrefix):
        return self.eval(path)


def terminal_reward(fn, name="terminal") -> RewardFunctional:
    return RewardFunctional(eval=lambda p: fn(p.last), terminal=fn, name=name)


def linear_reward(coef=1, axis=0) -> RewardFunctional:
    return terminal_reward(lambda x: coef * x[axis], name=f"linear({coef})")


def power_reward(exponent, axis=0) -> RewardFunctional:
    """``x^exponent`` on ``x >= 0``; ``-inf`` for negative wealth when the power is
    not an integer."""

    def fn(x):
        v = x[axis]
        if isinstance(exponent, int) or (isinstance(exponent, Fraction) and exponent.denominator == 1):
            return v ** int(exponent)
        if v < 0:
            return NEG_INF
        return float(v) ** float(exponent)

    return terminal_reward(fn, name=f"power({exponent})")


def log_reward(axis=0) -> RewardFunctional:
    def fn(x):
        v = x[axis]
        return math.log(v) if v > 0 else NEG_INF

    return terminal_reward(fn, name="log")


def indicator_reward(region: Region) -> RewardFunctional:
    return terminal_reward(lambda x: 1 if region.contains(x) else 0, name=f"indicator({region!r})")


def table_reward(values: Mapping) -> RewardFunctional:
    """Path-dependent reward given per leaf branch history."""
    table = {tuple(k): v for k, v in values.items()}

    def fn(path):
        try:
            return table[path.branches]
        except KeyError:
            raise KeyError(f"reward table has no entry for leaf {path.branches}") from None

    return RewardFunctional(eval=fn, name="table")


def running_max_reward(axis=0) -> RewardFunctional:
    return RewardFunctional(eval=lambda p: max(x[axis] for x in p.states), name="running-max")


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def iter_prefixes(model: LatticeModel, depth: int | None = None, root: PathPrefix | None = None):
    """Every prefix reachable under some control sequence, up to ``depth`` steps."""
    root = root or model.root()
    depth = model.horizon if depth is None else min(depth, model.horizon)
    yield root
    layer = [root]
    for _ in range(root.step, depth):
        nxt = []
        seen = set()
        for p in layer:
            for a, j in itertools.product(model.controls, range(model.outcomes)):
                c = model.child(p, a, j)
                key = (c.branches, c.states)
                if key not in seen:
                    seen.add(key)
                    nxt.append(c)
        layer = nxt
        yield from layer


def check_summary_consistency(model: LatticeModel, g: ConstraintFunctional, depth: int = 4) -> int:
    """Compare ``summary_eval`` with ``eval`` on every reachable prefix up to
    ``depth``; returns the number of prefixes checked."""
    n = 0
    for prefix in iter_prefixes(model, depth):
        s = prefix.step
        direct = g.eval(s, prefix)
        folded = g.summary_eval(s, g.summarize(prefix), prefix.last)
        if direct != folded:
            raise SummaryMismatchError(
                f"{g.kind}: summary gives {folded!r}, direct evaluation {direct!r} "
                f"at step {s}, branches {prefix.branches}"
            )
        n += 1
    return n
