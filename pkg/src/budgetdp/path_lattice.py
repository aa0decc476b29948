"""Finite canonical path space.

A :class:`LatticeModel` is a non-recombining scenario tree: at every step the
noise picks one of ``J`` branches with fixed probabilities and a control picks
how the state moves.  Paths are identified by their branch history, never by
their state values, so degenerate transitions (several branches landing on the
same state) stay well defined.

Measures on the canonical space are :class:`TreeMeasure` objects: leaf masses
keyed by branch history together with the realised state path of each leaf.
"""
from __future__ import annotations

import itertools
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

from ._numeric import ext_expectation, is_exact
from .errors import (
    LatticeError,
    MissingDecisionError,
    NotAStoppingRuleError,
    SupportViolationError,
    ZeroMassNodeError,
)

PROB_TOL = 1e-12


def as_state(x) -> tuple:
    if isinstance(x, tuple):
        return x
    if isinstance(x, (list,)):
        return tuple(x)
    if hasattr(x, "tolist") and not isinstance(x, (int, float, Fraction)):
        v = x.tolist()
        return tuple(v) if isinstance(v, list) else (v,)
    return (x,)


def _sums_to_one(values) -> bool:
    total = sum(values)
    if all(is_exact(v) for v in values):
        return total == 1
    return abs(total - 1) <= PROB_TOL


# ---------------------------------------------------------------------------
# paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathPrefix:
    """Observed history ``(x_0, ..., x_k)`` with branch indices ``(j_1, ..., j_k)``."""

    states: tuple
    branches: tuple = ()

    def __post_init__(self):
        states = tuple(as_state(x) for x in self.states)
        branches = tuple(int(j) for j in self.branches)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "branches", branches)
        if len(states) != len(branches) + 1:
            raise LatticeError(
                f"prefix has {len(states)} states but {len(branches)} branch indices"
            )

    @classmethod
    def start(cls, x0) -> "PathPrefix":
        return cls((as_state(x0),), ())

    @classmethod
    def from_states(cls, states, branches=None) -> "PathPrefix":
        states = list(states)
        if branches is None:
            branches = (0,) * (len(states) - 1)
        return cls(tuple(states), tuple(branches))

    @property
    def step(self) -> int:
        return len(self.branches)

    @property
    def last(self) -> tuple:
        return self.states[-1]

    @property
    def dim(self) -> int:
        return len(self.states[0])

    def values(self) -> tuple:
        """States as scalars for one-dimensional paths, tuples otherwise."""
        if self.dim == 1:
            return tuple(x[0] for x in self.states)
        return self.states

    def truncate(self, k: int) -> "PathPrefix":
        if not 0 <= k <= self.step:
            raise IndexError(f"cannot truncate a step-{self.step} prefix at {k}")
        return PathPrefix(self.states[: k + 1], self.branches[:k])

    def extend(self, j: int, x) -> "PathPrefix":
        return PathPrefix(self.states + (as_state(x),), self.branches + (int(j),))

    def is_prefix_of(self, other: "PathPrefix") -> bool:
        k = self.step
        return (
            other.step >= k
            and other.branches[:k] == self.branches
            and other.states[: k + 1] == self.states
        )


def concat_paths(head: PathPrefix, t: int, tail: PathPrefix) -> PathPrefix:
    """Concatenation at ``t``: ``head`` before ``t``, then ``tail``'s increments
    shifted to start from ``head_t``."""
    if t < 0 or t > head.step:
        raise IndexError(f"concatenation time {t} outside head of length {head.step}")
    if t > tail.step:
        raise IndexError(f"tail of length {tail.step} is undefined at step {t}")
    anchor = head.states[t]
    base = tail.states[t]
    states = list(head.states[:t])
    for x in tail.states[t:]:
        states.append(tuple(a + xi - b for a, xi, b in zip(anchor, x, base)))
    branches = head.branches[:t] + tail.branches[t:]
    return PathPrefix(tuple(states), branches)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LatticeModel:
    """Finite-horizon controlled scenario lattice.

    ``transition(k, x, a, j)`` maps the state at step ``k`` under control ``a``
    and noise branch ``j`` to the state at step ``k + 1``.
    """

    horizon: int
    branch_probs: tuple
    controls: tuple
    transition: Callable[[int, tuple, Any, int], Any]
    initial_state: tuple
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "branch_probs", tuple(self.branch_probs))
        object.__setattr__(self, "controls", tuple(self.controls))
        object.__setattr__(self, "initial_state", as_state(self.initial_state))
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise LatticeError(f"horizon must be an integer >= 1, got {self.horizon!r}")
        if len(self.branch_probs) < 2:
            raise LatticeError("need at least two noise outcomes per step")
        if any(p <= 0 for p in self.branch_probs):
            raise LatticeError(f"branch probabilities must be positive: {self.branch_probs}")
        if not _sums_to_one(self.branch_probs):
            raise LatticeError(f"branch probabilities do not sum to 1: {self.branch_probs}")
        if not self.controls:
            raise LatticeError("control set is empty")

    @property
    def outcomes(self) -> int:
        return len(self.branch_probs)

    @property
    def dim(self) -> int:
        return len(self.initial_state)

    @property
    def exact(self) -> bool:
        return all(is_exact(p) for p in self.branch_probs)

    def root(self) -> PathPrefix:
        return PathPrefix.start(self.initial_state)

    def next_state(self, k: int, x: tuple, a, j: int) -> tuple:
        y = as_state(self.transition(k, x, a, j))
        if len(y) != len(x):
            raise LatticeError(f"transition changed dimension at step {k}: {x} -> {y}")
        return y

    def child(self, prefix: PathPrefix, a, j: int) -> PathPrefix:
        return prefix.extend(j, self.next_state(prefix.step, prefix.last, a, j))

    def children(self, prefix: PathPrefix, a) -> list:
        return [self.child(prefix, a, j) for j in range(self.outcomes)]

    def branch_histories(self, root: PathPrefix | None = None, level: int | None = None):
        """All branch histories below ``root`` of the given absolute length."""
        root = root or self.root()
        k = self.horizon if level is None else level
        for tail in itertools.product(range(self.outcomes), repeat=k - root.step):
            yield root.branches + tail


# ---------------------------------------------------------------------------
# strategies and stopping rules
# ---------------------------------------------------------------------------


class Strategy:
    """Path-dependent control rule.

    Decisions are looked up in ``table`` (keyed by branch history) or computed
    by ``rule(k, prefix)``.  In ``"summary"`` mode the rule receives
    ``summarize(prefix)`` instead of the prefix.  Either way the decision at step
    ``k`` only sees the history up to ``k``.
    """

    def __init__(self, rule=None, table=None, mode="prefix", summarize=None, name=""):
        if rule is None and table is None:
            raise LatticeError("strategy needs a rule or a table")
        if mode not in ("prefix", "summary"):
            raise LatticeError(f"unknown strategy mode {mode!r}")
        if mode == "summary" and summarize is None:
            raise LatticeError("summary-mode strategy needs a summarize function")
        self.rule = rule
        self.table = dict(table) if table is not None else None
        self.mode = mode
        self.summarize = summarize
        self.name = name

    @classmethod
    def from_table(cls, table, name=""):
        return cls(table=table, name=name)

    @classmethod
    def constant(cls, control):
        return cls(rule=lambda k, prefix: control, name=f"constant({control!r})")

    @classmethod
    def markov(cls, rule):
        """Decisions as a function of ``(k, current state)``."""
        return cls(rule=rule, mode="summary", summarize=lambda p: p.last, name="markov")

    def decide(self, k: int, prefix: PathPrefix):
        if self.table is not None:
            try:
                return self.table[prefix.branches]
            except KeyError:
                if self.rule is None:
                    raise MissingDecisionError(k, prefix.branches) from None
        arg = self.summarize(prefix) if self.mode == "summary" else prefix
        a = self.rule(k, arg)
        if a is None:
            raise MissingDecisionError(k, prefix.branches)
        return a

    def __repr__(self):
        kind = f"table[{len(self.table)}]" if self.table is not None else "rule"
        return f"Strategy({self.name or kind}, mode={self.mode})"


@dataclass(frozen=True)
class StoppingRule:
    """Stop at the first step ``k`` where ``predicate(k, prefix up to k)`` holds;
    paths that never trigger stop at the horizon."""

    predicate: Callable[[int, PathPrefix], bool]
    name: str = "rule"

    @classmethod
    def at(cls, k: int) -> "StoppingRule":
        return cls(lambda step, prefix: step >= k, name=f"at({k})")

    @classmethod
    def terminal(cls) -> "StoppingRule":
        return cls(lambda step, prefix: False, name="terminal")

    @classmethod
    def first_hit(cls, region) -> "StoppingRule":
        return cls(lambda step, prefix: region.contains(prefix.last), name=f"hit({region!r})")

    def stop_step(self, path: PathPrefix, start: int = 0) -> int:
        for k in range(start, path.step + 1):
            if self.predicate(k, path.truncate(k)):
                return k
        return path.step


def concat_strategies(first: Strategy, tau, continuations, start: int = 0) -> Strategy:
    """Follow ``first`` until ``tau``, then ``continuations[stopped node]``.

    ``continuations`` maps stopped branch histories to strategies (or is a
    callable on the stopped prefix).
    """
    tau = as_stopping_rule(tau)

    def rule(k, prefix):
        s = tau.stop_step(prefix, start)
        if s < k or (s == k and tau.predicate(k, prefix)):
            node = prefix.truncate(s)
            cont = (
                continuations(node)
                if callable(continuations)
                else continuations[node.branches]
            )
            return cont.decide(k, prefix)
        return first.decide(k, prefix)

    return Strategy(rule=rule, name="concatenated")


def as_stopping_rule(tau) -> StoppingRule:
    if isinstance(tau, StoppingRule):
        return tau
    if isinstance(tau, int):
        return StoppingRule.at(tau)
    raise NotAStoppingRuleError(f"cannot interpret {tau!r} as a stopping rule")


# ---------------------------------------------------------------------------
# measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TreeMeasure:
    """Probability measure on the lattice paths below ``root``.

    ``masses`` holds the positive leaf masses keyed by branch history and
    ``paths`` the realised state path of every charged leaf.
    """

    root: PathPrefix
    horizon: int
    masses: Mapping
    paths: Mapping
    _prefix: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        masses = {tuple(b): m for b, m in self.masses.items() if m != 0}
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "paths", {b: self.paths[b] for b in masses})
        if any(m < 0 for m in masses.values()):
            raise LatticeError("negative leaf mass")
        if not _sums_to_one(list(masses.values())):
            raise LatticeError(f"leaf masses sum to {sum(masses.values())}, not 1")
        prefix = {}
        for b, m in masses.items():
            if len(b) != self.horizon:
                raise LatticeError(f"leaf {b} does not reach the horizon {self.horizon}")
            if not self.root.is_prefix_of(self.paths[b]):
                raise SupportViolationError(f"leaf {b} is outside the subtree of {self.root.branches}")
            for k in range(self.root.step, self.horizon + 1):
                key = b[:k]
                prefix[key] = prefix.get(key, 0) + m
        object.__setattr__(self, "_prefix", prefix)

    def mass(self, node) -> Any:
        b = node.branches if isinstance(node, PathPrefix) else tuple(node)
        if len(b) == self.horizon:
            return self.masses.get(b, 0)
        if len(b) < self.root.step:
            return 1 if self.root.branches[: len(b)] == b else 0
        return self._prefix.get(b, 0)

    def nodes(self, k: int) -> list:
        """Charged branch histories of length ``k`` (sorted)."""
        return sorted(b for b in self._prefix if len(b) == k)

    def path(self, node) -> PathPrefix:
        b = node.branches if isinstance(node, PathPrefix) else tuple(node)
        for leaf, p in self.paths.items():
            if leaf[: len(b)] == b:
                return p.truncate(len(b))
        raise ZeroMassNodeError(f"node {b} carries no mass")

    def children(self, node) -> list:
        """``(child branch history, mass)`` for charged children of ``node``."""
        b = node.branches if isinstance(node, PathPrefix) else tuple(node)
        out = []
        for c in sorted(self._prefix):
            if len(c) == len(b) + 1 and c[: len(b)] == b:
                out.append((c, self._prefix[c]))
        return out

    def leaves(self):
        return sorted(self.masses)

    def __eq__(self, other):
        if not isinstance(other, TreeMeasure):
            return NotImplemented
        return (
            self.horizon == other.horizon
            and self.masses == other.masses
            and all(self.paths[b] == other.paths[b] for b in self.masses)
        )

    def __hash__(self):
        return hash(tuple(sorted(self.masses.items())))


def induced_measure(model: LatticeModel, strategy: Strategy, root: PathPrefix | None = None) -> TreeMeasure:
    """Law of the controlled path below ``root`` when ``strategy`` is followed."""
    root = root or model.root()
    if root.step > model.horizon:
        raise IndexError("root beyond horizon")
    masses, paths = {}, {}
    stack = [(root, 1)]
    while stack:
        prefix, mass = stack.pop()
        if prefix.step == model.horizon:
            masses[prefix.branches] = mass
            paths[prefix.branches] = prefix
            continue
        a = strategy.decide(prefix.step, prefix)
        if a not in model.controls:
            raise LatticeError(f"strategy chose {a!r}, not in the control set")
        for j, p in enumerate(model.branch_probs):
            stack.append((model.child(prefix, a, j), mass * p))
    return TreeMeasure(root, model.horizon, masses, paths)


def conditional_measure(P: TreeMeasure, node) -> TreeMeasure:
    """Regular conditional law of ``P`` given the history ``node``."""
    b = node.branches if isinstance(node, PathPrefix) else tuple(node)
    mass = P.mass(b)
    if mass == 0:
        raise ZeroMassNodeError(f"node {b} has zero mass; conditional law undefined")
    masses = {leaf: m / mass for leaf, m in P.masses.items() if leaf[: len(b)] == b}
    paths = {leaf: P.paths[leaf] for leaf in masses}
    return TreeMeasure(P.path(b), P.horizon, masses, paths)


def stopped_nodes(P: TreeMeasure, tau) -> dict:
    """Map every charged leaf of ``P`` to its stopped ancestor (branch history).

    ``tau`` may be a :class:`StoppingRule`, an integer time, a mapping
    ``leaf -> time`` or a collection of node branch histories.
    """
    start = P.root.step
    out = {}
    if isinstance(tau, (StoppingRule, int)):
        rule = as_stopping_rule(tau)
        if isinstance(tau, int) and not start <= tau <= P.horizon:
            raise NotAStoppingRuleError(f"time {tau} outside [{start}, {P.horizon}]")
        for leaf, path in P.paths.items():
            out[leaf] = leaf[: rule.stop_step(path, start)]
        return out
    if isinstance(tau, Mapping):
        for leaf in P.masses:
            if leaf not in tau:
                raise NotAStoppingRuleError(f"no stopping time for leaf {leaf}")
            t = tau[leaf]
            if not start <= t <= P.horizon:
                raise NotAStoppingRuleError(f"time {t} outside [{start}, {P.horizon}]")
            out[leaf] = leaf[:t]
        for a, b in itertools.permutations(P.masses, 2):
            t = tau[a]
            if a[:t] == b[:t] and tau[b] != t:
                raise NotAStoppingRuleError(
                    f"leaves {a} and {b} agree up to {t} but stop at {t} and {tau[b]}"
                )
        return out
    if isinstance(tau, Iterable):
        nodes = {tuple(n) for n in tau}
        for leaf in P.masses:
            hits = [leaf[:k] for k in range(start, P.horizon + 1) if leaf[:k] in nodes]
            if len(hits) != 1:
                raise NotAStoppingRuleError(
                    f"leaf {leaf} meets {len(hits)} stopped nodes; need exactly one"
                )
            out[leaf] = hits[0]
        return out
    raise NotAStoppingRuleError(f"cannot interpret {tau!r} as a stopping rule")


def paste_measures(P: TreeMeasure, tau, Q) -> TreeMeasure:
    """Follow ``P`` up to ``tau`` and the kernel ``Q[node]`` afterwards."""
    stops = stopped_nodes(P, tau)
    masses, paths = {}, {}
    for node in sorted(set(stops.values())):
        weight = P.mass(node)
        if weight == 0:
            continue
        anchor = P.path(node)
        kernel = Q(anchor) if callable(Q) else Q[node]
        for leaf, m in kernel.masses.items():
            if not anchor.is_prefix_of(kernel.paths[leaf]):
                raise SupportViolationError(
                    f"kernel at {node} charges leaf {leaf} outside its subtree"
                )
            masses[leaf] = masses.get(leaf, 0) + weight * m
            paths[leaf] = kernel.paths[leaf]
    return TreeMeasure(P.root, P.horizon, masses, paths)


def expectation(P: TreeMeasure, payoff):
    """Mass-weighted sum of ``payoff`` over leaves (callable on the leaf path or
    mapping keyed by branch history); -inf if both parts are infinite."""
    leaves = P.leaves()
    if callable(payoff):
        values = [payoff(P.paths[b]) for b in leaves]
    else:
        values = [payoff[b] for b in leaves]
    return ext_expectation([P.masses[b] for b in leaves], values)
