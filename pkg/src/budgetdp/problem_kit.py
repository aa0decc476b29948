"""Ready-made constrained problems and target reachability sets.

Pathwise constraints (stay in an open set, stay above a floor, bounded
drawdown) become expectation constraints at budget 0 for their violation
indicator.  A success-probability requirement ``P(X_s in G(s)) >= m`` becomes
the budget ``1 - m`` for the miss indicator, and ``m = 1`` is the target
problem.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Any

from ._numeric import fmt_number
from .budget_dpp import SummaryGraph, _pmap, solve, thread_count
from .constraint_lib import (
    ConstraintFunctional,
    RewardFunctional,
    StepMap,
    g_drawdown,
    g_floor,
    g_quantile,
    g_state,
    quantile_level_transform,
    zero_constraint,
)
from .errors import DomainError
from .path_lattice import LatticeModel, PathPrefix, StoppingRule, as_stopping_rule

KINDS = ("none", "state", "floor", "drawdown", "quantile", "target", "custom")


@dataclass
class ProblemSpec:
    """A model, reward and constraint together with the user-facing level.

    ``native_level`` is what the user asked for (a budget, or a success
    probability for quantile problems); ``budget_level`` is the level handed to
    the solver.
    """

    model: LatticeModel
    reward: RewardFunctional
    constraint: ConstraintFunctional
    kind: str
    native_level: Any
    budget_level: Any
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if self.kind in ("state", "floor", "drawdown", "target") and self.budget_level != 0:
            raise DomainError(f"{self.kind} problems run at budget 0, got {self.budget_level}")
        if self.kind == "quantile" and self.budget_level != quantile_level_transform(self.native_level):
            raise DomainError("quantile budget must equal 1 - probability")

    def with_level(self, native) -> "ProblemSpec":
        """Same problem at another native level (a budget, or a probability for
        quantile problems)."""
        if self.kind == "quantile":
            budget = quantile_level_transform(native)
        elif self.kind in ("none", "custom"):
            budget = native
        else:
            raise DomainError(f"{self.kind} problems have a fixed level")
        return ProblemSpec(self.model, self.reward, self.constraint, self.kind, native, budget, dict(self.params))

    def solve(self, grid=None, **kwargs):
        return solve(self.model, self.reward, self.constraint, grid, m=self.budget_level, **kwargs)

    def value(self, grid=None, **kwargs):
        surface, _ = self.solve(grid, **kwargs)
        return surface.root_value(self.budget_level)


def _x0(model: LatticeModel):
    return model.initial_state


def _scalar_x0(model: LatticeModel, what: str):
    if model.dim != 1:
        raise DomainError(f"{what} needs one-dimensional states, got dimension {model.dim}")
    return model.initial_state[0]


def build_unconstrained_problem(model: LatticeModel, f: RewardFunctional) -> ProblemSpec:
    return ProblemSpec(model, f, zero_constraint(), "none", 0, 0)


def build_state_problem(model: LatticeModel, open_sets, f: RewardFunctional) -> ProblemSpec:
    """Stay inside the open set ``O(k)`` at every grid time."""
    if not StepMap(open_sets, "open set")(0).interior(_x0(model)):
        raise DomainError(f"initial state {_x0(model)} lies outside the open set at step 0")
    return ProblemSpec(model, f, g_state(open_sets), "state", 0, 0, {"open_sets": open_sets})


def build_floor_problem(model: LatticeModel, floor_path, f: RewardFunctional) -> ProblemSpec:
    """Stay at or above ``floor(k)`` at every grid time (one-dimensional states)."""
    x0 = _scalar_x0(model, "floor problem")
    floor0 = StepMap(floor_path, "floor")(0)
    if x0 < floor0:
        raise DomainError(f"initial state {x0} is below the floor {floor0}")
    return ProblemSpec(model, f, g_floor(floor_path), "floor", 0, 0, {"floor": floor_path})


def build_drawdown_problem(model: LatticeModel, alpha, f: RewardFunctional) -> ProblemSpec:
    """Keep ``x_k >= alpha(k) * max_{r <= k} x_r`` (nonnegative one-dimensional states)."""
    x0 = _scalar_x0(model, "drawdown problem")
    if x0 < 0:
        raise DomainError(f"drawdown problem needs a nonnegative start, got {x0}")
    return ProblemSpec(model, f, g_drawdown(alpha, x0), "drawdown", 0, 0, {"alpha": alpha})


def build_quantile_problem(model: LatticeModel, targets, f: RewardFunctional, m) -> ProblemSpec:
    """Require ``P(X_s in G(s)) >= m`` at every grid time."""
    budget = quantile_level_transform(m)
    return ProblemSpec(model, f, g_quantile(targets), "quantile", m, budget, {"targets": targets})


def build_target_problem(model: LatticeModel, targets, f: RewardFunctional) -> ProblemSpec:
    """Almost-sure version of the quantile problem."""
    spec = build_quantile_problem(model, targets, f, 1)
    spec.kind = "target"
    return spec


# ---------------------------------------------------------------------------
# reachability
# ---------------------------------------------------------------------------


@dataclass
class ReachabilitySet:
    """``member[node id]`` is True when some strategy keeps ``X_s in G(s)`` for
    every remaining grid time with probability one."""

    graph: SummaryGraph
    member: dict
    targets: Any

    def __contains__(self, prefix: PathPrefix) -> bool:
        return self.member[self.graph.node_of(prefix)]

    def layer(self, k: int) -> dict:
        return {nid: self.member[nid] for nid in self.graph.layer(k)}

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "node", "in_D"])
        for layer in self.graph.layers:
            for nid in layer:
                node = self.graph.nodes[nid]
                state = " ".join(fmt_number(x) for x in node.state)
                writer.writerow([node.step, state, "true" if self.member[nid] else "false"])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


def reachability_sets(model: LatticeModel, targets, root: PathPrefix | None = None, threads=None) -> ReachabilitySet:
    """Backward pass: ``D(N) = {x in G(N)}`` and ``D(k)`` holds the nodes in
    ``G(k)`` with a control sending every child into ``D(k+1)``."""
    target = StepMap(targets, "target")
    graph = SummaryGraph(model, g_quantile(targets), None, root)
    member = {}
    n_threads = thread_count(threads)
    for layer in reversed(graph.layers):

        def test(nid):
            node = graph.nodes[nid]
            if not target(node.step).contains(node.state):
                return False
            if not node.children:
                return True
            return any(all(member[c] for c in kids) for kids in node.children.values())

        for nid, ok in zip(layer, _pmap(test, layer, n_threads)):
            member[nid] = ok
    return ReachabilitySet(graph, member, targets)


def geometric_dpp_violations(reach: ReachabilitySet, tau, strict_path: bool = True) -> list:
    """Nodes where membership in ``D`` disagrees with the stopped identity.

    For a node at step ``t`` the identity reads: ``n in D(t)`` iff some strategy
    keeps ``X_s in G(s)`` for ``t <= s < tau`` and reaches ``X_tau in D(tau)``,
    almost surely.  It is evaluated forward on full prefixes.  With
    ``strict_path=False`` the condition between ``t`` and ``tau`` is dropped,
    which breaks the identity whenever a path can leave ``G`` and re-enter
    ``D`` later.
    """
    tau = as_stopping_rule(tau)
    graph = reach.graph
    model = graph.model
    target = StepMap(reach.targets, "target")

    def stopped_ok(prefix):
        k = prefix.step
        if tau.predicate(k, prefix) or k == model.horizon:
            return reach.member[graph.node_of(prefix)]
        if strict_path and not target(k).contains(prefix.last):
            return False
        return any(
            all(stopped_ok(model.child(prefix, a, j)) for j in range(model.outcomes))
            for a in model.controls
        )

    bad = []
    for layer in graph.layers:
        for nid in layer:
            node = graph.nodes[nid]
            if reach.member[nid] != stopped_ok(node.prefix):
                bad.append((node.step, nid))
    return bad


def stopping_family(model: LatticeModel, targets=None) -> list:
    """Deterministic times, the terminal rule and (when given) first entry into
    the target sets: the rules used to test the fixed-point identity."""
    rules = [StoppingRule.at(k) for k in range(model.horizon + 1)] + [StoppingRule.terminal()]
    if targets is not None:
        target = StepMap(targets, "target")
        rules.append(StoppingRule(lambda k, p: target(k).contains(p.last), name="hit(G)"))
    return rules
