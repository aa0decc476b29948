"""Exhaustive ground truth for small trees.

Strategies are enumerated as decision tables over full branch histories, so
nothing here relies on the summary reduction used by the solver.
"""
from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass

from ._numeric import NEG_INF, ext_expectation, fmt_number, is_exact, weighted_sum
from .constraint_lib import ConstraintFunctional, RewardFunctional
from .errors import CapExceededError
from .path_lattice import LatticeModel, PathPrefix, Strategy, as_stopping_rule, induced_measure


@dataclass(frozen=True)
class OracleBudget:
    max_strategies: int = 1 << 16
    max_budget_processes: int = 1 << 18

    def __post_init__(self):
        if self.max_strategies < 1 or self.max_budget_processes < 1:
            raise ValueError("oracle caps must be positive")


class _Infeasible:
    def __repr__(self):
        return "INFEASIBLE"

    def __bool__(self):
        return False


INFEASIBLE = _Infeasible()


def _caps(budget) -> OracleBudget:
    if budget is None:
        return OracleBudget()
    if isinstance(budget, int):
        return OracleBudget(max_strategies=budget)
    return budget


def decision_nodes(model: LatticeModel, root: PathPrefix | None = None) -> list:
    """Branch histories where a control is chosen, shortest first."""
    root = root or model.root()
    out = []
    for k in range(root.step, model.horizon):
        out.extend(model.branch_histories(root, k))
    return out


def count_strategies(model: LatticeModel, root: PathPrefix | None = None) -> int:
    return len(model.controls) ** len(decision_nodes(model, root))


def enumerate_strategies(model: LatticeModel, root: PathPrefix | None = None, budget=None):
    """Every path-dependent strategy below ``root`` exactly once, in product
    order over :func:`decision_nodes` and declared control order."""
    caps = _caps(budget)
    nodes = decision_nodes(model, root)
    total = len(model.controls) ** len(nodes)
    if total > caps.max_strategies:
        raise CapExceededError("strategies", total, caps.max_strategies)
    for i, combo in enumerate(itertools.product(model.controls, repeat=len(nodes))):
        yield Strategy.from_table(dict(zip(nodes, combo)), name=f"enum#{i}")


def _le(a, b):
    if is_exact(a) and is_exact(b):
        return a <= b
    return a <= b + 1e-12


@dataclass
class StrategyStats:
    index: int
    strategy: Strategy
    constraint_values: list
    reward: object

    @property
    def worst_constraint(self):
        return max(self.constraint_values)


class OracleTable:
    """Per-strategy expected constraint values and reward, computed once so
    the budget can be swept cheaply."""

    def __init__(self, model: LatticeModel, f: RewardFunctional | None, g: ConstraintFunctional,
                 root: PathPrefix | None = None, budget=None):
        self.model = model
        self.root = root or model.root()
        self.stats = []
        for i, strategy in enumerate(enumerate_strategies(model, self.root, budget)):
            P = induced_measure(model, strategy, self.root)
            leaves = P.leaves()
            weights = [P.masses[b] for b in leaves]
            cvals = []
            for s in range(self.root.step, model.horizon + 1):
                cvals.append(weighted_sum(weights, [g.eval(s, P.paths[b].truncate(s)) for b in leaves]))
            reward = ext_expectation(weights, [f.eval(P.paths[b]) for b in leaves]) if f is not None else None
            self.stats.append(StrategyStats(i, strategy, cvals, reward))

    def value(self, m):
        """``(value, argmax strategy)`` or ``(-inf, INFEASIBLE)``; ties keep the
        first strategy in enumeration order."""
        best, arg = NEG_INF, INFEASIBLE
        for st in self.stats:
            if all(_le(c, m) for c in st.constraint_values):
                if arg is INFEASIBLE or st.reward > best:
                    best, arg = st.reward, st.strategy
        return best, arg

    def min_max_constraint(self):
        """``min over strategies of max_s E[g(s)]``: the smallest feasible budget."""
        return min(st.worst_constraint for st in self.stats)


def oracle_value(model: LatticeModel, f: RewardFunctional, g: ConstraintFunctional, m,
                 root: PathPrefix | None = None, budget=None):
    """Best ``E[f]`` over strategies with ``E[g(s)] <= m`` at every step from the root on."""
    return OracleTable(model, f, g, root, budget).value(m)


def min_max_constraint(model: LatticeModel, g: ConstraintFunctional, root: PathPrefix | None = None, budget=None):
    return OracleTable(model, None, g, root, budget).min_max_constraint()


def oracle_value_recursive(model: LatticeModel, f: RewardFunctional, g: ConstraintFunctional, m,
                           root: PathPrefix | None = None):
    """Second oracle: builds every decision table by recursion over subtrees and
    evaluates it by direct recursion, without measures or caching."""
    root = root or model.root()
    N = model.horizon
    steps = range(root.step, N + 1)

    def tables(prefix):
        if prefix.step == N:
            yield {}
            return
        for a in model.controls:
            kids = [model.child(prefix, a, j) for j in range(model.outcomes)]
            for combo in itertools.product(*(list(tables(c)) for c in kids)):
                table = {prefix.branches: a}
                for t in combo:
                    table.update(t)
                yield table

    def walk(prefix, table, weight, gsum, leaves):
        # g(s, .) only reads the prefix up to s, so each node charges its own step
        gsum[prefix.step] += weight * g.eval(prefix.step, prefix)
        if prefix.step == N:
            leaves.append((weight, f.eval(prefix)))
            return
        a = table[prefix.branches]
        for j, p in enumerate(model.branch_probs):
            walk(model.child(prefix, a, j), table, weight * p, gsum, leaves)

    best, found = NEG_INF, False
    for table in tables(root):
        gsum = {s: 0 for s in steps}
        leaves = []
        walk(root, table, 1, gsum, leaves)
        if not all(_le(gsum[s], m) for s in steps):
            continue
        value = ext_expectation([w for w, _ in leaves], [v for _, v in leaves])
        if not found or value > best:
            best, found = value, True
    return best


# ---------------------------------------------------------------------------
# budget-process enumeration
# ---------------------------------------------------------------------------


def instance_hash(surface, m, tau_name: str) -> str:
    """Fingerprint of the solved lattice (states, constraint and reward values)."""
    graph = surface.graph
    model = graph.model
    rows = [
        [fmt_number(p) for p in model.branch_probs],
        [repr(a) for a in model.controls],
        model.horizon,
        list(graph.root_prefix.branches),
        fmt_number(m),
        tau_name,
    ]
    for node in graph.nodes:
        rows.append([
            node.step,
            [fmt_number(x) for x in node.state],
            fmt_number(node.g),
            None if node.reward is None else fmt_number(node.reward),
            [[repr(a), list(kids)] for a, kids in node.children.items()],
        ])
    blob = json.dumps(rows, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class SupInfReport:
    instance_hash: str
    dp_value: object
    oracle_value: object
    supsup: object
    supinf: object
    strategies: int = 0
    budget_vectors: int = 0

    @property
    def passed(self) -> bool:
        return self.supsup == self.dp_value and self.supinf == self.dp_value

    def to_dict(self) -> dict:
        return {
            "instance_hash": self.instance_hash,
            "dp_value": fmt_number(self.dp_value),
            "oracle_value": fmt_number(self.oracle_value),
            "supsup": fmt_number(self.supsup),
            "supinf": fmt_number(self.supinf),
            "pass": self.passed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _stopped_vectors(model, strategy, root, g, tau, levels, cap):
    """All vectors ``(M at each stopped node)`` of grid budget processes under
    ``strategy``, as a function ``achievable(root, root budget)``.

    Before the stopping rule fires every node needs ``M >= g`` and
    ``sum_j p_j M(child_j) <= M``; a stopped value must extend to a full
    process below it, which is checked by exhaustive search.
    """
    probs = model.branch_probs
    N = model.horizon
    extend_memo = {}

    def extendable(prefix, lvl):
        key = (prefix.branches, lvl)
        if key in extend_memo:
            return extend_memo[key]
        ok = g.eval(prefix.step, prefix) <= lvl
        if ok and prefix.step < N:
            a = strategy.decide(prefix.step, prefix)
            kids = [model.child(prefix, a, j) for j in range(model.outcomes)]
            ok = False
            for combo in itertools.product(levels, repeat=len(kids)):
                if sum(p * c for p, c in zip(probs, combo)) <= lvl and all(
                    extendable(k, c) for k, c in zip(kids, combo)
                ):
                    ok = True
                    break
        extend_memo[key] = ok
        return ok

    stopped_order = []

    def collect(prefix):
        if prefix.step == N or tau.predicate(prefix.step, prefix):
            stopped_order.append(prefix)
            return
        a = strategy.decide(prefix.step, prefix)
        for j in range(model.outcomes):
            collect(model.child(prefix, a, j))

    collect(root)
    position = {p.branches: i for i, p in enumerate(stopped_order)}
    memo = {}

    def achievable(prefix, lvl):
        key = (prefix.branches, lvl)
        if key in memo:
            return memo[key]
        out = set()
        if prefix.branches in position:
            if extendable(prefix, lvl):
                out.add(((position[prefix.branches], lvl),))
        elif g.eval(prefix.step, prefix) <= lvl:
            a = strategy.decide(prefix.step, prefix)
            kids = [model.child(prefix, a, j) for j in range(model.outcomes)]
            for combo in itertools.product(levels, repeat=len(kids)):
                if sum(p * c for p, c in zip(probs, combo)) > lvl:
                    continue
                parts = [achievable(k, c) for k, c in zip(kids, combo)]
                if any(not s for s in parts):
                    continue
                for pieces in itertools.product(*parts):
                    out.add(tuple(itertools.chain.from_iterable(pieces)))
                    if len(out) > cap:
                        raise CapExceededError("budget processes", len(out), cap)
        memo[key] = out
        return out

    return stopped_order, achievable


def supinf_supsup_check(model: LatticeModel, f: RewardFunctional, g: ConstraintFunctional, m, tau, surface,
                        root: PathPrefix | None = None, budget=None) -> SupInfReport:
    """Brute-force both sides of the dynamic programming identity at ``tau``.

    For each strategy, every grid budget process with root budget ``<= m`` is
    enumerated (restricted to its values at the stopped nodes, which is all
    ``E[V(tau, X, M_tau)]`` reads).  A strategy without any valid process
    contributes ``-inf`` to both sides.
    """
    caps = _caps(budget)
    tau = as_stopping_rule(tau)
    root = root or model.root()
    levels = tuple(l for l in surface.grid.levels)
    root_levels = [l for l in levels if l <= m]
    supsup = supinf = NEG_INF
    n_vectors = 0
    n_strategies = 0
    for strategy in enumerate_strategies(model, root, caps):
        n_strategies += 1
        if not root_levels:
            continue
        stopped, achievable = _stopped_vectors(model, strategy, root, g, tau, levels,
                                               caps.max_budget_processes)
        vectors = set()
        for lvl in root_levels:
            vectors |= achievable(root, lvl)
        if not vectors:
            continue
        n_vectors += len(vectors)
        masses = {}
        for p in stopped:
            w = 1
            for j in p.branches[root.step:]:
                w *= model.branch_probs[j]
            masses[p.branches] = w
        weights = [masses[p.branches] for p in stopped]
        lo, hi = None, NEG_INF
        for vec in vectors:
            vals = [surface.value(surface.graph.node_of(stopped[i]), lvl) for i, lvl in vec]
            v = weighted_sum(weights, vals)
            hi = max(hi, v)
            lo = v if lo is None else min(lo, v)
        supsup = max(supsup, hi)
        supinf = max(supinf, lo)
    dp = surface.root_value(m)
    ov, _ = OracleTable(model, f, g, root, caps).value(m)
    return SupInfReport(instance_hash(surface, m, tau.name), dp, ov, supsup, supinf, n_strategies, n_vectors)

