"""Backward induction with the constraint level as an auxiliary state.

The value ``V(k, n, m)`` is the best expected reward from node ``n`` at step
``k`` when the remaining constraint budget is ``m``.  A budget is spent by
splitting it across the children: the child budgets ``m_j`` must satisfy
``sum_j p_j m_j <= m`` and the node itself needs ``g(k, n) <= m``.  Following
an allocation along the tree produces a supermartingale ``M`` that dominates
``g``, which is exactly the certificate used to randomise the constraint level.

Nodes are merged when they share step, current state and constraint summary
(and the reward only reads the terminal state); otherwise every branch history
is its own node.
"""
from __future__ import annotations

import bisect
import csv
import io
import itertools
import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

from ._numeric import NEG_INF, denominator, ext_expectation, fmt_number, is_exact, lcm, weighted_sum
from .constraint_lib import ConstraintFunctional, RewardFunctional, zero_constraint
from .errors import (
    BudgetConstructionError,
    GridTooCoarseWarning,
    InfeasibleRootWarning,
    InfeasibleStartError,
    SnellGapError,
)
from .oracle import enumerate_strategies
from .path_lattice import (
    LatticeModel,
    PathPrefix,
    Strategy,
    TreeMeasure,
    as_stopping_rule,
    induced_measure,
)

EXACT_GRID_CAP = 4097
DEFAULT_LEVELS = 33


def thread_count(threads=None) -> int:
    if threads is not None:
        return max(1, int(threads))
    try:
        return max(1, int(os.environ.get("BUDGET_DPP_THREADS", "1")))
    except ValueError:
        return 1


def _pmap(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# ---------------------------------------------------------------------------
# summary graph
# ---------------------------------------------------------------------------


@dataclass
class Node:
    id: int
    step: int
    state: tuple
    summary: Any
    prefix: PathPrefix
    g: Any
    children: dict = field(default_factory=dict)
    reward: Any = None


class SummaryGraph:
    """Recombined lattice below ``root``.

    Nodes merge on ``(state, constraint summary)`` when the reward is terminal
    (or absent); with a path-dependent reward every distinct prefix is kept.
    """

    def __init__(self, model: LatticeModel, g: ConstraintFunctional, f: RewardFunctional | None = None,
                 root: PathPrefix | None = None):
        self.model = model
        self.g = g
        self.f = f
        self.root_prefix = root or model.root()
        self.recombine = f is None or f.terminal is not None
        self.nodes: list[Node] = []
        self.layers: list[list[int]] = []
        self._index: list[dict] = []
        self._build()

    def _key(self, prefix, summary):
        return (prefix.last, summary) if self.recombine else (prefix.branches, prefix.states)

    def _add(self, prefix, summary, layer_index):
        key = self._key(prefix, summary)
        idx = self._index[layer_index]
        if key in idx:
            return idx[key]
        k = prefix.step
        node = Node(len(self.nodes), k, prefix.last, summary, prefix, self.g.summary_eval(k, summary, prefix.last))
        if k == self.model.horizon and self.f is not None:
            node.reward = self.f.terminal(prefix.last) if self.recombine else self.f.eval(prefix)
        self.nodes.append(node)
        idx[key] = node.id
        self.layers[layer_index].append(node.id)
        return node.id

    def _build(self):
        model, g = self.model, self.g
        root = self.root_prefix
        k0 = root.step
        for _ in range(k0, model.horizon + 1):
            self.layers.append([])
            self._index.append({})
        self.root = self._add(root, g.summarize(root), 0)
        for li in range(model.horizon - k0):
            k = k0 + li
            for nid in self.layers[li]:
                node = self.nodes[nid]
                for a in model.controls:
                    kids = []
                    for j in range(model.outcomes):
                        x = model.next_state(k, node.state, a, j)
                        child = node.prefix.extend(j, x)
                        s = g.summary_update(k + 1, node.summary, x)
                        kids.append(self._add(child, s, li + 1))
                    node.children[a] = tuple(kids)

    @property
    def k0(self) -> int:
        return self.root_prefix.step

    def layer(self, k: int) -> list[int]:
        return self.layers[k - self.k0]

    def node_of(self, prefix: PathPrefix) -> int:
        """Node id of a prefix lying below the graph root."""
        if not self.root_prefix.is_prefix_of(prefix):
            raise KeyError(f"prefix {prefix.branches} is not below the graph root")
        key = self._key(prefix, self.g.summarize(prefix))
        return self._index[prefix.step - self.k0][key]


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BudgetGrid:
    """Budget levels; ``mode`` is ``"grid"`` (allocations restricted to levels)
    or ``"interp"`` (continuum allocations, piecewise-linear child values)."""

    levels: tuple
    mode: str = "grid"
    exact: bool = False

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        if len(self.levels) < 2:
            raise ValueError("a budget grid needs at least two levels")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("budget levels must be strictly increasing")
        if self.mode not in ("grid", "interp"):
            raise ValueError(f"unknown grid mode {self.mode!r}")

    @classmethod
    def uniform(cls, lo, hi, n=DEFAULT_LEVELS, mode="grid"):
        if is_exact(lo) and is_exact(hi):
            step = Fraction(hi - lo, n - 1)
            return cls(tuple(lo + i * step for i in range(n)), mode)
        return cls(tuple(lo + (hi - lo) * i / (n - 1) for i in range(n)), mode)

    @classmethod
    def dyadic(cls, horizon, outcomes=2, top=1):
        """``{j * outcomes**-horizon}`` on ``[0, top]``."""
        step = Fraction(1, outcomes**horizon)
        n = int(top / step)
        return cls(tuple(i * step for i in range(n + 1)), "grid", exact=True)

    def __len__(self):
        return len(self.levels)

    def floor_index(self, m) -> int:
        """Index of the largest level ``<= m``; -1 if ``m`` is below the grid."""
        return bisect.bisect_right(self.levels, m) - 1

    def contains(self, m) -> bool:
        i = self.floor_index(m)
        return i >= 0 and self.levels[i] == m


def exact_grid(graph: SummaryGraph, cap: int = EXACT_GRID_CAP) -> BudgetGrid | None:
    """Grid holding every reachable expected constraint value, when one exists.

    With rational branch probabilities of common denominator ``D`` and rational
    constraint values of common denominator ``Dg``, every conditional expectation
    from step ``k`` lies on ``1/(Dg D^(N-k))``-multiples.
    """
    model = graph.model
    gvals = [n.g for n in graph.nodes]
    if not model.exact or not all(is_exact(v) for v in gvals):
        return None
    D = lcm(denominator(p) for p in model.branch_probs)
    Dg = lcm(denominator(v) for v in gvals)
    step = Fraction(1, Dg * D ** (model.horizon - graph.k0))
    lo = min(0, min(gvals))
    hi = max(gvals)
    if hi <= lo:
        hi = lo + 1
    n = (hi - lo) / step
    if n + 1 > cap:
        return None
    return BudgetGrid(tuple(lo + i * step for i in range(int(n) + 1)), "grid", exact=True)


def default_grid(graph: SummaryGraph, mode="grid") -> BudgetGrid:
    if mode == "grid":
        g = exact_grid(graph)
        if g is not None:
            return g
    gvals = [n.g for n in graph.nodes]
    lo = min(0, min(gvals))
    hi = max(gvals)
    if hi <= lo:
        hi = lo + 1
    return BudgetGrid.uniform(float(lo), float(hi), DEFAULT_LEVELS, mode)


# ---------------------------------------------------------------------------
# minimal budget
# ---------------------------------------------------------------------------


@dataclass
class FeasibilityTable:
    graph: SummaryGraph
    w: dict

    @property
    def root(self):
        return self.w[self.graph.root]

    def at(self, prefix: PathPrefix):
        return self.w[self.graph.node_of(prefix)]


def minimal_budget(model: LatticeModel, g: ConstraintFunctional, root: PathPrefix | None = None,
                   graph: SummaryGraph | None = None) -> FeasibilityTable:
    """Smallest budget ``w(k, n)`` for which an admissible continuation exists.

    ``w(N, n) = g(N, n)``; ``w(k, n) = max(g(k, n), min_a sum_j p_j w(k+1, child_j(a)))``.
    """
    graph = graph or SummaryGraph(model, g, None, root)
    probs = model.branch_probs
    w = {}
    for layer in reversed(graph.layers):
        for nid in layer:
            node = graph.nodes[nid]
            if not node.children:
                w[nid] = node.g
                continue
            best = min(weighted_sum(probs, [w[c] for c in kids]) for kids in node.children.values())
            w[nid] = max(node.g, best)
    return FeasibilityTable(graph, w)


# ---------------------------------------------------------------------------
# allocation
# ---------------------------------------------------------------------------


def _breakpoints(values, levels, floor=None):
    """Levels where a nondecreasing value vector strictly increases (first
    feasible level included): the only allocations worth considering."""
    out = []
    prev = NEG_INF
    for i, v in enumerate(values):
        if v > prev and (floor is None or levels[i] >= floor):
            out.append(i)
            prev = v
    return out


def _feasible_levels(values, levels, floor=None):
    return [i for i, v in enumerate(values) if v > NEG_INF and (floor is None or levels[i] >= floor)]


def _combos(child_values, levels, probs, floors, saturate):
    """All candidate allocations in lexicographic order as (cost, value, idx tuple)."""
    picks = []
    for j, vals in enumerate(child_values):
        fl = floors[j] if floors is not None else None
        cand = _feasible_levels(vals, levels, fl) if saturate else _breakpoints(vals, levels, fl)
        if not cand:
            return []
        picks.append(cand)
    out = []
    for combo in itertools.product(*picks):
        cost = 0
        for p, i in zip(probs, combo):
            cost += p * levels[i]
        value = weighted_sum(probs, [child_values[j][i] for j, i in enumerate(combo)])
        out.append((cost, value, combo))
    return out


def _grid_allocate_all(child_values, levels, probs, floors=None, saturate=False):
    """Best allocation for every budget level at once.

    Returns per level ``(value, idx tuple or None)``; ties keep the
    lexicographically smallest allocation.
    """
    combos = _combos(child_values, levels, probs, floors, saturate)
    n = len(levels)
    result = [(NEG_INF, None)] * n
    if not combos:
        return result
    if saturate:
        by_cost = {}
        for rank, (cost, value, combo) in enumerate(combos):
            cur = by_cost.get(cost)
            if cur is None or value > cur[0]:
                by_cost[cost] = (value, combo)
        return [by_cost.get(m, (NEG_INF, None)) for m in levels]
    order = sorted(range(len(combos)), key=lambda r: combos[r][0])
    best_val, best_rank = NEG_INF, None
    ptr = 0
    for li, m in enumerate(levels):
        while ptr < len(order) and combos[order[ptr]][0] <= m:
            r = order[ptr]
            v = combos[r][1]
            if v > best_val or (v == best_val and best_rank is not None and r < best_rank):
                best_val, best_rank = v, r
            ptr += 1
        if best_rank is not None and best_val > NEG_INF:
            result[li] = (best_val, combos[best_rank][2])
    return result


def _interp_value(values, levels, x):
    if x >= levels[-1]:
        return values[-1]
    i = bisect.bisect_right(levels, x) - 1
    if i < 0:
        return NEG_INF
    lo, hi = values[i], values[i + 1]
    if x == levels[i] or lo == NEG_INF:
        return lo if x == levels[i] else NEG_INF
    t = (x - levels[i]) / (levels[i + 1] - levels[i])
    return lo + t * (hi - lo)


def _interp_allocate(m, child_values, levels, probs):
    """Continuum allocation with piecewise-linear child values: the optimum has
    all children but one at a grid breakpoint, the free one absorbs the rest."""
    J = len(child_values)
    feas = [_feasible_levels(v, levels) for v in child_values]
    if any(not f for f in feas):
        return NEG_INF, None
    best_val, best = NEG_INF, None
    for free in range(J):
        others = [j for j in range(J) if j != free]
        for combo in itertools.product(*(feas[j] for j in others)):
            spent = sum(probs[j] * levels[i] for j, i in zip(others, combo))
            x = (m - spent) / probs[free]
            if x < levels[feas[free][0]]:
                continue
            x = min(x, levels[-1])
            alloc = [None] * J
            vals = [None] * J
            for j, i in zip(others, combo):
                alloc[j] = levels[i]
                vals[j] = child_values[j][i]
            alloc[free] = x
            vals[free] = _interp_value(child_values[free], levels, x)
            v = weighted_sum(probs, vals)
            cand = tuple(alloc)
            if v > best_val or (v == best_val and best is not None and v > NEG_INF and cand < best):
                best_val, best = v, cand
    return best_val, best


def allocate_budget(m, child_values, child_floors, probs, levels=None, mode="grid", saturate=False):
    """Split budget ``m`` across children to maximise ``sum_j p_j child_value_j(m_j)``.

    Parameters
    ----------
    m : budget level to split.
    child_values : per child either a sequence of values on ``levels`` or a
        nondecreasing callable ``level -> value``.
    child_floors : minimal admissible budget per child.
    probs : branch probabilities.
    levels : grid levels; required in grid mode and for callables.
    mode : ``"grid"`` restricts child budgets to ``levels``; ``"interp"`` allows
        any real budget with piecewise-linear interpolation between levels.
    saturate : require ``sum_j p_j m_j == m`` instead of ``<=``.

    Returns
    -------
    (value, allocation) with ``(-inf, None)`` when nothing is feasible.
    """
    if levels is None:
        raise ValueError("levels are required")
    levels = tuple(levels)
    vals = []
    for j, cv in enumerate(child_values):
        v = [cv(l) for l in levels] if callable(cv) else list(cv)
        fl = child_floors[j] if child_floors is not None else None
        if fl is not None:
            v = [x if l >= fl else NEG_INF for x, l in zip(v, levels)]
        vals.append(v)
    if mode == "interp":
        return _interp_allocate(m, vals, levels, probs)
    grid_levels = levels
    extra = m not in levels
    if extra:
        grid_levels = tuple(sorted(set(levels) | {m}))
        vals = [[dict(zip(levels, v)).get(l, NEG_INF) for l in grid_levels] for v in vals]
    results = _grid_allocate_all(vals, grid_levels, probs, None, saturate)
    value, combo = results[grid_levels.index(m)]
    if combo is None:
        return NEG_INF, None
    return value, tuple(grid_levels[i] for i in combo)


# ---------------------------------------------------------------------------
# value surface and policy
# ---------------------------------------------------------------------------


@dataclass
class ValueSurface:
    """``V(k, n, level)`` on the budget grid plus minimal budgets ``w(k, n)``.

    ``label`` is ``"exact"`` on exact grids, ``"lower_bound"`` for other
    grid-restricted solves (every value is attained by a real strategy) and
    ``"approximate"`` in interpolation mode.
    """

    graph: SummaryGraph
    grid: BudgetGrid
    values: dict
    w: dict
    label: str = "exact"

    @property
    def model(self):
        return self.graph.model

    @property
    def root(self) -> int:
        return self.graph.root

    def node_id(self, node) -> int:
        return self.graph.node_of(node) if isinstance(node, PathPrefix) else int(node)

    def value(self, node, m):
        """V at an arbitrary budget: floor level in grid mode, linear
        interpolation in interp mode."""
        vals = self.values[self.node_id(node)]
        if self.grid.mode == "interp":
            return _interp_value(vals, self.grid.levels, m)
        i = self.grid.floor_index(m)
        return vals[i] if i >= 0 else NEG_INF

    def root_value(self, m):
        return self.value(self.root, m)

    def feasibility(self, node):
        return self.w[self.node_id(node)]

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "node_id", "summary_repr", "budget_level", "value", "feasible_min_budget"])
        for layer in self.graph.layers:
            for nid in layer:
                node = self.graph.nodes[nid]
                srepr = _summary_repr(node)
                for lvl, v in zip(self.grid.levels, self.values[nid]):
                    writer.writerow([node.step, nid, srepr, fmt_number(lvl), fmt_number(v), fmt_number(self.w[nid])])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


def _jsonable(x):
    if isinstance(x, tuple):
        return [_jsonable(v) for v in x]
    if isinstance(x, (int, float, Fraction)) and not isinstance(x, bool):
        return fmt_number(x)
    if x is None or isinstance(x, (str, bool)):
        return x
    return repr(x)


def _summary_repr(node: Node) -> str:
    return json.dumps({"state": _jsonable(node.state), "summary": _jsonable(node.summary)}, sort_keys=True)


@dataclass
class Policy:
    """Control and child-budget allocation for every (node, grid level)."""

    surface: ValueSurface
    control: dict
    allocation: dict
    saturate: bool = False

    def choose(self, node_id: int, m):
        """``(control, allocation, value)`` at an arbitrary budget ``m``."""
        grid = self.surface.grid
        if grid.mode == "grid" or grid.contains(m):
            i = grid.floor_index(m)
            if i < 0:
                return None, None, NEG_INF
            return self.control[node_id][i], self.allocation[node_id][i], self.surface.values[node_id][i]
        graph = self.surface.graph
        node = graph.nodes[node_id]
        if node.g > m:
            return None, None, NEG_INF
        best = (None, None, NEG_INF)
        for a in graph.model.controls:
            kids = node.children[a]
            v, alloc = _interp_allocate(m, [self.surface.values[c] for c in kids], grid.levels,
                                        graph.model.branch_probs)
            if v > best[2]:
                best = (a, alloc, v)
        return best

    def to_json(self) -> str:
        graph = self.surface.graph
        levels = self.surface.grid.levels
        out = {"levels": [fmt_number(l) for l in levels], "nodes": {}}
        for layer in graph.layers:
            for nid in layer:
                node = graph.nodes[nid]
                if not node.children:
                    continue
                decisions = {}
                for i, lvl in enumerate(levels):
                    a = self.control[nid][i]
                    if a is None:
                        continue
                    decisions[fmt_number(lvl)] = {
                        "control": _jsonable(a),
                        "allocation": [fmt_number(x) for x in self.allocation[nid][i]],
                    }
                out["nodes"][str(nid)] = {
                    "step": node.step,
                    "summary": json.loads(_summary_repr(node)),
                    "decisions": decisions,
                }
        return json.dumps(out, sort_keys=True, indent=1) + "\n"


def solve(model: LatticeModel, f: RewardFunctional, g: ConstraintFunctional, grid=None,
          root: PathPrefix | None = None, saturate: bool = False, m=None, mode: str = "grid",
          threads=None):
    """Backward induction for ``V(k, n, m)``.

    Terminal layer: ``V = f`` where ``g(N, n) <= m``, else ``-inf``.  Earlier
    layers: ``V(k, n, m) = max_a sup {sum_j p_j V(k+1, child_j(a), m_j)}`` over
    allocations with ``sum_j p_j m_j <= m`` (``== m`` when ``saturate``), and
    ``-inf`` whenever ``g(k, n) > m``.

    ``grid`` is a :class:`BudgetGrid`, a sequence of levels, or ``None``/``"auto"``
    (exact grid when the instance is rational, else 33 uniform levels).

    Returns ``(ValueSurface, Policy)``.
    """
    graph = SummaryGraph(model, g, f, root)
    if grid is None or (isinstance(grid, str) and grid == "auto"):
        grid = default_grid(graph, mode)
    elif not isinstance(grid, BudgetGrid):
        grid = BudgetGrid(tuple(grid), mode)
    feas = minimal_budget(model, g, root, graph)
    if grid.mode == "grid":
        off = [w for w in feas.w.values() if grid.levels[0] <= w <= grid.levels[-1] and not grid.contains(w)]
        if off:
            warnings.warn(
                f"{len(off)} minimal budgets fall between grid levels (e.g. {off[0]}); "
                "the feasibility frontier is not representable",
                GridTooCoarseWarning,
                stacklevel=2,
            )
    levels = grid.levels
    probs = model.branch_probs
    values, control, allocation = {}, {}, {}
    nthreads = thread_count(threads)

    def terminal(nid):
        node = graph.nodes[nid]
        return [node.reward if node.g <= lvl else NEG_INF for lvl in levels]

    def backward(nid):
        node = graph.nodes[nid]
        vals = [NEG_INF] * len(levels)
        ctrl = [None] * len(levels)
        alloc = [None] * len(levels)
        for a in model.controls:
            kids = node.children[a]
            child_vals = [values[c] for c in kids]
            if grid.mode == "grid":
                per_level = _grid_allocate_all(child_vals, levels, probs, None, saturate)
                per_level = [(v, None if c is None else tuple(levels[i] for i in c)) for v, c in per_level]
            else:
                per_level = [_interp_allocate(lvl, child_vals, levels, probs) for lvl in levels]
            for i, lvl in enumerate(levels):
                if node.g > lvl:
                    continue
                v, al = per_level[i]
                if al is not None and v > vals[i]:
                    vals[i], ctrl[i], alloc[i] = v, a, al
        return vals, ctrl, alloc

    for layer in reversed(graph.layers):
        if graph.nodes[layer[0]].step == model.horizon:
            for nid in layer:
                values[nid] = terminal(nid)
                control[nid] = [None] * len(levels)
                allocation[nid] = [None] * len(levels)
            continue
        results = _pmap(backward, layer, nthreads)
        for nid, (vals, ctrl, alloc) in zip(layer, results):
            values[nid], control[nid], allocation[nid] = vals, ctrl, alloc

    if grid.mode == "interp":
        label = "approximate"
    elif grid.exact:
        label = "exact"
    else:
        label = "lower_bound"
    surface = ValueSurface(graph, grid, values, feas.w, label)
    if m is not None and m < feas.root:
        warnings.warn(f"budget {m} is below the minimal feasible budget {feas.root}", InfeasibleRootWarning,
                      stacklevel=2)
    return surface, Policy(surface, control, allocation, saturate)


def pathwise_value(model: LatticeModel, f: RewardFunctional, g: ConstraintFunctional,
                   root: PathPrefix | None = None):
    """Classical DP where controls that allow ``g > 0`` on a charged branch are
    discarded (the hard pathwise-constrained problem)."""
    graph = SummaryGraph(model, g, f, root)
    probs = model.branch_probs
    v = {}
    for layer in reversed(graph.layers):
        for nid in layer:
            node = graph.nodes[nid]
            if node.g > 0:
                v[nid] = NEG_INF
            elif not node.children:
                v[nid] = node.reward
            else:
                v[nid] = max(weighted_sum(probs, [v[c] for c in kids]) for kids in node.children.values())
    return v[graph.root]


def unconstrained_value(model: LatticeModel, f: RewardFunctional, root: PathPrefix | None = None):
    return pathwise_value(model, f, zero_constraint(), root)


# ---------------------------------------------------------------------------
# budget processes
# ---------------------------------------------------------------------------


@dataclass
class BudgetProcess:
    """Node budgets ``M`` (keyed by branch history) along the measure of a
    strategy."""

    budget: dict
    measure: TreeMeasure
    level: Any
    strategy: Strategy | None = None

    @property
    def root(self):
        return self.budget[self.measure.root.branches]


@dataclass
class BudgetCheck:
    root_ok: bool
    supermartingale_violations: list
    domination_violations: list

    @property
    def ok(self) -> bool:
        return self.root_ok and not self.supermartingale_violations and not self.domination_violations


def _node_paths(P: TreeMeasure) -> dict:
    out = {}
    for leaf, path in P.paths.items():
        for k in range(P.root.step, P.horizon + 1):
            b = leaf[:k]
            if b not in out:
                out[b] = path.truncate(k)
    return out


def check_budget_process(bp: BudgetProcess, g: ConstraintFunctional, m=None, tol=None) -> BudgetCheck:
    """Root bound, one-step supermartingale and domination at every charged node."""
    P = bp.measure
    m = bp.level if m is None else m
    if tol is None:
        tol = 0 if all(is_exact(v) for v in bp.budget.values()) and is_exact(m) else 1e-12
    paths = _node_paths(P)
    root_ok = bp.root <= m + tol
    sup_bad, dom_bad = [], []
    for b, path in paths.items():
        mass = P.mass(b)
        if mass == 0:
            continue
        Mb = bp.budget[b]
        if Mb < g.eval(path.step, path) - tol:
            dom_bad.append(b)
        if path.step < P.horizon:
            kids = P.children(b)
            cond = sum(mk / mass * bp.budget[c] for c, mk in kids)
            if cond > Mb + tol:
                sup_bad.append(b)
    return BudgetCheck(root_ok, sup_bad, dom_bad)


def snell_envelope(P: TreeMeasure, g: ConstraintFunctional, root=None) -> dict:
    """Smallest ``P``-supermartingale dominating ``g`` on the grid times.

    Returns values for charged nodes only (zero-mass nodes are undefined).
    """
    paths = _node_paths(P)
    S = {}
    start = P.root.step if root is None else (root.step if isinstance(root, PathPrefix) else len(root))
    for k in range(P.horizon, start - 1, -1):
        for b in P.nodes(k):
            path = paths[b]
            gv = g.eval(k, path)
            if k == P.horizon:
                S[b] = gv
                continue
            mass = P.mass(b)
            cont = sum(mc / mass * S[c] for c, mc in P.children(b))
            S[b] = max(gv, cont)
    return S


def deterministic_constraint_values(P: TreeMeasure, g: ConstraintFunctional) -> list:
    """``[E^P[g(s)] for s = root step .. N]``."""
    out = []
    for s in range(P.root.step, P.horizon + 1):
        out.append(sum(m * g.eval(s, P.paths[b].truncate(s)) for b, m in P.masses.items()))
    return out


def build_budget_process(P: TreeMeasure, g: ConstraintFunctional, m, strategy: Strategy | None = None) -> BudgetProcess:
    """Budget process from the Snell envelope ``S``: ``M(root) = m`` and
    ``M = S`` below the root.

    Raises :class:`SnellGapError` when ``P`` meets ``E[g(s)] <= m`` at every
    deterministic time but ``S(root) > m``, and :class:`BudgetConstructionError`
    when ``P`` violates the deterministic-time constraints as well.
    """
    S = snell_envelope(P, g)
    r = P.root.branches
    if S[r] > m:
        det = max(deterministic_constraint_values(P, g))
        if det <= m:
            raise SnellGapError(
                f"measure satisfies E[g(s)] <= {m} at every time (max {det}) but its Snell envelope "
                f"starts at {S[r]}", S[r], det)
        raise BudgetConstructionError(f"Snell envelope {S[r]} exceeds budget {m}", S[r], det)
    M = dict(S)
    M[r] = m
    return BudgetProcess(M, P, m, strategy)


def realize_strategy(surface: ValueSurface, policy: Policy, m0):
    """Unroll the policy from the root at budget ``m0`` into a path-dependent
    :class:`Strategy` and its :class:`BudgetProcess`."""
    graph = surface.graph
    model = graph.model
    w_root = surface.w[graph.root]
    if m0 < w_root:
        raise InfeasibleStartError(f"budget {m0} is below the minimal feasible budget {w_root}")
    grid = surface.grid
    if grid.mode == "grid":
        i = grid.floor_index(m0)
        b0 = grid.levels[i] if i >= 0 else m0
    else:
        b0 = min(m0, grid.levels[-1])
    table, budget = {}, {}
    stack = [(graph.root_prefix, b0)]
    while stack:
        prefix, b = stack.pop()
        budget[prefix.branches] = b
        if prefix.step == model.horizon:
            continue
        nid = graph.node_of(prefix)
        a, alloc, v = policy.choose(nid, b)
        if a is None:
            raise InfeasibleStartError(f"no admissible control at {prefix.branches} with budget {b}")
        table[prefix.branches] = a
        for j in range(model.outcomes):
            stack.append((model.child(prefix, a, j), alloc[j]))
    strategy = Strategy.from_table(table, name="extracted")
    P = induced_measure(model, strategy, graph.root_prefix)
    return strategy, BudgetProcess(budget, P, m0, strategy)


extract_policy = realize_strategy


# ---------------------------------------------------------------------------
# DPP verification
# ---------------------------------------------------------------------------


@dataclass
class DPPReport:
    tau: str
    m0: Any
    value: Any
    supsup: Any
    supinf: Any
    reward_sup: Any
    strategies: int
    tol: Any = 0

    @property
    def passed(self) -> bool:
        def eq(a, b):
            if a == b:
                return True
            if self.tol and a not in (NEG_INF,) and b not in (NEG_INF,):
                return abs(a - b) <= self.tol
            return False

        return eq(self.supsup, self.value) and eq(self.supinf, self.value)


class DPPVerifier:
    """Enumerates strategies once for a stopping rule, then answers
    :meth:`report` for any initial budget.

    For a strategy ``P`` with Snell envelope ``S``: the admissible budget
    processes are exactly the grid supermartingales ``M`` with ``M_root <= m0``,
    ``M >= g`` before ``tau`` and ``M_tau >= S_tau``; the infimum of
    ``E[V(tau, X, M_tau)]`` is attained at ``M = S`` and the supremum by a budget
    allocation along ``P``.  Strategies sharing controls before ``tau`` and
    ``S_tau`` give identical contributions and are grouped.
    """

    def __init__(self, surface: ValueSurface, g: ConstraintFunctional, tau, f: RewardFunctional | None = None,
                 max_strategies: int = 1 << 16):
        self.surface = surface
        self.g = g
        self.tau = as_stopping_rule(tau)
        graph = surface.graph
        model = graph.model
        root = graph.root_prefix
        levels = surface.grid.levels
        self.groups = {}
        self.rewards = []
        count = 0
        for strategy in enumerate_strategies(model, root, max_strategies):
            count += 1
            P = induced_measure(model, strategy, root)
            S = snell_envelope(P, g)
            if f is not None:
                ef = ext_expectation([P.masses[b] for b in P.leaves()], [f.eval(P.paths[b]) for b in P.leaves()])
                self.rewards.append((S[root.branches], ef))
            sig_pre, sig_stop = [], []
            paths = _node_paths(P)
            stopped = {}
            for b in sorted(paths, key=lambda x: (len(x), x)):
                if any(b[:k] in stopped for k in range(root.step, len(b))):
                    continue
                path = paths[b]
                k = path.step
                if k == model.horizon or self.tau.predicate(k, path):
                    stopped[b] = path
                    sig_stop.append((b, S[b]))
                else:
                    sig_pre.append((b, strategy.decide(k, path)))
            sig = (tuple(sig_pre), tuple(sig_stop))
            if sig in self.groups:
                continue
            self.groups[sig] = self._evaluate(P, S, dict(sig_pre), stopped, paths, levels)
        self.strategies = count

    def _evaluate(self, P, S, controls, stopped, paths, levels):
        surface, g = self.surface, self.g
        graph = surface.graph
        probs = graph.model.branch_probs

        def vec(b):
            path = paths[b]
            if b in stopped:
                nid = graph.node_of(path)
                return [surface.values[nid][i] if lvl >= S[b] else NEG_INF for i, lvl in enumerate(levels)]
            kids = [b + (j,) for j in range(len(probs))]
            child = [vec(c) for c in kids]
            per = _grid_allocate_all(child, levels, probs)
            gv = g.eval(path.step, path)
            return [v if lvl >= gv else NEG_INF for (v, _), lvl in zip(per, levels)]

        r = P.root.branches
        sup_vec = vec(r)
        inf_val = 0
        for b, path in stopped.items():
            nid = graph.node_of(path)
            v = surface.value(nid, S[b])
            inf_val = weighted_sum([1, P.mass(b)], [inf_val, v])
        return S[r], sup_vec, inf_val

    def report(self, m0) -> DPPReport:
        surface = self.surface
        i = surface.grid.floor_index(m0)
        supsup = supinf = NEG_INF
        for s_root, sup_vec, inf_val in self.groups.values():
            if s_root > m0 or i < 0:
                continue
            supsup = max(supsup, sup_vec[i])
            supinf = max(supinf, inf_val)
        reward_sup = max((ef for s, ef in self.rewards if s <= m0), default=NEG_INF) if self.rewards else None
        tol = 0 if surface.label == "exact" else 1e-9
        return DPPReport(self.tau.name, m0, surface.root_value(m0), supsup, supinf, reward_sup, self.strategies, tol)


def dpp_verify(surface: ValueSurface, model: LatticeModel, f: RewardFunctional, g: ConstraintFunctional,
               tau, m0, max_strategies: int = 1 << 16) -> DPPReport:
    """Compare ``sup_P sup_M`` and ``sup_P inf_M`` of ``E[V(tau, X, M_tau)]`` with
    ``V(root, m0)`` over all enumerated strategies."""
    if surface.graph.model is not model:
        raise ValueError("surface was solved for a different model")
    return DPPVerifier(surface, g, tau, f, max_strategies).report(m0)
