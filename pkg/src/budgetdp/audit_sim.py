"""Forward checks of a strategy: exact tree expectations, Monte Carlo
estimates under the branch noise and budget-process ledgers."""
from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._numeric import NEG_INF, ext_expectation, fmt_number, is_exact, weighted_sum
from .budget_dpp import BudgetProcess, thread_count
from .constraint_lib import ConstraintFunctional, RewardFunctional
from .errors import UndefinedBudgetNodeError
from .path_lattice import LatticeModel, PathPrefix, Strategy, induced_measure

FLAG_TOL = 1e-12
MC_BATCH = 4096


def _num(x):
    if x is None:
        return None
    return fmt_number(x)


@dataclass
class AuditReport:
    """Per-step expected constraint values and expected reward.

    ``half_width`` is ``None`` for exact audits; for sampled audits it holds
    four standard errors per step (``None`` where undefined).
    """

    steps: list
    constraint: list
    reward: object
    m0: object
    flags: list
    kind: str = "exact"
    n_samples: int | None = None
    seed: int | None = None
    half_width: list | None = None
    reward_half_width: object = None
    budget_violations: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.flags and not any(self.budget_violations.values())

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "m0": _num(self.m0),
            "steps": list(self.steps),
            "constraint": [_num(v) for v in self.constraint],
            "reward": _num(self.reward),
            "flags": list(self.flags),
            "budget_violations": dict(self.budget_violations),
        }
        if self.kind == "monte_carlo":
            out["n_samples"] = self.n_samples
            out["seed"] = self.seed
            out["half_width"] = [_num(v) for v in self.half_width]
            out["reward_half_width"] = _num(self.reward_half_width)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"


def _over(value, m0) -> bool:
    if is_exact(value) and is_exact(m0):
        return value > m0
    return value > m0 + FLAG_TOL


def exact_audit(model: LatticeModel, strategy: Strategy, g: ConstraintFunctional, f: RewardFunctional, m0,
                root: PathPrefix | None = None, budget: BudgetProcess | None = None) -> AuditReport:
    """Exact ``E[g(s)]`` for every step and ``E[f]`` by summation over the
    tree; steps with ``E[g(s)] > m0`` (beyond 1e-12 for floats) are flagged."""
    root = root or model.root()
    P = induced_measure(model, strategy, root)
    leaves = P.leaves()
    weights = [P.masses[b] for b in leaves]
    steps = list(range(root.step, model.horizon + 1))
    constraint = [weighted_sum(weights, [g.eval(s, P.paths[b].truncate(s)) for b in leaves]) for s in steps]
    reward = ext_expectation(weights, [f.eval(P.paths[b]) for b in leaves])
    flags = [s for s, v in zip(steps, constraint) if _over(v, m0)]
    report = AuditReport(steps, constraint, reward, m0, flags)
    if budget is not None:
        rows = budget_ledger(budget, g)
        report.budget_violations = {
            "supermartingale": sum(not r.supermartingale_ok for r in rows),
            "domination": sum(not r.dominated for r in rows),
            "root": int(budget.root > m0),
        }
    return report


def sample_branches(probs, rng: np.random.Generator, n: int, depth: int) -> np.ndarray:
    """``(n, depth)`` branch indices by inverse CDF on ``probs`` in declared order."""
    cdf = np.cumsum([float(p) for p in probs])
    cdf[-1] = np.inf
    u = rng.random((n, depth))
    return np.searchsorted(cdf, u, side="right")


def sample_path(model: LatticeModel, strategy: Strategy, rng: np.random.Generator,
                root: PathPrefix | None = None) -> PathPrefix:
    root = root or model.root()
    branches = sample_branches(model.branch_probs, rng, 1, model.horizon - root.step)[0]
    prefix = root
    for j in branches:
        a = strategy.decide(prefix.step, prefix)
        prefix = model.child(prefix, a, int(j))
    return prefix


def monte_carlo_audit(model: LatticeModel, strategy: Strategy, g: ConstraintFunctional, f: RewardFunctional,
                      m0, n_samples: int, seed: int, root: PathPrefix | None = None,
                      batch_size: int = MC_BATCH, threads=None) -> AuditReport:
    """Sampled version of :func:`exact_audit`.

    Batch ``b`` draws from ``default_rng(SeedSequence([seed, b]))``, so the
    report depends only on ``(seed, n_samples, batch_size)``.  A step is
    flagged when its estimate exceeds ``m0`` by more than four standard errors.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    root = root or model.root()
    steps = list(range(root.step, model.horizon + 1))
    depth = model.horizon - root.step
    cache = {}

    def payoff(branches):
        key = tuple(int(j) for j in branches)
        if key not in cache:
            prefix = root
            for j in key:
                prefix = model.child(prefix, strategy.decide(prefix.step, prefix), j)
            row = [float(g.eval(s, prefix.truncate(s))) for s in steps]
            row.append(float(f.eval(prefix)))
            cache[key] = row
        return cache[key]

    sizes = [min(batch_size, n_samples - start) for start in range(0, n_samples, batch_size)]

    def run(b):
        rng = np.random.default_rng(np.random.SeedSequence([seed, b]))
        draws = sample_branches(model.branch_probs, rng, sizes[b], depth)
        return np.array([payoff(row) for row in draws], dtype=float).reshape(sizes[b], len(steps) + 1)

    n_threads = thread_count(threads)
    if n_threads > 1 and len(sizes) > 1:
        # warm the cache serially so worker threads only read it
        for key in _all_histories(model.outcomes, depth):
            payoff(key)
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            batches = list(pool.map(run, range(len(sizes))))
    else:
        batches = [run(b) for b in range(len(sizes))]
    data = np.concatenate(batches, axis=0)

    means, halves = [], []
    for col in range(data.shape[1]):
        x = data[:, col]
        if np.isneginf(x).any():
            means.append(NEG_INF)
            halves.append(None)
            continue
        means.append(float(x.mean()))
        halves.append(4 * float(x.std(ddof=1)) / math.sqrt(n_samples) if n_samples > 1 else None)
    constraint, reward = means[:-1], means[-1]
    flags = [s for s, v, h in zip(steps, constraint, halves) if v > m0 + (h or 0) + FLAG_TOL]
    return AuditReport(steps, constraint, reward, m0, flags, "monte_carlo", n_samples, seed, halves[:-1], halves[-1])


def _all_histories(J, depth):
    return itertools.product(range(J), repeat=depth)


# ---------------------------------------------------------------------------
# budget ledgers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LedgerEntry:
    step: int
    budget: object
    g: object
    dominated: bool


def track_budget(strategy: Strategy, budget_process: BudgetProcess, path: PathPrefix,
                 g: ConstraintFunctional) -> list:
    """``(step, M, g, M >= g)`` along one path from the process root."""
    start = budget_process.measure.root.step
    out = []
    for k in range(start, path.step + 1):
        prefix = path.truncate(k)
        if prefix.branches not in budget_process.budget:
            raise UndefinedBudgetNodeError(f"no budget at node {prefix.branches}")
        M = budget_process.budget[prefix.branches]
        gv = g.eval(k, prefix)
        out.append(LedgerEntry(k, M, gv, M >= gv))
    return out


@dataclass(frozen=True)
class NodeCheck:
    node: tuple
    step: int
    budget: object
    g: object
    continuation: object
    dominated: bool
    supermartingale_ok: bool


def budget_ledger(budget_process: BudgetProcess, g: ConstraintFunctional, tol=None) -> list:
    """One row per charged node: domination and the one-step supermartingale
    inequality under the exact branch weights of the attached measure."""
    P = budget_process.measure
    M = budget_process.budget
    exact = all(is_exact(v) for v in M.values())
    tol = (0 if exact else FLAG_TOL) if tol is None else tol
    rows = []
    for k in range(P.root.step, P.horizon + 1):
        for b in P.nodes(k):
            if b not in M:
                raise UndefinedBudgetNodeError(f"no budget at node {b}")
            path = P.path(b)
            gv = g.eval(k, path)
            cont = None
            sup_ok = True
            if k < P.horizon:
                mass = P.mass(b)
                kids = P.children(b)
                for c, _ in kids:
                    if c not in M:
                        raise UndefinedBudgetNodeError(f"no budget at node {c}")
                cont = sum(mc / mass * M[c] for c, mc in kids)
                sup_ok = cont <= M[b] + tol
            rows.append(NodeCheck(b, k, M[b], gv, cont, M[b] >= gv - tol, sup_ok))
    return rows


def flagged_nodes(budget_process: BudgetProcess, g: ConstraintFunctional) -> list:
    """Nodes failing domination or the supermartingale inequality."""
    return [r.node for r in budget_ledger(budget_process, g) if not (r.dominated and r.supermartingale_ok)]
