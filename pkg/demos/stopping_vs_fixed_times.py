"""Budget requirement of a single strategy: fixed times versus stopping times.

The miss indicator of a target set is not absorbing, so a path may miss at
one step and recover later.  The smallest budget process dominating the miss
indicator starts at its Snell envelope, which can exceed the largest
fixed-time miss probability.
"""
from fractions import Fraction

from budgetdp import HalfSpace, LatticeModel, Strategy, g_quantile, induced_measure, snell_envelope
from budgetdp.budget_dpp import build_budget_process, deterministic_constraint_values
from budgetdp.errors import SnellGapError

HALF = Fraction(1, 2)


def walk(k, x, a, j):
    return (x[0] + (1 if j == 0 else -1),)


model = LatticeModel(3, (HALF, HALF), (0,), walk, (1,))
g = g_quantile(HalfSpace(0, 1, "above"))
P = induced_measure(model, Strategy.constant(0))

fixed = deterministic_constraint_values(P, g)
S = snell_envelope(P, g)
print("miss probability by step:", [str(v) for v in fixed])
print("largest fixed-time value:", max(fixed))
print("Snell envelope at the root:", S[()])

try:
    build_budget_process(P, g, max(fixed))
except SnellGapError as exc:
    print("budget", max(fixed), "admits no process:", exc)
bp = build_budget_process(P, g, S[()])
print("process at budget", S[()], "built with", len(bp.budget), "node values")
