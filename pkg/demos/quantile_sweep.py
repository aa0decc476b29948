"""Digital-payoff maximisation under a success-probability floor.

Sweeps the required probability of staying at or above 1 and prints the
optimal value, the realised strategy's audit and its budget process.
"""
from fractions import Fraction

from budgetdp import (
    HalfSpace,
    LatticeModel,
    build_quantile_problem,
    exact_audit,
    indicator_reward,
    realize_strategy,
)

HALF = Fraction(1, 2)


def stake(k, x, a, j):
    return (x[0] + (a if j == 0 else -a),)


model = LatticeModel(3, (HALF, HALF), (0, 1, 2), stake, (1,))
reward = indicator_reward(HalfSpace(0, 3, "above"))
base = build_quantile_problem(model, HalfSpace(0, 1, "above"), reward, 0)
surface, policy = base.solve()
print(f"minimal budget at the root: {surface.w[surface.root]}")

for k in range(9):
    prob = Fraction(k, 8)
    spec = base.with_level(prob)
    value = surface.root_value(spec.budget_level)
    line = f"P(x >= 1) >= {str(prob):>4}  ->  P(x_3 >= 3) = {value}"
    if value > float("-inf"):
        strategy, bp = realize_strategy(surface, policy, spec.budget_level)
        audit = exact_audit(model, strategy, spec.constraint, reward, spec.budget_level, budget=bp)
        misses = ", ".join(str(v) for v in audit.constraint)
        line += f"   miss probabilities by step: [{misses}]   M(root) = {bp.root}"
    print(line)
