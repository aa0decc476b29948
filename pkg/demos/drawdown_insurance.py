"""Growth under a drawdown floor on a multiplicative lattice.

Each period the investor holds cash or invests in a position that gains 50%
or loses 50%.  The wealth must stay above a fraction of its running maximum.
"""
from fractions import Fraction

from budgetdp import HalfSpace, LatticeModel, build_drawdown_problem, indicator_reward, power_reward

HALF = Fraction(1, 2)


def invest(k, x, a, j):
    if a == "cash":
        return x
    return (x[0] * (Fraction(3, 2) if j == 0 else HALF),)


model = LatticeModel(4, (HALF, HALF), ("cash", "invest"), invest, (1,))
for name, reward in (("E[x^2]", power_reward(2)), ("P(x >= 2)", indicator_reward(HalfSpace(0, 2, "above")))):
    for alpha in (0, Fraction(1, 4), HALF, Fraction(3, 4), 1):
        value = build_drawdown_problem(model, alpha, reward).value()
        print(f"{name:9s} alpha = {str(alpha):>4}: {float(value):.6f}")
