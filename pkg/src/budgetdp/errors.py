"""Exception and warning types raised across the package."""


class LatticeError(ValueError):
    """Base class for invalid lattice objects or arguments."""


class MissingDecisionError(LatticeError, KeyError):
    """A strategy has no decision at a reachable prefix."""

    def __init__(self, step, branches):
        self.step = step
        self.branches = tuple(branches)
        super().__init__(f"strategy undefined at step {step}, branch history {self.branches}")

    def __str__(self):
        return self.args[0]


class ZeroMassNodeError(LatticeError):
    """Conditioning on a node that carries no probability mass."""


class NotAStoppingRuleError(LatticeError):
    pass


class SupportViolationError(LatticeError):
    """A pasted kernel charges paths outside the subtree it is attached to."""


class DomainError(ValueError):
    pass


class UnsupportedRegionError(TypeError):
    """The region has no distance-to-complement oracle."""


class SummaryMismatchError(AssertionError):
    """A summary reduction disagrees with the direct path evaluation."""


class InfeasibleStartError(ValueError):
    """Requested budget is below the minimal feasible budget at the root."""


class BudgetConstructionError(ValueError):
    """Snell envelope at the root exceeds the requested budget level."""

    def __init__(self, message, snell_root, max_deterministic):
        super().__init__(message)
        self.snell_root = snell_root
        self.max_deterministic = max_deterministic


class SnellGapError(BudgetConstructionError):
    """The measure meets every deterministic-time constraint at level m, yet no
    supermartingale budget starting below m dominates the constraint process."""


class CapExceededError(RuntimeError):
    def __init__(self, what, count, cap):
        self.count = count
        self.cap = cap
        super().__init__(f"{what}: {count} exceeds cap {cap}")


class UndefinedBudgetNodeError(KeyError):
    pass


class GridTooCoarseWarning(UserWarning):
    """Minimal feasible budgets fall strictly between grid levels."""


class InfeasibleRootWarning(UserWarning):
    pass
