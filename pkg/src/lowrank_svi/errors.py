"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An argument breaks a documented precondition (wrong shape, non-finite, ...)."""


class NumericError(ArithmeticError):
    """A computation produced non-finite or otherwise unusable intermediates."""


class MatrixError(ValueError):
    """A matrix argument is not what the operation requires (e.g. not SPD)."""


class ConfigError(ValueError):
    """Invalid configuration or experiment specification."""


class ParseError(ValueError):
    """Malformed input file."""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        loc = ""
        if row is not None:
            loc = f" (row {row}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)


class DegenerateIterate(RuntimeError):
    """A stage-1 iterate collapsed to a rank-deficient matrix."""

    def __init__(self, iteration, message=None):
        self.iteration = iteration
        super().__init__(message or f"rank-deficient iterate at iteration {iteration}")


class BudgetInfeasible(ConfigError):
    """The requested gradient budget cannot accommodate the allocation rule."""

    def __init__(self, budget, min_budget):
        self.budget = budget
        self.min_budget = min_budget
        super().__init__(
            f"budget {budget:g} infeasible; minimal feasible budget is {min_budget:g}"
        )


class NonConvergence(RuntimeError):
    """An iterative solver hit its iteration cap before reaching tolerance."""

    def __init__(self, residual, max_iter):
        self.residual = residual
        self.max_iter = max_iter
        super().__init__(
            f"no convergence after {max_iter} iterations (last residual {residual:.3e})"
        )
