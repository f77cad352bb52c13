"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, budget and
contract violations exit 2, I/O and parse failures exit 3.
"""


class UsageError(ValueError):
    """Caller passed arguments outside an operation's domain."""


class ContractError(RuntimeError):
    """A model or Lyapunov function broke its declared contract."""


class BudgetError(RuntimeError):
    """A planner query would exceed the simulator-call cap."""

    def __init__(self, message, projected=None, cap=None, step=None):
        super().__init__(message)
        self.projected = projected
        self.cap = cap
        self.step = step
        self.partial = None


class TrajectoryParseError(ValueError):
    """A persisted trajectory file does not match the schema."""

    def __init__(self, message, path=None, row=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if row is not None:
            where += f" row {row}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.row = row
