"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to:
1 for usage problems, 2 for data/configuration problems, 3 for numerical failure.
"""


class STPromptError(Exception):
    exit_code = 2


class UsageError(STPromptError):
    exit_code = 1


class DimensionError(STPromptError, ValueError):
    """Shapes that cannot be combined."""


class ContractError(STPromptError, ValueError):
    """A precondition of an operation was violated."""


class ConfigurationError(STPromptError, ValueError):
    pass


class DegenerateDataError(STPromptError, ValueError):
    pass


class InsufficientDataError(STPromptError, ValueError):
    pass


class SplitError(STPromptError, ValueError):
    pass


class ParseError(STPromptError, ValueError):
    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class LoadError(STPromptError, ValueError):
    """Unreadable or incompatible dataset/checkpoint file."""


class NumericalError(STPromptError, ArithmeticError):
    exit_code = 3
