"""
Exception hierarchy for the retrieval toolkit.
Each class carries the process exit code the CLI reports it with.
"""


class RetroError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 3


class UsageError(RetroError):
    """Bad command-line usage."""

    exit_code = 1


class ConfigError(UsageError):
    """Run configuration failed validation."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DataError(RetroError, ValueError):
    """Input data is malformed, missing or inconsistent."""

    exit_code = 2


class InvariantError(RetroError):
    """An internal invariant was violated."""

    exit_code = 3


def exit_code_for(error: BaseException) -> int:
    """Map any exception to the CLI exit code."""
    if isinstance(error, RetroError):
        return error.exit_code
    return 3
