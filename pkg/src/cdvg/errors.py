"""Exception types shared across the package; the CLI maps them to exit codes."""


class ContractViolation(ValueError):
    """A precondition of a public operation was not met (exit code 1)."""


class NumericalFailure(ArithmeticError):
    """A non-finite value appeared where a finite one is required (exit code 3)."""
