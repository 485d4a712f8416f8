"""Exception types raised across the package."""


class ParameterError(ValueError):
    """Invalid model or distribution parameters."""


class DomainError(ValueError):
    """Argument outside the domain where the quantity is defined."""


class UnsupportedError(NotImplementedError):
    """Operation not available for this family or configuration."""


class KernelError(ValueError):
    """Trawl kernel produces invalid slice areas."""


class DegenerateError(ValueError):
    """Degenerate input, e.g. zero variance or zero probability mass."""


class EvaluationError(ArithmeticError):
    """A black-box function returned a non-finite value."""


class TrainingError(RuntimeError):
    """Non-finite loss or divergence during optimisation."""


class ConvergenceError(RuntimeError):
    """An iterative fit did not converge."""


class ChecksumError(ValueError):
    """Stored checksum does not match file contents."""


class MemoryBudgetError(MemoryError):
    """Requested computation exceeds the configured memory budget."""
