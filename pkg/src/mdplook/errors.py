"""Exception types shared across the package."""


class MdpFormatError(ValueError):
    """Raised when an MDP, graph or report file cannot be parsed."""


class BudgetExceededError(RuntimeError):
    """An enumeration would exceed the configured size budget."""


class NotUnichainError(ValueError):
    """The chain (or MDP) has more than one recurrent class."""


class InconsistentStateError(ValueError):
    """An augmented state does not have the block shapes its depth requires."""


class IterationLimitError(RuntimeError):
    """An iterative solver hit its cap; ``last`` holds the final iterate."""

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last
