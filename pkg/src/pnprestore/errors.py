"""Exception types shared across the package."""


class ContractError(ValueError):
    """An argument violates an operation's preconditions (shape, channels, ...)."""


class ValidationError(ValueError):
    """A value is malformed: non-finite weights, even kernel sizes, bad config."""


class FormatError(ValueError):
    """A file on disk does not follow the expected layout."""


class TrainingDiverged(RuntimeError):
    """Raised when the training loss becomes non-finite.

    ``last_good`` holds the most recent finite-loss weights, if any.
    """

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class IterationError(RuntimeError):
    """A solver or prior failed inside an iterative loop; ``iteration`` is 1-based."""

    def __init__(self, message, iteration):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration
