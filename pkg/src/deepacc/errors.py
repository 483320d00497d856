"""Exception types shared across the package."""


class DomainError(ValueError):
    """An input is outside the domain an operation is defined on."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""


class ScenarioError(RuntimeError):
    """A closed-loop run aborted; ``records`` holds the frames produced so far."""

    def __init__(self, message, records=None):
        super().__init__(message)
        self.records = records if records is not None else []
