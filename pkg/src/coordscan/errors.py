"""Exception types shared across pipeline stages."""


class ValidationError(ValueError):
    """Raised when an input file or argument violates its contract."""


class StageError(RuntimeError):
    """Raised when a pipeline stage fails; carries the stage name and artifact."""

    def __init__(self, stage: str, artifact: str, message: str):
        super().__init__(f"stage '{stage}' failed ({artifact}): {message}")
        self.stage = stage
        self.artifact = artifact
