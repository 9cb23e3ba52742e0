"""Exception types shared across the package."""


class ModelFormatError(ValueError):
    """Raised when a model document violates the interchange schema."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class NoCoreError(RuntimeError):
    """The full assumption set is satisfiable, so no unsatisfiable core exists.

    For local explanations this means the sample is misclassified.
    """


class NoRegionError(RuntimeError):
    """No adversarial region can be reached under the configured constraints."""


class NoCandidateError(RuntimeError):
    """No adversarial candidate was found to seed the direction search."""


class DirectionError(RuntimeError):
    """The starting point of a distance search along a direction is not adversarial."""


class OracleTooLargeError(RuntimeError):
    """Cell enumeration would exceed the configured cell budget."""
