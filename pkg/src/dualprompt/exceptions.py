"""Exception hierarchy shared across the package."""


class DualPromptError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(DualPromptError, ValueError):
    """Operand shapes are incompatible."""


class ContractViolation(DualPromptError, RuntimeError):
    """A caller broke a documented precondition (non-scalar loss, missing grad...)."""


class ConfigurationError(DualPromptError, ValueError):
    """Invalid model, patch, or run configuration."""


class InsufficientDataError(DualPromptError, ValueError):
    """Not enough observations to compute statistics or form a window."""


class AlignmentError(DualPromptError, ValueError):
    """Text summaries do not line up with the numeric window."""


class InvalidPromptError(DualPromptError, ValueError):
    """An explicit prompt tokenized to nothing."""


class CapacityError(DualPromptError, ValueError):
    """Input sequence exceeds the backbone's positional capacity."""


class NonInvertibleError(DualPromptError, ValueError):
    """RevIN denormalization requested with a zero affine scale."""


class DivergenceError(DualPromptError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, batch, value):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class ValidationError(DualPromptError, ValueError):
    """One or more user-facing inputs failed validation.

    ``problems`` lists every violated field so they can be reported at once.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
