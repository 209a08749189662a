"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class StructuralError(ValueError):
    """Inputs have incompatible shapes, supports or sizes."""


class ConsistencyError(RuntimeError):
    """A computed quantity failed a self-consistency check."""


class IntegrationError(RuntimeError):
    """A dynamics integration produced a non-finite state.

    ``last_state`` holds the last finite state reached, when available.
    """

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state
