"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid model, basis or scenario configuration."""


class IntegrationError(RuntimeError):
    """A time integration or root solve could not reach its tolerance."""


class SingularityError(ArithmeticError):
    """A parameter combination hits a pole of a closed-form expression."""


class BracketError(IntegrationError):
    """A root bracket shows no sign change; ``scan`` holds the sampled ``(x, f)`` pairs."""

    def __init__(self, message: str, scan=None):
        super().__init__(message)
        self.scan = scan
