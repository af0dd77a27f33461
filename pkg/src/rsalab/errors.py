"""Exception types shared across the package."""


class RsaLabError(Exception):
    """Base class for all library errors."""


class ParameterError(RsaLabError, ValueError):
    """Invalid algorithm, problem or rate parameters."""


class ShapeError(RsaLabError, ValueError):
    """States or matrices of incompatible shape."""


class ConfigurationError(RsaLabError, ValueError):
    """A divergence or experiment is missing required configuration."""


class CertificationError(RsaLabError, RuntimeError):
    """A numerical certificate (optimizer, Lyapunov matrix) could not be produced."""


class InfeasibleError(RsaLabError, ValueError):
    """Rate preconditions are violated; carries the feasibility report."""

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class NonFiniteStateError(RsaLabError, FloatingPointError):
    """An iterate left the finite reals."""


class SizeError(RsaLabError, ValueError):
    """Transport problem exceeds the cost-matrix budget."""
