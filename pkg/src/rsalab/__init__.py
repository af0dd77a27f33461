"""Constant-stepsize stochastic algorithms as iterated random operators."""
from rsalab.errors import (CertificationError, ConfigurationError, InfeasibleError, NonFiniteStateError,
                           ParameterError, RsaLabError, ShapeError, SizeError)
from rsalab.operators import CoupledTrajectory, LiftedState, RandomnessDraw, run_coupled

__version__ = "0.1.0"

__all__ = [
    "CertificationError", "ConfigurationError", "CoupledTrajectory", "InfeasibleError", "LiftedState",
    "NonFiniteStateError", "ParameterError", "RandomnessDraw", "RsaLabError", "ShapeError", "SizeError",
    "run_coupled",
]
