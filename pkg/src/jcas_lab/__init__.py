"""Capacity-distortion analysis for open-loop joint communication and sensing.

The package couples a Gauss-Markov tracking model (intermittent Kalman
filtering, modified Riccati fixed points) with channel rate formulas to
build rate-distortion curves for beam-switching and multi-beam transmit
strategies, plus a desk-scale finite-alphabet engine for the general
Markov-state model and a Monte Carlo harness that checks the covariance
bounds empirically.
"""

__version__ = "0.1.0"

from .statespace import GaussMarkovModel, spectral_radius, solve_scaled_lyapunov, validate_model
from .riccati import BeamPolicy
from .tradeoff import ChannelSpec, RateDistortionPoint

__all__ = [
    "__version__",
    "GaussMarkovModel",
    "spectral_radius",
    "solve_scaled_lyapunov",
    "validate_model",
    "BeamPolicy",
    "ChannelSpec",
    "RateDistortionPoint",
]
