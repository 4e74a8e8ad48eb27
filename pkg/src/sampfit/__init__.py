"""Multimodal future prediction by sampling hypotheses and fitting a mixture to them."""
from .core import ComponentParams, GridDensity, HypothesisSet, Kind, MixtureDistribution
from .errors import ConfigError, NumericalError, SimulationError

__version__ = "0.1.0"

__all__ = ["ComponentParams", "GridDensity", "HypothesisSet", "Kind", "MixtureDistribution", "ConfigError",
           "NumericalError", "SimulationError", "__version__"]
