"""Simulation lab for stochastic gradient networks over correlated data streams."""
from .errors import BoundCheckError, ConfigurationError, DataError, DivergenceError, SgnLabError

__version__ = "0.1.0"

__all__ = ["BoundCheckError", "ConfigurationError", "DataError", "DivergenceError", "SgnLabError"]
