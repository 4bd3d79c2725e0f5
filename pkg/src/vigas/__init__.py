"""Visually guided acoustic synthesis: simulation, training and evaluation."""

from .audio import SAMPLE_RATE, StftConfig, Waveform
from .errors import (ConfigInfeasible, EstimationFailed, InvalidConfig, InvalidInput, NumericalError,
                     VigasError)

__version__ = "0.1.0"

__all__ = ["SAMPLE_RATE", "StftConfig", "Waveform", "ConfigInfeasible", "EstimationFailed",
           "InvalidConfig", "InvalidInput", "NumericalError", "VigasError", "__version__"]
