"""Mode coupling transport in randomly perturbed planar waveguides."""

from .errors import ModefluxError, ValidationError
from .geometry import SectorLayout, WidthProfile, find_turning_points, mode_count
from .correlation import GaussianCorrelation, TabulatedSpectrumCorrelation, gaussian
from .coupling import CouplingProvider, coupling_set, length_scales
from .transport import (
    SourceSpec,
    TransportProblem,
    TransportSettings,
    chain_sectors,
    source_amplitudes,
)

__version__ = "0.1.0"

__all__ = [
    "CouplingProvider",
    "GaussianCorrelation",
    "ModefluxError",
    "SectorLayout",
    "SourceSpec",
    "TabulatedSpectrumCorrelation",
    "TransportProblem",
    "TransportSettings",
    "ValidationError",
    "WidthProfile",
    "__version__",
    "chain_sectors",
    "coupling_set",
    "find_turning_points",
    "gaussian",
    "length_scales",
    "mode_count",
    "source_amplitudes",
]
