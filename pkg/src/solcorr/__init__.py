"""Photon-number correlations of interacting optical solitons.

Classical split-step propagation, linearized fluctuations carried back to
the input by the transposed tangent map, and slot-resolved correlation
coefficients built on top of them.
"""

__version__ = "0.1.0"

from .grid import BoundaryWarning, GridError, TimeGrid, make_grid
from .classical import (
    Envelope,
    SolitonPairSpec,
    Trajectory,
    ValidationError,
    VectorPairSpec,
    conserved_quantities,
    init_scalar_pair,
    init_vector_pair,
    propagate_scalar,
    propagate_vector,
)
from .fluctuations import (
    DoubledField,
    GreenMatrix,
    backpropagate_functional,
    build_green_matrix,
    forward_linearized,
)
from .correlations import (
    CorrelationMap,
    PairCorrelation,
    correlation_map,
    correlation_maps,
    make_partition,
    number_functional,
    pair_correlation,
    pair_correlations,
    polarization_pair_correlations,
)

__all__ = [
    "BoundaryWarning", "GridError", "TimeGrid", "make_grid",
    "Envelope", "SolitonPairSpec", "Trajectory", "ValidationError", "VectorPairSpec",
    "conserved_quantities", "init_scalar_pair", "init_vector_pair", "propagate_scalar", "propagate_vector",
    "DoubledField", "GreenMatrix", "backpropagate_functional", "build_green_matrix", "forward_linearized",
    "CorrelationMap", "PairCorrelation", "correlation_map", "correlation_maps", "make_partition",
    "number_functional", "pair_correlation", "pair_correlations", "polarization_pair_correlations",
]
