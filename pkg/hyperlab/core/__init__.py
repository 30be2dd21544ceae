from hyperlab.core.curves import VarianceCurve, VarianceEntry
from hyperlab.core.errors import HyperlabError
from hyperlab.core.geometry import (
    PointConfiguration,
    TorusBox,
    count_in_ball,
    counts_in_balls,
    minimal_image,
    periodic_distance,
)
from hyperlab.core.grids import ScalarFieldGrid, VectorFieldGrid
from hyperlab.core.rng import RngSeed

__all__ = [
    "HyperlabError",
    "PointConfiguration",
    "RngSeed",
    "ScalarFieldGrid",
    "TorusBox",
    "VarianceCurve",
    "VarianceEntry",
    "VectorFieldGrid",
    "count_in_ball",
    "counts_in_balls",
    "minimal_image",
    "periodic_distance",
]
