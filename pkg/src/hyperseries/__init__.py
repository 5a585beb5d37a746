"""Multi-scale hypergraph attention forecasting for long-range time series.

The package splits into a small autodiff substrate (:mod:`~hyperseries.numerics`),
deterministic graph construction (:mod:`~hyperseries.scales`,
:mod:`~hyperseries.hypergraph`, :mod:`~hyperseries.edgegraph`), the
message-passing network (:mod:`~hyperseries.model`), and a training/evaluation
pipeline (:mod:`~hyperseries.pipeline`) fronted by a CLI
(:mod:`~hyperseries.cli`).
"""

from .config import ModelConfig
from .errors import HyperseriesError

__all__ = ["ModelConfig", "HyperseriesError"]
__version__ = "0.1.0"
