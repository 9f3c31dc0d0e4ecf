"""Spatio-temporal graph forecasting with learnable meta augmentations and contrastive training."""
from .core import (
    FeatureTensor,
    ModelConfig,
    SpatialGraph,
    STGSample,
    TemporalGraph,
    build_grid_graph,
    build_sensor_graph,
    build_temporal_graph,
)
from .model import CL4ST

__all__ = [
    "CL4ST",
    "FeatureTensor",
    "ModelConfig",
    "STGSample",
    "SpatialGraph",
    "TemporalGraph",
    "build_grid_graph",
    "build_sensor_graph",
    "build_temporal_graph",
]
