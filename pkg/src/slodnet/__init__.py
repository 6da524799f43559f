"""Coarse-space solvers for weighted graph Laplacians on spatial networks."""

from slodnet.network import (
    FiberGenConfig,
    GenerationError,
    NetworkFormatError,
    SpatialNetwork,
    generate_fiber_network,
    intersection_graph,
    largest_connected_component,
    load_network,
    remove_hanging_nodes,
    save_network,
)

__version__ = "0.1.0"

__all__ = [
    "FiberGenConfig",
    "GenerationError",
    "NetworkFormatError",
    "SpatialNetwork",
    "generate_fiber_network",
    "intersection_graph",
    "largest_connected_component",
    "load_network",
    "remove_hanging_nodes",
    "save_network",
    "__version__",
]
