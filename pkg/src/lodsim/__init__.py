"""Multi-level agent simulation with dynamic level of detail."""
from .levels import HierarchicalModel, Level, validate_hierarchical_graph, transitive_closure
from .modelfile import load_model, parse_model, dump_model
from .scheduler import Simulation

__all__ = [
    "HierarchicalModel",
    "Level",
    "Simulation",
    "dump_model",
    "load_model",
    "parse_model",
    "transitive_closure",
    "validate_hierarchical_graph",
]
__version__ = "0.1.0"
