"""Counterfactually fair node representations on graphs with a binary sensitive attribute."""
from .graph import Graph, Split, load_graph, load_graph_dir, save_graph, split_nodes

__version__ = "0.1.0"

__all__ = ["Graph", "Split", "load_graph", "load_graph_dir", "save_graph", "split_nodes", "__version__"]
