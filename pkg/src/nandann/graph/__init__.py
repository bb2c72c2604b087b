from .build import build_graph, medoid
from .gapcode import (GapEncodedGraph, gap_bit_width, gap_decode, gap_encode, gap_values,
                      graph_stats, plain_encode)
from .index import GraphError, GraphIndex, random_graph
from .io import load_encoded, load_graph, save_diskann, save_encoded, save_graph

__all__ = [
    "GapEncodedGraph", "GraphError", "GraphIndex", "build_graph", "gap_bit_width", "gap_decode",
    "gap_encode", "gap_values", "graph_stats", "load_encoded", "load_graph", "medoid",
    "plain_encode", "random_graph", "save_diskann", "save_encoded", "save_graph",
]
