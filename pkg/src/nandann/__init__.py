"""Graph ANN search with PQ traversal, beta reranking and early termination,
plus a trace-driven model of a 3D-NAND near-storage search accelerator."""

__version__ = "0.1.0"
