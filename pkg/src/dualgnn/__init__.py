"""Class-imbalanced semi-supervised node classification.

The package trains a graph neural network with two connectivity views — a
hop-distance structural adjacency and a cluster-derived semantic adjacency —
plus a class-balanced loss and balanced pseudo-label generation, entirely on
a from-scratch float64 numpy/numba numeric core.
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
