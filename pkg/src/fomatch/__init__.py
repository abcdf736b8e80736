"""Fully online matching: Ranking, Balanced Ranking, water-filling and their dual certificates."""

from .instance import Instance, from_edges, generate_random, generate_upper_triangular

__all__ = ["Instance", "from_edges", "generate_random", "generate_upper_triangular"]
__version__ = "0.1.0"
