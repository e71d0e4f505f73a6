"""Procedural path-traversal benchmark: backbone generation, scene rendering,
task building, evaluation and difficulty analyses."""

__version__ = "0.1.0"
