"""Training and initialization of matrix product state probabilistic models."""

__version__ = "0.1.0"
