"""Color image super-resolution with coupled, cross-channel constrained
sparse dictionaries."""

__version__ = "1.0.0"
