"""Hexagonal convolutions on an icosahedral grid."""

__version__ = "0.1.0"
