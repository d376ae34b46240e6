"""Birkhoff integration against Banach-valued measures and a vector Girsanov toolkit."""

__version__ = "0.1.0"
