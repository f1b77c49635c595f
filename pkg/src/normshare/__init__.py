"""Historical text normalization with configurable hard parameter sharing."""

__version__ = "0.1.0"
