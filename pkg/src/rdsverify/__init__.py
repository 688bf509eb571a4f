"""Online random-digit-string writer verification."""

__version__ = "0.1.0"
