"""Token-level information extraction for semi-structured text."""

__version__ = "0.1.0"
