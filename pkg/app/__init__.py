"""Variable-length-input novel view synthesis package."""

__version__ = "1.0.0"
