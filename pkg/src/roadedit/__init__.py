"""Box-controlled object editing in synthetic driving videos."""

__version__ = "0.1.0"
