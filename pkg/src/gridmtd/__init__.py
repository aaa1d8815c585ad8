"""Moving target defense against coordinated cyber-physical attacks on DC grid models."""

__version__ = "0.1.0"
