"""Multi-camera synchronized video generation at desk scale."""

__version__ = "0.1.0"
