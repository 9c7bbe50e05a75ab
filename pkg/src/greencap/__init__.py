"""Two-stage distributionally robust capacity planning for green manufacturing."""

__version__ = "0.1.0"
