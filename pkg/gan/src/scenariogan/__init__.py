"""Conditional WGAN-GP over the optimizer's sorted binary scenario images."""

__version__ = "0.1.0"
