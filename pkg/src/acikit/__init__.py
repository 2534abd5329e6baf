"""acikit: reverse-correlation toolkit for phoneme-in-noise experiments."""

__version__ = "0.1.0"
