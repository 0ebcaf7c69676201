"""Learning symbolic planning domains from continuous scene graphs."""

__version__ = "0.1.0"
