"""PingPong: notify-before-retrieval metadata-private messaging."""

__version__ = "0.1.0"
