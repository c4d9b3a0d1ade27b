"""Personal data stores with owner-controlled retrieval and chat services."""

__version__ = "0.1.0"
