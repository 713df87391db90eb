"""viewblend: view-conditioned neural reconstruction and rendering."""

__version__ = "0.1.0"
