"""Web image context extraction from raw HTML, no rendering required."""

__version__ = "0.1.0"
