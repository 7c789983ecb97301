"""Low-light image enhancement through the inverted haze model."""

__version__ = "1.0.0"
