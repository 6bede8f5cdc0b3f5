"""Street asset geotagging from street-view imagery metadata."""

__version__ = "0.1.0"
