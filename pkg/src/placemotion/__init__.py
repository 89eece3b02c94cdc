"""Place emotion analytics from geotagged photos and facial expression scores."""

__version__ = "0.1.0"
