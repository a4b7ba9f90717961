"""Recover a sharp scene and the camera motion within a single exposure,
from one motion-blurred image and the event stream captured alongside it."""

__version__ = "0.1.0"
