"""Viewpoint integration and registration for image change captioning, at desk scale."""

__version__ = "0.1.0"
