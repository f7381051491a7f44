"""Render figure types from ntkadv experiment CSV/JSON outputs."""

__version__ = "0.1.0"
