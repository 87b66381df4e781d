"""Maximum likelihood thresholds of path diagrams."""

__version__ = "0.1.0"
