"""Reachability-based safety layer for language-model robot planners."""

__version__ = "0.1.0"
