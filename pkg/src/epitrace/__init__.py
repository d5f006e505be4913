"""Epistemic-graph analysis toolkit for agent reasoning traces."""

__version__ = "0.1.0"
