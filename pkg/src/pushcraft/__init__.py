"""Collaborative multi-robot pushing: planning, mode switching, tracking, simulation."""

__version__ = "0.1.0"
