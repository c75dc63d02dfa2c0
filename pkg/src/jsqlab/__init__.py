"""Simulation lab for the JSQ diffusion in the Halfin-Whitt regime."""

__version__ = "0.1.0"
