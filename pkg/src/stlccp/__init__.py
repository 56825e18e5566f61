"""Control synthesis for STL specifications by penalty convex-concave programming."""

__version__ = "0.1.0"
