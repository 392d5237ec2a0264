"""Simulation and statistics for dispersing billiards with a cusp at a flat point."""
