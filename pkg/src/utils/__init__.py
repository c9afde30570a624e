"""Geometry, partitions, generators, simulation and diagnostics."""
