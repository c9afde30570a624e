"""Corrected Markov chains on partitions and reflected Brownian motion diagnostics."""

__version__ = "1.0.0"
