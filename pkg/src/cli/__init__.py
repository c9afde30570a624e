"""Command-line surface: argument parsing, pipeline stages and the convergence study."""
