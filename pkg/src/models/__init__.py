"""Data records for partitions, generators, trajectories and run configs."""
