from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.models.boundary_point import BoundaryPoint


@dataclass(frozen=True)
class Cell:
    """One partition element, materialized from the partition's arrays."""

    id: int
    site: np.ndarray
    measure: float
    centroid: np.ndarray
    radius_bound: float
    is_boundary: bool
    boundary_anchor: Optional[BoundaryPoint]
    quadrature_points: np.ndarray
    quadrature_weights: np.ndarray
    measure_sigma: float = 0.0

    @property
    def quadrature(self):
        """``[(point, weight), ...]`` for integrals over the cell."""
        return list(zip(self.quadrature_points, self.quadrature_weights))

    @property
    def anchor_point(self) -> np.ndarray:
        if self.boundary_anchor is not None:
            return self.boundary_anchor.location
        return self.centroid
