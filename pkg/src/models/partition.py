from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, List, Optional

import numpy as np
from scipy.spatial import cKDTree

from src.models.boundary_point import BoundaryPoint
from src.models.cell import Cell
from src.utils.errors import PartitionError


@dataclass
class Partition:
    """Indexed cell collection stored as parallel arrays.

    Quadrature samples are grouped by cell: the samples of cell ``i`` are
    ``samples[quad_offsets[i]:quad_offsets[i + 1]]``.
    """

    domain: Any
    kind: str
    sites: np.ndarray
    centroids: np.ndarray
    measures: np.ndarray
    measure_sigma: np.ndarray
    radius_bounds: np.ndarray
    covariances: np.ndarray
    samples: np.ndarray
    sample_weights: np.ndarray
    quad_offsets: np.ndarray
    level: int
    spacing: float
    window: Any = None
    delta: Optional[np.ndarray] = None
    rho: Optional[np.ndarray] = None
    is_boundary: Optional[np.ndarray] = None
    anchors: Optional[np.ndarray] = None
    normals: Optional[np.ndarray] = None
    diagnostic_mask: Optional[np.ndarray] = None
    level_params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        n = self.sites.shape[0]
        if self.is_boundary is None:
            self.is_boundary = np.zeros(n, dtype=bool)
        if self.anchors is None:
            self.anchors = np.full((n, self.dim), np.nan)
        if self.normals is None:
            self.normals = np.full((n, self.dim), np.nan)
        if self.diagnostic_mask is None:
            self.diagnostic_mask = np.ones(n, dtype=bool)

    @property
    def n_cells(self) -> int:
        return int(self.sites.shape[0])

    @property
    def dim(self) -> int:
        return int(self.sites.shape[1])

    @property
    def has_scales(self) -> bool:
        return self.delta is not None and self.rho is not None

    @cached_property
    def centroid_tree(self) -> cKDTree:
        return cKDTree(self.centroids)

    @cached_property
    def site_tree(self) -> cKDTree:
        return cKDTree(self.sites)

    @cached_property
    def sample_labels(self) -> np.ndarray:
        counts = np.diff(self.quad_offsets)
        return np.repeat(np.arange(self.n_cells), counts)

    @cached_property
    def anchor_points(self) -> np.ndarray:
        """xi-check: the centroid for interior cells, the boundary anchor otherwise."""
        out = self.centroids.copy()
        out[self.is_boundary] = self.anchors[self.is_boundary]
        return out

    @cached_property
    def max_radius_bound(self) -> float:
        return float(np.max(self.radius_bounds))

    def quadrature(self, i: int):
        lo, hi = self.quad_offsets[i], self.quad_offsets[i + 1]
        return self.samples[lo:hi], self.sample_weights[lo:hi]

    def cell(self, i: int) -> Cell:
        if not 0 <= i < self.n_cells:
            raise PartitionError(f"cell id {i} out of range [0, {self.n_cells})")
        anchor = None
        if self.is_boundary[i]:
            anchor = BoundaryPoint(self.anchors[i], self.normals[i])
        pts, wts = self.quadrature(i)
        return Cell(
            id=int(i),
            site=self.sites[i],
            measure=float(self.measures[i]),
            centroid=self.centroids[i],
            radius_bound=float(self.radius_bounds[i]),
            is_boundary=bool(self.is_boundary[i]),
            boundary_anchor=anchor,
            quadrature_points=pts,
            quadrature_weights=wts,
            measure_sigma=float(self.measure_sigma[i]),
        )

    def samples_of(self, ids) -> np.ndarray:
        """Quadrature points of the given cells, concatenated."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size == 0:
            return np.empty((0, self.dim))
        return np.concatenate([self.samples[self.quad_offsets[i]:self.quad_offsets[i + 1]] for i in ids])

    @property
    def cells(self) -> List[Cell]:
        return [self.cell(i) for i in range(self.n_cells)]

    def cells_with_centroid_in(self, x, r: float) -> np.ndarray:
        """Sorted ids of cells whose centroid lies strictly inside B(x, r)."""
        x = np.asarray(x, dtype=float)
        idx = np.asarray(self.centroid_tree.query_ball_point(x, r), dtype=np.int64)
        if idx.size == 0:
            return idx
        dist = np.linalg.norm(self.centroids[idx] - x, axis=1)
        return np.sort(idx[dist < r])

    def cells_intersecting(self, x, r: float) -> np.ndarray:
        """Sorted ids of cells that may meet B(x, r).

        A cell lies inside the closed ball of radius ``radius_bound`` around
        its centroid, so testing ``|centroid - x| < r + radius_bound``
        never misses an intersecting cell (it may over-include).
        """
        x = np.asarray(x, dtype=float)
        idx = np.asarray(
            self.centroid_tree.query_ball_point(x, r + self.max_radius_bound), dtype=np.int64
        )
        if idx.size == 0:
            return idx
        dist = np.linalg.norm(self.centroids[idx] - x, axis=1)
        return np.sort(idx[dist < r + self.radius_bounds[idx]])

    def locate(self, points) -> np.ndarray:
        """Cell id claiming each point (nearest site for Voronoi cells)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        # lattice cubes are the Voronoi cells of their lattice points too
        _, idx = self.site_tree.query(pts)
        return np.asarray(idx, dtype=np.int64)
