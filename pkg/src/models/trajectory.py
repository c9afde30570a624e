from dataclasses import dataclass, field
from typing import Any, Dict

import numpy as np


@dataclass(frozen=True)
class Trajectory:
    """Jump times and visited cells of one chain realization.

    ``times[k]`` is the time of the k-th jump and ``cells[k]`` the cell entered
    there; the chain sits in ``start_cell`` before the first jump.
    """

    start_cell: int
    times: np.ndarray
    cells: np.ndarray
    horizon: float
    seed: Dict[str, Any] = field(default_factory=dict)
    absorbed: bool = False

    @property
    def n_jumps(self) -> int:
        return int(self.times.size)

    @property
    def events(self):
        return list(zip(self.times.tolist(), self.cells.tolist()))

    def cell_at(self, t) -> np.ndarray:
        """Occupied cell at time(s) ``t`` (right-continuous)."""
        t_arr = np.asarray(t, dtype=float)
        k = np.searchsorted(self.times, t_arr, side="right")
        path = np.concatenate([[self.start_cell], self.cells]).astype(np.int64)
        out = path[k]
        return int(out) if out.ndim == 0 else out

    def positions(self, centroids: np.ndarray, t) -> np.ndarray:
        """Y_t: the centroid of the occupied cell."""
        return centroids[self.cell_at(t)]
