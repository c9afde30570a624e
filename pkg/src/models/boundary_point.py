from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BoundaryPoint:
    """A point of the boundary together with the inward unit normal there."""

    location: np.ndarray
    inward_normal: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.location, dtype=float).copy()
        nu = np.asarray(self.inward_normal, dtype=float).copy()
        loc.setflags(write=False)
        nu.setflags(write=False)
        object.__setattr__(self, "location", loc)
        object.__setattr__(self, "inward_normal", nu)
