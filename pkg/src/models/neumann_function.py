from dataclasses import dataclass
from typing import Callable

import numpy as np

VectorField = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class NeumannTestFunction:
    """A C^2 function with vanishing normal derivative on the boundary.

    Every callable takes points of shape ``(N, d)``: ``f`` and ``laplacian``
    return ``(N,)``, ``gradient`` returns ``(N, d)`` and ``hessian``
    ``(N, d, d)``.
    """

    name: str
    f: VectorField
    laplacian: VectorField
    gradient: VectorField
    hessian: VectorField
    hessian_bound: float
    description: str = ""

    def __call__(self, x) -> np.ndarray:
        return self.f(np.atleast_2d(np.asarray(x, dtype=float)))
