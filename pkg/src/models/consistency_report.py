from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConsistencyReport:
    """Per-cell generator consistency error for one test function.

    ``errors`` is NaN on cells excluded from the sup (invalid generator or
    outside the diagnostic mask).
    """

    function: str
    level: int
    errors: np.ndarray
    is_boundary: np.ndarray
    eps_rho: np.ndarray
    rho_alpha: np.ndarray
    hessian_sup: np.ndarray
    hessian_osc: np.ndarray
    fitted_interior: float
    fitted_boundary: float

    def _sup(self, select: np.ndarray) -> float:
        vals = self.errors[select & np.isfinite(self.errors)]
        return float(np.max(vals)) if vals.size else 0.0

    @property
    def sup_interior(self) -> float:
        return self._sup(~self.is_boundary)

    @property
    def sup_boundary(self) -> float:
        return self._sup(self.is_boundary)

    @property
    def sup(self) -> float:
        return max(self.sup_interior, self.sup_boundary)
