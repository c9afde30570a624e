from dataclasses import dataclass
from typing import Any, Optional

from src.utils.errors import SimulationError

SCHEME = "projection-reflection"
DEFAULT_DT_FRACTION = 1e-4


@dataclass(frozen=True)
class RbmConfig:
    """Reflected Euler settings; ``dt`` defaults to ``horizon * 1e-4``."""

    domain: Any
    horizon: float
    dt: Optional[float] = None
    scheme: str = SCHEME

    def __post_init__(self):
        if not self.horizon > 0:
            raise SimulationError(f"horizon must be positive, got {self.horizon}")
        if self.dt is None:
            object.__setattr__(self, "dt", self.horizon * DEFAULT_DT_FRACTION)
        if not self.dt > 0:
            raise SimulationError(f"dt must be positive, got {self.dt}")
        if self.dt > self.horizon:
            raise SimulationError(f"dt={self.dt} exceeds the horizon {self.horizon}")
        if self.scheme != SCHEME:
            raise SimulationError(f"unknown scheme {self.scheme!r}")
