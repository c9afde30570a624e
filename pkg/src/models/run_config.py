import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional


def canonical_json(data: Dict[str, Any]) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def config_hash(data: Dict[str, Any]) -> str:
    """First 16 hex digits of SHA-256 over the canonical JSON form."""
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()[:16]


@dataclass
class RunConfig:
    """Validated, typed view of a run-config document."""

    domain: Dict[str, Any]
    partition_kind: str
    levels: List[int]
    mc_per_cell: int
    seed: int
    window: Optional[Dict[str, Any]]
    quadrature_per_axis: int
    scales: Dict[str, Any]
    horizon: float
    replicas: int
    marginal_times: List[float]
    start: Optional[List[float]]
    stationary_horizon: float
    reference_dt: Optional[float]
    diagnostics: Dict[str, Any]
    output_directory: str
    threads: Optional[int]
    raw: Dict[str, Any] = field(default_factory=dict, repr=False)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def toggle(self, name: str) -> bool:
        return bool(self.diagnostics.get(name, False))

    def to_dict(self) -> Dict[str, Any]:
        return json.loads(json.dumps(self.raw))
