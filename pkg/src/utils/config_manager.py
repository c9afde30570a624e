import copy
import json
import logging
import os
import re
from typing import Any, Dict, List, Optional

from src.models.run_config import RunConfig, config_hash
from src.utils.errors import ConfigError, DomainError
from src.utils.geometry import domain_from_spec, optional_window

logger = logging.getLogger(__name__)

PARTITION_KINDS = ("lattice", "voronoi")
SCALE_RULES = ("default", "lattice", "explicit")
DIAGNOSTIC_TOGGLES = (
    "consistency",
    "uncorrected_baseline",
    "moments",
    "symdiff",
    "trackers",
    "hausdorff",
    "sandwich",
    "marginals",
    "stationarity",
)
MAX_SEED = 2 ** 64


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


class ConfigManager:
    """Loads, validates and saves a JSON run config.

    Values are addressed with dotted keys (``"partition.levels"``). Every
    schema violation raises ``ConfigError`` with the line of the offending key
    when the config came from a file.
    """

    def __init__(self, file_path: Optional[str] = None):
        self.file_path = file_path
        self.config: Dict[str, Any] = {}
        self._source = ""
        self.run: Optional[RunConfig] = None
        self.load_config()

    def load_config(self):
        user: Dict[str, Any] = {}
        if self.file_path and os.path.exists(self.file_path):
            with open(self.file_path, "r", encoding="utf-8") as f:
                self._source = f.read()
            try:
                user = json.loads(self._source)
            except json.JSONDecodeError as e:
                raise ConfigError(f"invalid JSON: {e.msg} (column {e.colno})", line=e.lineno) from e
            if not isinstance(user, dict):
                raise ConfigError("top level must be an object", line=1)
        elif self.file_path:
            raise ConfigError(f"config file not found: {self.file_path}")
        self._check_keys(user, self.get_default_config(), [])
        self.config = _deep_merge(self.get_default_config(), user)
        # tagged records replace the defaults instead of merging into them
        if "domain" in user:
            self.config["domain"] = copy.deepcopy(user["domain"])
        self.run = self.validate()

    def save_config(self, file_path: Optional[str] = None):
        path = file_path or self.file_path
        if not path:
            raise ConfigError("no file path to save the config to")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.config, f, indent=4)
            f.write("\n")

    def get(self, key: str, default=None):
        node: Any = self.config
        for part in key.split("."):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    def set(self, key: str, value):
        """Set a dotted key and revalidate."""
        parts = key.split(".")
        node = self.config
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
        self.run = self.validate()

    @property
    def hash(self) -> str:
        return config_hash(self.config)

    def get_default_config(self) -> Dict[str, Any]:
        return {
            "domain": {"kind": "ball", "center": [0.0, 0.0], "radius": 1.0},
            "partition": {
                "kind": "voronoi",
                "levels": [500, 2000, 8000],
                "mc_per_cell": 200,
                "seed": 20240607,
                "window": None,
                "quadrature_per_axis": 4,
            },
            "scales": {
                "rule": "default",
                "k_a": "auto",
                "k_b": "auto",
                "a_exponent": 0.9,
                "b_exponent": 0.5,
                "boundary_cap": 0.9,
                "target_fraction": 0.9,
                "calibration_level": None,
                "multiple": 1.5,
                "boundary_multiple": 3.0,
                "a": None,
                "b": None,
            },
            "simulation": {
                "horizon": 0.5,
                "replicas": 2000,
                "marginal_times": [0.1, 0.5],
                "start": None,
                "stationary_horizon": 0.0,
            },
            # None resolves to horizon * 1e-4
            "reference": {"dt": None},
            "diagnostics": {
                "consistency": True,
                "uncorrected_baseline": False,
                "moments": True,
                "symdiff": False,
                "trackers": True,
                "hausdorff": True,
                "sandwich": False,
                "marginals": True,
                "stationarity": False,
                "permutations": 200,
                "pairs": 200,
            },
            "output": {"directory": "out"},
            "threads": None,
        }

    # -- validation -----------------------------------------------------
    def line_of(self, key: str) -> Optional[int]:
        """1-based line where a dotted key appears in the source file."""
        if not self._source:
            return None
        lines = self._source.splitlines()
        start = 0
        found = None
        for part in key.split("."):
            pattern = re.compile(r'"' + re.escape(part) + r'"\s*:')
            for idx in range(start, len(lines)):
                if pattern.search(lines[idx]):
                    found, start = idx, idx
                    break
            else:
                return found + 1 if found is not None else None
        return found + 1 if found is not None else None

    def _fail(self, key: str, message: str):
        raise ConfigError(f"{key}: {message}", line=self.line_of(key))

    def _check_keys(self, user: Dict[str, Any], defaults: Dict[str, Any], path: List[str]):
        for key, value in user.items():
            dotted = ".".join(path + [key])
            if key not in defaults:
                self._fail(dotted, "unknown key")
            # free-form records
            if dotted in ("domain", "partition.window"):
                continue
            if isinstance(defaults[key], dict):
                if not isinstance(value, dict):
                    self._fail(dotted, "expected an object")
                self._check_keys(value, defaults[key], path + [key])

    def _number(self, key: str, positive: bool = True, allow_none: bool = False) -> Optional[float]:
        value = self.get(key)
        if value is None and allow_none:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self._fail(key, f"expected a number, got {value!r}")
        if positive and not value > 0:
            self._fail(key, f"must be positive, got {value!r}")
        return float(value)

    def _integer(self, key: str, minimum: int = 1, allow_none: bool = False) -> Optional[int]:
        value = self.get(key)
        if value is None and allow_none:
            return None
        if isinstance(value, bool) or not isinstance(value, int):
            self._fail(key, f"expected an integer, got {value!r}")
        if value < minimum:
            self._fail(key, f"must be >= {minimum}, got {value}")
        return int(value)

    def _number_list(self, key: str) -> List[float]:
        value = self.get(key)
        if not isinstance(value, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        ):
            self._fail(key, f"expected a list of numbers, got {value!r}")
        return [float(v) for v in value]

    def validate(self) -> RunConfig:
        try:
            dom = domain_from_spec(self.get("domain"))
        except (DomainError, TypeError, AttributeError) as e:
            self._fail("domain", str(e))
        try:
            window = optional_window(self.get("partition.window"), dom.dim)
        except (DomainError, KeyError, TypeError) as e:
            self._fail("partition.window", str(e))

        kind = self.get("partition.kind")
        if kind not in PARTITION_KINDS:
            self._fail("partition.kind", f"expected one of {PARTITION_KINDS}, got {kind!r}")
        levels = self.get("partition.levels")
        if not isinstance(levels, list) or not levels or not all(
            isinstance(n, int) and not isinstance(n, bool) and n >= 1 for n in levels
        ):
            self._fail("partition.levels", "expected a non-empty list of positive integers")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            self._fail("partition.levels", "levels must be strictly increasing")
        if kind == "lattice" and dom.kind not in ("box", "whole-space"):
            self._fail("partition.kind", f"lattice partitions need a box or the whole space, not {dom.kind}")
        if kind == "voronoi" and not dom.bounded:
            self._fail("partition.kind", "Voronoi partitions need a bounded domain")
        if dom.kind == "whole-space" and window is None:
            self._fail("partition.window", "whole-space runs need a window")
        seed = self._integer("partition.seed", minimum=0)
        if seed >= MAX_SEED:
            self._fail("partition.seed", "seed must fit in 64 bits")
        mc = self._integer("partition.mc_per_cell")
        quad = self._integer("partition.quadrature_per_axis")

        rule = self.get("scales.rule")
        if rule not in SCALE_RULES:
            self._fail("scales.rule", f"expected one of {SCALE_RULES}, got {rule!r}")
        if rule == "default":
            if self.get("scales.k_a") != "auto":
                self._number("scales.k_a")
            if self.get("scales.k_b") != "auto":
                self._number("scales.k_b")
            a_exp = self._number("scales.a_exponent")
            b_exp = self._number("scales.b_exponent")
            if not b_exp < a_exp < 1.0:
                self._fail("scales.b_exponent", f"need 0 < b_exponent < a_exponent < 1, got {b_exp} and {a_exp}")
            cap = self._number("scales.boundary_cap")
            if cap > 1.0:
                self._fail("scales.boundary_cap", "must lie in (0, 1]")
            fraction = self._number("scales.target_fraction")
            if fraction > 1.0:
                self._fail("scales.target_fraction", "must lie in (0, 1]")
            cal = self._integer("scales.calibration_level", allow_none=True)
            if cal is not None and cal not in levels:
                self._fail("scales.calibration_level", "must be one of the levels")
        elif rule == "lattice":
            self._number("scales.multiple")
            self._number("scales.boundary_multiple")
        else:
            for key in ("scales.a", "scales.b"):
                values = self._number_list(key)
                if len(values) != len(levels):
                    self._fail(key, f"expected {len(levels)} values, one per level")
                if any(v <= 0 for v in values):
                    self._fail(key, "scales must be positive")

        horizon = self._number("simulation.horizon")
        replicas = self._integer("simulation.replicas")
        times = self._number_list("simulation.marginal_times")
        if any(t < 0 or t > horizon for t in times):
            self._fail("simulation.marginal_times", f"times must lie in [0, {horizon}]")
        start = self.get("simulation.start")
        if start is not None:
            start = self._number_list("simulation.start")
            if len(start) != dom.dim:
                self._fail("simulation.start", f"expected {dom.dim} coordinates")
        stationary = self._number("simulation.stationary_horizon", positive=False)
        if stationary < 0:
            self._fail("simulation.stationary_horizon", "must be non-negative")
        dt = self._number("reference.dt", allow_none=True)

        for name in DIAGNOSTIC_TOGGLES:
            if not isinstance(self.get(f"diagnostics.{name}"), bool):
                self._fail(f"diagnostics.{name}", "expected true or false")
        self._integer("diagnostics.permutations")
        self._integer("diagnostics.pairs")
        out_dir = self.get("output.directory")
        if not isinstance(out_dir, str) or not out_dir:
            self._fail("output.directory", "expected a non-empty path")
        threads = self._integer("threads", allow_none=True)

        return RunConfig(
            domain=dict(self.get("domain")),
            partition_kind=kind,
            levels=list(levels),
            mc_per_cell=mc,
            seed=seed,
            window=self.get("partition.window"),
            quadrature_per_axis=quad,
            scales=dict(self.get("scales")),
            horizon=horizon,
            replicas=replicas,
            marginal_times=times,
            start=start,
            stationary_horizon=stationary,
            reference_dt=dt,
            diagnostics=dict(self.get("diagnostics")),
            output_directory=out_dir,
            threads=threads,
            raw=copy.deepcopy(self.config),
        )
