"""Reference processes: Brownian motion and reflected Brownian motion.

The reflected process uses an Euler step followed by radial projection
(ball) or coordinatewise mirror reflection (box), so every recorded point
lies in the closed domain.
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

import numpy as np

from src.models.rbm_config import RbmConfig
from src.utils.errors import DomainError, SimulationError
from src.utils.geometry import Ball, Box, WholeSpace
from src.utils.kernels import ball_reflected_path, box_reflected_path
from src.utils.rng import STAGE_REFERENCE, spawn_streams

logger = logging.getLogger(__name__)


def time_grid(horizon: float, dt: float) -> np.ndarray:
    """0, dt, 2 dt, ... ending exactly at ``horizon`` (the last step may be shorter)."""
    steps = max(1, int(math.ceil(horizon / dt - 1e-9)))
    grid = np.minimum(np.arange(steps + 1) * dt, horizon)
    grid[-1] = horizon
    return grid


def _increments(grid: np.ndarray, d: int, rng: np.random.Generator) -> np.ndarray:
    steps = np.diff(grid)
    return rng.standard_normal((steps.size, d)) * np.sqrt(steps)[:, None]


def simulate_bm(x0, horizon: float, dt: float, rng: np.random.Generator) -> np.ndarray:
    """Brownian path on ``time_grid(horizon, dt)``, shape ``(steps + 1, d)``."""
    if not dt > 0:
        raise SimulationError(f"dt must be positive, got {dt}")
    x0 = np.asarray(x0, dtype=float).ravel()
    inc = _increments(time_grid(horizon, dt), x0.size, rng)
    return np.vstack([x0, x0 + np.cumsum(inc, axis=0)])


def simulate_rbm(cfg: RbmConfig, x0, rng: np.random.Generator) -> np.ndarray:
    """Reflected path in the closure of a ball or box."""
    dom = cfg.domain
    x0 = np.asarray(x0, dtype=float).ravel()
    if isinstance(dom, WholeSpace):
        return simulate_bm(x0, cfg.horizon, cfg.dt, rng)
    if not isinstance(dom, (Ball, Box)):
        raise DomainError(f"reflected reference paths support balls and boxes, not {dom.kind}")
    if float(dom.signed_distance(x0)) < -dom.tolerance:
        raise DomainError(f"start point {x0.tolist()} lies outside the closed domain")
    x0 = dom.project(x0)
    inc = _increments(time_grid(cfg.horizon, cfg.dt), dom.dim, rng)
    biggest = float(np.max(np.linalg.norm(inc, axis=1)))
    if biggest > dom.diameter:
        raise SimulationError(
            f"an Euler increment of length {biggest:.4g} exceeds the domain diameter; reduce dt"
        )
    if isinstance(dom, Ball):
        return ball_reflected_path(x0, np.asarray(dom.center), dom.radius, inc)
    return box_reflected_path(x0, np.asarray(dom.lo), np.asarray(dom.hi), inc)


def reference_marginals(
    cfg: RbmConfig,
    x0,
    times: Sequence[float],
    replicas: int,
    seed: int,
    key: Sequence[int] = (STAGE_REFERENCE,),
    threads: Optional[int] = None,
) -> np.ndarray:
    """Positions at the grid points nearest to ``times``, shape ``(len(times), replicas, d)``."""
    times = np.asarray(times, dtype=float)
    if np.any(times > cfg.horizon) or np.any(times < 0):
        raise SimulationError(f"marginal times must lie in [0, {cfg.horizon}]")
    grid = time_grid(cfg.horizon, cfg.dt)
    idx = np.clip(np.searchsorted(grid, times - 0.5 * cfg.dt), 0, grid.size - 1)
    key = tuple(int(k) for k in key)
    streams = spawn_streams(seed, key, replicas)

    def run(r: int) -> np.ndarray:
        try:
            return simulate_rbm(cfg, x0, streams[r])[idx]
        except Exception as e:
            logger.error("Error simulating reference replica %d: %s", r, e)
            raise

    if threads is None:
        threads = min(8, os.cpu_count() or 1)
    workers = max(1, min(int(threads), replicas))
    if workers <= 1:
        paths = [run(r) for r in range(replicas)]
    else:
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="ReferenceWorker") as executor:
            paths = list(executor.map(run, range(replicas)))
    return np.stack(paths, axis=1)


def path_rows(path: np.ndarray, grid: np.ndarray, replica: int):
    """``(replica, time, cell, x1..xd)`` rows with cell fixed to -1."""
    for t, x in zip(grid.tolist(), path.tolist()):
        yield (replica, t, -1, *x)
