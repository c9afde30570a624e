"""Continuous-time simulation of the chain generated by a GeneratorTable."""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from src.models.generator_table import GeneratorTable
from src.models.partition import Partition
from src.models.trajectory import Trajectory
from src.utils.errors import GeneratorError, SimulationError
from src.utils.kernels import advance_chain
from src.utils.rng import STAGE_CHAIN, seed_record, spawn_streams

logger = logging.getLogger(__name__)

CHUNK = 4096
# Uniformization is only used as an exact oracle on small tables.
MAX_UNIFORMIZATION_STATES = 200


def jump_rate(table: GeneratorTable, i: int) -> float:
    """lambda(xi) = (1/q) * sum of off-diagonal weights; 0 for absorbing cells."""
    g = table.cell(i)
    if g.is_absorbing:
        logger.debug("cell %d is absorbing", i)
        return 0.0
    if not g.is_valid:
        raise GeneratorError(f"cell {i} has an invalid generator (flags {g.valid})")
    _, w = g.off_diagonal()
    return float(np.sum(w)) / g.q


def jump_distribution(table: GeneratorTable, i: int) -> Tuple[np.ndarray, np.ndarray]:
    """(target ids, probabilities) of the jump leaving cell ``i``."""
    g = table.cell(i)
    nbr, w = g.off_diagonal()
    if np.any(w < 0.0):
        raise GeneratorError(f"cell {i} has negative jump weights (max |c| = {g.max_abs_c:.4g})")
    if jump_rate(table, i) <= 0.0:
        raise GeneratorError(f"cell {i} has zero jump rate")
    return nbr, w / np.sum(w)


def _check_start(table: GeneratorTable, start: int):
    if not 0 <= int(start) < table.n_cells:
        raise SimulationError(f"start cell {start} out of range [0, {table.n_cells})")


def simulate(
    table: GeneratorTable,
    start: int,
    horizon: float,
    rng: np.random.Generator,
    seed: Optional[Dict[str, Any]] = None,
) -> Trajectory:
    """One trajectory on [0, horizon]: exponential holding times, weighted jumps.

    Reaching an absorbing (or invalid) cell freezes the chain there until the
    horizon and sets ``absorbed``.
    """
    _check_start(table, start)
    if horizon < 0:
        raise SimulationError(f"horizon must be non-negative, got {horizon}")
    rates = table.jump_rates
    indptr, targets, cums = table.jump_csr
    cell, t = int(start), 0.0
    times: List[np.ndarray] = []
    cells: List[np.ndarray] = []
    finished = horizon == 0
    absorbed = False
    while not finished:
        expo = rng.standard_exponential(CHUNK)
        unif = rng.random(CHUNK)
        out_t = np.empty(CHUNK)
        out_c = np.empty(CHUNK, dtype=np.int64)
        k, cell, t, finished, absorbed = advance_chain(
            cell, t, float(horizon), rates, indptr, targets, cums, expo, unif, out_t, out_c
        )
        times.append(out_t[:k])
        cells.append(out_c[:k])
    if absorbed:
        logger.warning("Warning: chain absorbed in cell %d at t=%.6g; holding to the horizon", cell, t)
    return Trajectory(
        start_cell=int(start),
        times=np.concatenate(times) if times else np.empty(0),
        cells=np.concatenate(cells) if cells else np.empty(0, dtype=np.int64),
        horizon=float(horizon),
        seed=dict(seed or {}),
        absorbed=bool(absorbed),
    )


def _worker_count(threads: Optional[int], jobs: int) -> int:
    if threads is None:
        threads = min(8, os.cpu_count() or 1)
    return max(1, min(int(threads), jobs))


def simulate_replicas(
    table: GeneratorTable,
    start: int,
    horizon: float,
    replicas: int,
    seed: int,
    key: Sequence[int] = (STAGE_CHAIN,),
    threads: Optional[int] = None,
) -> List[Trajectory]:
    """Independent replicas on substreams ``key + (r,)``, ordered by replica index."""
    key = tuple(int(k) for k in key)
    streams = spawn_streams(seed, key, replicas)

    def run(r: int) -> Trajectory:
        try:
            return simulate(table, start, horizon, streams[r], seed_record(seed, *key, r))
        except Exception as e:
            logger.error("Error simulating replica %d: %s", r, e)
            raise

    workers = _worker_count(threads, replicas)
    if workers <= 1:
        return [run(r) for r in range(replicas)]
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="ChainReplicaWorker") as executor:
        return list(executor.map(run, range(replicas)))


def marginal_positions(
    table: GeneratorTable,
    part: Partition,
    start: int,
    t: Union[float, Sequence[float]],
    replicas: int,
    seed: int,
    key: Sequence[int] = (STAGE_CHAIN,),
    threads: Optional[int] = None,
) -> np.ndarray:
    """Centroid of the occupied cell at time(s) ``t`` for each replica.

    A scalar ``t`` gives shape ``(replicas, d)``; a sequence gives
    ``(len(t), replicas, d)``.
    """
    times = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(times < 0):
        raise SimulationError("marginal times must be non-negative")
    trajectories = simulate_replicas(table, start, float(times.max()), replicas, seed, key, threads)
    cells = np.stack([traj.cell_at(times) for traj in trajectories], axis=1)
    out = part.centroids[cells]
    return out[0] if np.ndim(t) == 0 else out


def transition_distribution(table: GeneratorTable, start: int, t: float, tol: float = 1e-13) -> np.ndarray:
    """Exact law of X_t by uniformization (small tables only)."""
    n = table.n_cells
    if n > MAX_UNIFORMIZATION_STATES:
        raise GeneratorError(f"uniformization is limited to {MAX_UNIFORMIZATION_STATES} states, got {n}")
    _check_start(table, start)
    p = np.zeros(n)
    p[int(start)] = 1.0
    lam = float(np.max(table.jump_rates))
    if t == 0 or lam == 0.0:
        return p
    kernel = np.eye(n) + table.rate_matrix().toarray() / lam
    mean = lam * t
    k_max = int(stats.poisson.ppf(1.0 - tol, mean)) + 1
    weights = stats.poisson.pmf(np.arange(k_max + 1), mean)
    out = np.zeros(n)
    term = p
    for k in range(k_max + 1):
        out += weights[k] * term
        term = term @ kernel
    return out / np.sum(out)


def empirical_generator(
    table: GeneratorTable,
    values,
    start: int,
    h: float,
    replicas: int,
    seed: int,
    key: Sequence[int] = (STAGE_CHAIN, 0),
    threads: Optional[int] = None,
) -> Tuple[float, float]:
    """Monte-Carlo estimate of (E f(X_h) - f(x)) / h with its standard error."""
    if h <= 0:
        raise SimulationError(f"h must be positive, got {h}")
    values = np.asarray(values, dtype=float)
    trajectories = simulate_replicas(table, start, h, replicas, seed, key, threads)
    end = np.array([traj.cell_at(h) for traj in trajectories])
    diff = (values[end] - values[int(start)]) / h
    return float(np.mean(diff)), float(np.std(diff, ddof=1) / np.sqrt(replicas))


def trajectory_rows(traj: Trajectory, replica: int, centroids: np.ndarray):
    """``(replica, time, cell, x1..xd)`` rows, starting with the time-0 state."""
    yield (replica, 0.0, traj.start_cell, *centroids[traj.start_cell].tolist())
    for time, cell in zip(traj.times.tolist(), traj.cells.tolist()):
        yield (replica, time, cell, *centroids[cell].tolist())
