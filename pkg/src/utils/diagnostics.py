"""Verification instruments.

Generator consistency against Neumann test functions, half-ball moment
oracles, bound trackers across refinement levels, two-sample distances and
a few geometric sanity checks on partitions.
"""

import logging
import math
from typing import Any, Dict, List, Optional, Sequence, Tuple

import dcor
import numpy as np
from scipy import stats

from src.models.consistency_report import ConsistencyReport
from src.models.generator_table import GeneratorTable
from src.models.neumann_function import NeumannTestFunction
from src.models.partition import Partition
from src.models.trajectory import Trajectory
from src.utils.errors import DimensionError, DomainError
from src.utils.generator import apply_all, beta_d
from src.utils.geometry import Domain, unit_ball_volume
from src.utils.partition import epsilon

logger = logging.getLogger(__name__)

HESSIAN_POINTS = 32
GROWTH_LIMIT = 2.0
PERMUTATIONS = 200
# dcor works on full distance matrices; larger samples are subsampled.
MAX_ENERGY_POINTS = 3000
MIN_MOMENT_SAMPLES = 10_000


def _ball_points(centers: np.ndarray, radii: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """``k`` uniform points in each ball, shape ``(len(centers), k, d)``."""
    n, d = centers.shape
    g = rng.standard_normal((n, k, d))
    g /= np.linalg.norm(g, axis=2, keepdims=True)
    r = radii[:, None] * rng.random((n, k)) ** (1.0 / d)
    return centers[:, None, :] + g * r[:, :, None]


def consistency_error(
    table: GeneratorTable,
    part: Partition,
    fn: NeumannTestFunction,
    rng: np.random.Generator,
) -> ConsistencyReport:
    """e(xi) = |L(pi f)(xi) - (Delta f / 2)(centroid)| with the bound decomposition.

    For an uncorrected table the target is Delta f / (2 (d + 2)).
    """
    centroids = part.centroids
    values = fn.f(centroids)
    if not np.all(np.isfinite(values)):
        raise DomainError(f"{fn.name} is not finite at every centroid")
    factor = float(table.report.get("laplacian_factor", 0.5))
    lf = apply_all(table, values)
    target = factor * fn.laplacian(centroids)
    errors = np.abs(lf - target)
    keep = part.diagnostic_mask & np.isfinite(errors)
    errors = np.where(keep, errors, np.nan)

    n, d = centroids.shape
    eps = np.array([g.eps for g in table.cells])
    rho = part.rho
    boundary = np.array([g.is_boundary for g in table.cells])
    anchors = np.array([g.anchor_used for g in table.cells])
    pts = _ball_points(anchors, rho, HESSIAN_POINTS, rng).reshape(-1, d)
    if part.domain.bounded:
        pts = part.domain.project(pts)
    hess = fn.hessian(pts).reshape(n, HESSIAN_POINTS, d, d)
    hess_sup = np.max(np.linalg.norm(hess, ord=2, axis=(2, 3)), axis=1)
    center_hess = fn.hessian(centroids)
    hess_osc = np.max(np.linalg.norm(hess - center_hess[:, None], ord=2, axis=(2, 3)), axis=1)

    alpha = float(getattr(part.domain, "alpha", 1.0))
    eps_rho = np.where(boundary, np.maximum(eps, part.delta) / rho, eps / rho)
    rho_alpha = np.where(boundary, rho ** alpha, 0.0)
    bound = (eps_rho + rho_alpha) * hess_sup + hess_osc

    def fitted(sel: np.ndarray) -> float:
        sel = sel & keep & (bound > 0.0)
        return float(np.max(errors[sel] / bound[sel])) if np.any(sel) else 0.0

    report = ConsistencyReport(
        function=fn.name,
        level=part.level,
        errors=errors,
        is_boundary=boundary,
        eps_rho=eps_rho,
        rho_alpha=rho_alpha,
        hessian_sup=hess_sup,
        hessian_osc=hess_osc,
        fitted_interior=fitted(~boundary),
        fitted_boundary=fitted(boundary),
    )
    logger.debug(
        "%s at n=%d: sup interior %.4g, sup boundary %.4g",
        fn.name, part.level, report.sup_interior, report.sup_boundary,
    )
    return report


def upper_half_ball(d: int, r: float, samples: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples of {|y| < r, y_d > 0}."""
    y = _ball_points(np.zeros((1, d)), np.array([r]), samples, rng)[0]
    y[:, -1] = np.abs(y[:, -1])
    return y


def halfball_moment_check(d: int, r: float, samples: int, rng: np.random.Generator) -> Dict[str, Any]:
    """Monte-Carlo half-ball moments against beta_d e_d and r^2/(d+2) I."""
    if samples < MIN_MOMENT_SAMPLES:
        raise ValueError(f"halfball_moment_check needs at least {MIN_MOMENT_SAMPLES} samples")
    y = upper_half_ball(d, r, samples, rng)
    first = y.mean(axis=0) / r
    first_sigma = y.std(axis=0, ddof=1) / (r * math.sqrt(samples))
    expected_first = np.zeros(d)
    expected_first[-1] = beta_d(d)
    outer = y[:, :, None] * y[:, None, :]
    second = outer.mean(axis=0)
    second_sigma = outer.std(axis=0, ddof=1) / math.sqrt(samples)
    expected_second = r * r / (d + 2) * np.eye(d)
    first_err = np.abs(first - expected_first)
    second_err = np.abs(second - expected_second)
    return {
        "first_moment": first,
        "second_moment": second,
        "first_moment_error": float(np.max(first_err)),
        "first_moment_sigma": float(np.max(first_sigma)),
        "first_moment_z": float(np.max(first_err / np.maximum(first_sigma, 1e-300))),
        "second_moment_error": float(np.max(second_err)),
        "second_moment_sigma": float(np.max(second_sigma)),
        "second_moment_z": float(np.max(second_err / np.maximum(second_sigma, 1e-300))),
    }


def boundary_symdiff_check(dom: Domain, x, r: float, samples: int, rng: np.random.Generator) -> Dict[str, float]:
    """m(B_D(x, r) symmetric-difference B_+(x, r)) estimated by Monte Carlo.

    ``ratio`` divides by r^(d + alpha).
    """
    x = np.asarray(x, dtype=float).ravel()
    bp = dom.nearest_boundary_point(x)
    d = dom.dim
    y = _ball_points(bp.location[None, :], np.array([r]), samples, rng)[0]
    in_domain = dom.contains(y)
    in_half = (y - bp.location) @ bp.inward_normal > 0.0
    p = float(np.mean(in_domain ^ in_half))
    vol = unit_ball_volume(d) * r ** d
    value = vol * p
    sigma = vol * math.sqrt(p * (1.0 - p) / samples)
    scale = r ** (d + float(getattr(dom, "alpha", 1.0)))
    return {"value": value, "sigma": sigma, "ratio": value / scale, "ratio_sigma": sigma / scale}


def _subsample(x: np.ndarray) -> np.ndarray:
    # replicas are i.i.d., so an evenly strided subset is still a sample of the law
    if x.shape[0] <= MAX_ENERGY_POINTS:
        return x
    return x[np.linspace(0, x.shape[0] - 1, MAX_ENERGY_POINTS).astype(np.int64)]


def _as_samples(a) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise DimensionError(f"expected a non-empty (N, d) sample, got shape {np.shape(a)}")
    return arr


def two_sample_distance(a, b) -> Dict[str, Optional[float]]:
    """Energy distance, plus the Kolmogorov-Smirnov statistic when d = 1."""
    x, y = _as_samples(a), _as_samples(b)
    if x.shape[1] != y.shape[1]:
        raise DimensionError(f"sample dimensions differ: {x.shape[1]} vs {y.shape[1]}")
    energy = float(dcor.energy_distance(_subsample(x), _subsample(y)))
    ks = None
    if x.shape[1] == 1:
        ks = float(stats.ks_2samp(x[:, 0], y[:, 0]).statistic)
    return {"energy": max(energy, 0.0), "ks": ks}


def permutation_test(a, b, rng: np.random.Generator, num_resamples: int = PERMUTATIONS) -> Dict[str, float]:
    """Energy-statistic permutation test of equal laws."""
    x, y = _as_samples(a), _as_samples(b)
    if x.shape[1] != y.shape[1]:
        raise DimensionError(f"sample dimensions differ: {x.shape[1]} vs {y.shape[1]}")
    result = dcor.homogeneity.energy_test(
        _subsample(x), _subsample(y), num_resamples=num_resamples, random_state=rng
    )
    return {"statistic": float(result.statistic), "pvalue": float(result.pvalue)}


def continuous_second_moment(part: Partition, table: GeneratorTable, i: int) -> np.ndarray:
    """Q-tilde: second moment of the uniform law on O_xi about the anchor."""
    g = table.cell(i)
    return g.Q + np.einsum("k,kij->ij", g.mass, part.covariances[g.neighbors])


def _level_trackers(part: Partition, table: GeneratorTable) -> Dict[str, Any]:
    d = part.dim
    t_q, t_fine, t_shape = [], [], []
    violations = 0
    for g in table.cells:
        if not (g.is_valid and part.diagnostic_mask[g.cell_id]):
            continue
        q_tilde_mat = continuous_second_moment(part, table, g.cell_id)
        q_tilde = float(np.trace(q_tilde_mat)) / d
        eps, rho = g.eps, g.rho
        limit = (eps + 2.0 * rho) * eps
        gap = abs(g.q - q_tilde)
        if gap > limit * (1.0 + 1e-9):
            violations += 1
        t_q.append(gap / limit)
        if not g.is_boundary and g.valid["rank_full"] and eps > 0:
            t_fine.append(abs(g.q - rho * rho / (d + 2)) / (eps * rho))
            t_shape.append(np.linalg.norm(q_tilde_mat / g.q - np.eye(d), ord=2) / (eps / rho))

    def as_max(v):
        return float(np.max(v)) if v else 0.0

    return {
        "level": part.level,
        "q_gap": as_max(t_q),
        "q_fine": as_max(t_fine),
        "q_shape": as_max(t_shape),
        "q_gap_violations": violations,
    }


def bound_trackers(levels: Sequence[Tuple[Partition, GeneratorTable]]) -> Dict[str, Any]:
    """Normalized second-moment trackers per level and whether any grows more than 2x."""
    rows = [_level_trackers(part, table) for part, table in levels]
    report: Dict[str, Any] = {"levels": rows, "growth": {}, "bounded": None}
    if len(rows) < 2:
        return report
    bounded = True
    for name in ("q_gap", "q_fine", "q_shape"):
        first = rows[0][name]
        worst = max(r[name] for r in rows)
        growth = worst / first if first > 0 else (1.0 if worst == 0 else math.inf)
        report["growth"][name] = growth
        bounded = bounded and growth <= GROWTH_LIMIT
    report["bounded"] = bounded
    return report


def hausdorff_check(part: Partition, pairs: int, rng: np.random.Generator) -> Dict[str, Any]:
    """| d_H(cell, z) - |centroid - z| | <= eps over random (cell, point) pairs.

    d_H(cell, z) is the largest distance from z to the cell's quadrature points.
    """
    region = part.window if part.window is not None else part.domain
    cells = rng.integers(0, part.n_cells, size=pairs)
    points = region.sample_uniform(pairs, rng)
    if part.rho is not None:
        bounds = np.array([epsilon(part, int(i)) for i in cells])
    else:
        bounds = part.radius_bounds[cells]
    gaps = np.empty(pairs)
    for k, (i, z) in enumerate(zip(cells, points)):
        pts, _ = part.quadrature(int(i))
        d_h = float(np.max(np.linalg.norm(pts - z, axis=1)))
        gaps[k] = abs(d_h - float(np.linalg.norm(part.centroids[i] - z)))
    slack = gaps - bounds
    return {
        "pairs": pairs,
        "max_gap": float(np.max(gaps)),
        "max_excess": float(np.max(slack)),
        "violations": int(np.count_nonzero(slack > 1e-12)),
        "holds": bool(np.all(slack <= 1e-12)),
    }


def sandwich_check(part: Partition, table: GeneratorTable) -> Dict[str, int]:
    """Count cells whose O_xi leaves B(anchor, rho + eps) or misses B(anchor, rho - eps) in D."""
    outer, inner = 0, 0
    for g in table.cells:
        anchor = g.anchor_used
        own = part.samples_of(g.neighbors)
        if own.shape[0] and np.max(np.linalg.norm(own - anchor, axis=1)) > g.rho + g.eps:
            outer += 1
        reach = g.rho - g.eps
        if reach <= 0:
            continue
        nearby = part.cells_intersecting(anchor, reach)
        foreign = np.setdiff1d(nearby, g.neighbors, assume_unique=True)
        pts = part.samples_of(foreign)
        if pts.shape[0] and np.min(np.linalg.norm(pts - anchor, axis=1)) < reach:
            inner += 1
    return {"outer_violations": outer, "inner_violations": inner}


def coverage_check(part: Partition) -> Dict[str, float]:
    """Total cell measure against m(D) (or the lattice window)."""
    region = part.window if part.window is not None else part.domain
    total = float(np.sum(part.measures))
    expected = float(region.measure)
    sigma = float(np.sqrt(np.sum(part.measure_sigma ** 2)))
    weights = np.add.reduceat(part.sample_weights, part.quad_offsets[:-1])
    return {
        "total_measure": total,
        "domain_measure": expected,
        "relative_error": abs(total - expected) / expected,
        "sigma": sigma,
        "max_quadrature_mismatch": float(np.max(np.abs(weights - part.measures))),
    }


def sup_path_distance(traj: Trajectory, centroids: np.ndarray, path: np.ndarray, grid: np.ndarray) -> float:
    """sup over the grid of |Y_t - X_t| between a chain trajectory and a reference path."""
    grid = np.asarray(grid, dtype=float)
    if path.shape[0] != grid.size:
        raise DimensionError(f"path has {path.shape[0]} points for a grid of {grid.size}")
    return float(np.max(np.linalg.norm(traj.positions(centroids, grid) - path, axis=1)))


def decreasing(values: Sequence[float], slack: float = 0.2) -> bool:
    """Non-increasing up to a relative slack."""
    return all(b <= a * (1.0 + slack) for a, b in zip(values, values[1:]))


def summarize_levels(name: str, values: List[float]) -> str:
    return f"{name}: " + ", ".join(f"{v:.4g}" for v in values)
