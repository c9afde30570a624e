"""Partition construction and per-cell geometry.

Lattice cells (cubes of side 1/n around points of the scaled integer
lattice, clipped to the box or window) carry exact closed forms. Voronoi
cells of sampled sites are represented by Monte-Carlo quadrature: uniform
samples of D assigned to their nearest site.
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from src.models.partition import Partition
from src.utils.errors import DomainError, PartitionError, ScaleError
from src.utils.geometry import Box, Domain, WholeSpace
from src.utils.rng import split_batches

logger = logging.getLogger(__name__)

MC_BATCH = 1 << 16
MIN_SAMPLES_PER_CELL = 1

# default schedule a_n = K_a h^A_EXPONENT, b_n = K_b h^B_EXPONENT
A_EXPONENT = 0.9
B_EXPONENT = 0.5
BOUNDARY_CAP = 0.9


def _worker_count(threads: Optional[int], jobs: int) -> int:
    if threads is None:
        threads = min(8, os.cpu_count() or 1)
    return max(1, min(int(threads), jobs))


def voronoi_spacing(n: int, d: int) -> float:
    """(log n / n)^(1/d), the almost-sure Voronoi diameter scale."""
    if n < 2:
        return 1.0
    return (math.log(n) / n) ** (1.0 / d)


def _grouped_sums(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    return np.add.reduceat(values, offsets[:-1], axis=0)


def build_lattice_partition(
    dom: Domain,
    n: int,
    window: Optional[Box] = None,
    quadrature_per_axis: int = 4,
) -> Partition:
    """Cubes of side 1/n centred on (1/n)Z^d, clipped to the box or window.

    Full cells have measure n^-d, centroid exactly at the lattice point and
    radius bound sqrt(d)/(2n).
    """
    n = int(n)
    if n < 1:
        raise PartitionError(f"lattice resolution must be >= 1, got {n}")
    if isinstance(dom, Box):
        region = dom
    elif isinstance(dom, WholeSpace):
        if window is None:
            raise DomainError("whole-space lattices need a finite window")
        region = window
    else:
        raise DomainError(f"lattice partitions need a box or the whole space, got {dom.kind}")
    d = region.dim
    h = 1.0 / n

    axis_centers, axis_lo, axis_hi = [], [], []
    for i in range(d):
        k_lo = int(math.ceil(region.lo[i] * n - 1e-9))
        k_hi = int(math.floor(region.hi[i] * n + 1e-9))
        if k_hi < k_lo:
            raise PartitionError(f"no lattice point of spacing {h} inside axis {i} of the region")
        centers = np.arange(k_lo, k_hi + 1) / n
        axis_centers.append(centers)
        axis_lo.append(np.maximum(region.lo[i], centers - 0.5 * h))
        axis_hi.append(np.minimum(region.hi[i], centers + 0.5 * h))

    mesh = np.meshgrid(*[np.arange(len(c)) for c in axis_centers], indexing="ij")
    index = np.stack([m.ravel() for m in mesh], axis=1)
    sites = np.stack([axis_centers[i][index[:, i]] for i in range(d)], axis=1)
    lo = np.stack([axis_lo[i][index[:, i]] for i in range(d)], axis=1)
    hi = np.stack([axis_hi[i][index[:, i]] for i in range(d)], axis=1)
    lengths = hi - lo
    full = np.all(np.isclose(lengths, h, rtol=0.0, atol=1e-12 * h), axis=1)

    measures = np.prod(lengths, axis=1)
    measures[full] = h ** d
    centroids = 0.5 * (lo + hi)
    centroids[full] = sites[full]
    radius_bounds = 0.5 * np.linalg.norm(lengths, axis=1)
    radius_bounds[full] = math.sqrt(d) / (2 * n)
    covariances = np.zeros((sites.shape[0], d, d))
    covariances[:, np.arange(d), np.arange(d)] = lengths ** 2 / 12.0

    q = max(1, int(quadrature_per_axis))
    frac = (np.arange(q) + 0.5) / q
    grid = np.stack([g.ravel() for g in np.meshgrid(*([frac] * d), indexing="ij")], axis=1)
    samples = (lo[:, None, :] + lengths[:, None, :] * grid[None, :, :]).reshape(-1, d)
    weights = np.repeat(measures / grid.shape[0], grid.shape[0])
    offsets = np.arange(sites.shape[0] + 1) * grid.shape[0]

    logger.info("built lattice partition: n=%d, %d cells in %s", n, sites.shape[0], region.kind)
    return Partition(
        domain=dom,
        kind="lattice",
        sites=sites,
        centroids=centroids,
        measures=measures,
        measure_sigma=np.zeros(sites.shape[0]),
        radius_bounds=radius_bounds,
        covariances=covariances,
        samples=samples,
        sample_weights=weights,
        quad_offsets=offsets,
        level=n,
        spacing=h,
        window=window if isinstance(dom, WholeSpace) else None,
    )


def build_voronoi_partition(
    dom: Domain,
    sites,
    mc_per_cell: int,
    rng: np.random.Generator,
    threads: Optional[int] = None,
) -> Partition:
    """Voronoi cells of ``sites`` estimated from ``mc_per_cell * n`` uniform samples."""
    if not dom.bounded:
        raise DomainError("Voronoi partitions need a bounded domain")
    sites = np.asarray(sites, dtype=float)
    if sites.ndim != 2 or sites.shape[1] != dom.dim or sites.shape[0] == 0:
        raise PartitionError(f"sites must have shape (n, {dom.dim}), got {sites.shape}")
    if not np.all(dom.contains(sites)):
        raise PartitionError("every site must lie inside the domain")
    n, d = sites.shape
    tree = cKDTree(sites)
    if n > 1:
        nn_dist, _ = tree.query(sites, k=2)
        nn_dist = nn_dist[:, 1]
        if np.any(nn_dist == 0.0):
            raise PartitionError("duplicate sites")
        half_spacing = 0.5 * nn_dist
    else:
        half_spacing = np.array([0.5 * dom.diameter])

    total = int(mc_per_cell) * n
    batches = split_batches(total, MC_BATCH)
    streams = rng.spawn(len(batches))

    def run_batch(job):
        (start, stop), stream = job
        pts = dom.sample_uniform(stop - start, stream)
        _, lab = tree.query(pts)
        return pts, np.asarray(lab, dtype=np.int64)

    workers = _worker_count(threads, len(batches))
    if workers <= 1:
        results = [run_batch(job) for job in zip(batches, streams)]
    else:
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="VoronoiMCWorker") as executor:
            results = list(executor.map(run_batch, zip(batches, streams)))

    points = np.concatenate([r[0] for r in results]) if results else np.empty((0, d))
    labels = np.concatenate([r[1] for r in results]) if results else np.empty(0, dtype=np.int64)
    counts = np.bincount(labels, minlength=n)
    empty = np.flatnonzero(counts < MIN_SAMPLES_PER_CELL)
    if empty.size:
        raise PartitionError(
            f"{empty.size} cell(s) received no Monte-Carlo samples "
            f"(first: {int(empty[0])}); increase mc_per_cell"
        )

    order = np.argsort(labels, kind="stable")
    samples = points[order]
    sorted_labels = labels[order]
    offsets = np.concatenate([[0], np.cumsum(counts)])

    vol = dom.measure
    frac = counts / total
    measures = frac * vol
    measure_sigma = vol * np.sqrt(frac * (1.0 - frac) / total)
    centroids = _grouped_sums(samples, offsets) / counts[:, None]
    centered = samples - centroids[sorted_labels]
    outer = centered[:, :, None] * centered[:, None, :]
    covariances = _grouped_sums(outer, offsets) / counts[:, None, None]
    max_dist = np.maximum.reduceat(np.linalg.norm(centered, axis=1), offsets[:-1])
    # the sample maximum can fall short of the true sup over the cell
    radius_bounds = max_dist * (1.0 + 2.0 * half_spacing / np.sqrt(counts))

    logger.info("built Voronoi partition: %d sites, %d samples", n, total)
    return Partition(
        domain=dom,
        kind="voronoi",
        sites=sites,
        centroids=centroids,
        measures=measures,
        measure_sigma=measure_sigma,
        radius_bounds=radius_bounds,
        covariances=covariances,
        samples=samples,
        sample_weights=np.full(total, vol / total),
        quad_offsets=offsets,
        level=n,
        spacing=voronoi_spacing(n, d),
    )


def classify_boundary(part: Partition, dom: Optional[Domain] = None) -> Partition:
    """Mark cells whose delta-ball around the centroid leaves D and anchor them."""
    if part.delta is None:
        raise ScaleError("classify_boundary needs delta to be assigned first")
    dom = dom if dom is not None else part.domain
    n, d = part.n_cells, part.dim
    anchors = np.full((n, d), np.nan)
    normals = np.full((n, d), np.nan)
    if not dom.bounded:
        return replace(part, is_boundary=np.zeros(n, dtype=bool), anchors=anchors, normals=normals)
    sd = dom.signed_distance(part.centroids)
    boundary = sd < part.delta
    for i in np.flatnonzero(boundary):
        bp = dom.nearest_boundary_point(part.centroids[i])
        anchors[i] = bp.location
        normals[i] = bp.inward_normal
    logger.debug("classified %d of %d cells as boundary cells", int(boundary.sum()), n)
    return replace(part, is_boundary=boundary, anchors=anchors, normals=normals)


def neighbor_ids(part: Partition, i: int) -> np.ndarray:
    """Cells whose centroid lies in B(anchor, rho) for cell ``i``."""
    return part.cells_with_centroid_in(part.anchor_points[i], float(part.rho[i]))


def epsilon(part: Partition, i: int) -> float:
    """Largest radius bound over N_xi and the cells meeting B(anchor, rho)."""
    if part.rho is None:
        raise ScaleError("epsilon needs rho to be assigned first")
    anchor = part.anchor_points[i]
    rho = float(part.rho[i])
    if part.cells_with_centroid_in(anchor, rho).size == 0:
        raise PartitionError(f"cell {i} has an empty neighbor set (rho={rho:g})")
    # N_xi is contained in the intersecting set
    touching = part.cells_intersecting(anchor, rho)
    return float(np.max(part.radius_bounds[touching]))


def epsilons(part: Partition) -> np.ndarray:
    return np.array([epsilon(part, i) for i in range(part.n_cells)])


def assign_scales(part: Partition, a_n: float, b_n: float) -> Partition:
    """delta = a_n everywhere; rho = a_n on interior cells and b_n on boundary cells."""
    if not (0.0 < a_n < b_n):
        raise ScaleError(
            f"rho must exceed delta on boundary cells: need 0 < a_n < b_n, got a_n={a_n}, b_n={b_n}"
        )
    n = part.n_cells
    scaled = classify_boundary(replace(part, delta=np.full(n, float(a_n)), rho=None))
    rho = np.where(scaled.is_boundary, float(b_n), float(a_n))
    mask = np.ones(n, dtype=bool)
    if scaled.window is not None:
        # whole-space runs: keep cells whose rho-ball stays inside the window
        margin = scaled.window.signed_distance(scaled.centroids)
        mask = margin >= rho + scaled.max_radius_bound
    params = {"n": part.level, "a_n": float(a_n), "b_n": float(b_n), "spacing": part.spacing}
    return replace(scaled, rho=rho, diagnostic_mask=mask, level_params=params)


def level_spacing(kind: str, n: int, d: int) -> float:
    """h_n: (log n / n)^(1/d) for Voronoi sites, 1/n for lattices."""
    if kind == "lattice":
        return 1.0 / n
    return voronoi_spacing(n, d)


def default_scales(
    spacing: float,
    k_a: float,
    k_b: float,
    a_exponent: float = A_EXPONENT,
    b_exponent: float = B_EXPONENT,
):
    """a_n = K_a * h_n^alpha and b_n = K_b * h_n^beta with 0 < beta < alpha < 1.

    Then h_n / a_n, a_n / b_n and b_n all tend to zero as h_n does.
    """
    if not 0.0 < b_exponent < a_exponent < 1.0:
        raise ScaleError(f"need 0 < b_exponent < a_exponent < 1, got {b_exponent} and {a_exponent}")
    return k_a * spacing ** a_exponent, k_b * spacing ** b_exponent


def boundary_constant(region: Domain, coarsest_spacing: float, cap: float = BOUNDARY_CAP,
                      b_exponent: float = B_EXPONENT) -> float:
    """K_b putting b_n at ``cap`` times the inscribed radius on the coarsest level."""
    if not 0.0 < cap <= 1.0:
        raise ScaleError(f"boundary cap must lie in (0, 1], got {cap}")
    radius = region.inradius
    if not math.isfinite(radius):
        raise ScaleError(f"{region.kind} has no finite inscribed radius to cap b_n with")
    return cap * radius / coarsest_spacing ** b_exponent


def interior_eps_ratio(part: Partition) -> float:
    """max epsilon/rho over interior cells inside the diagnostic mask."""
    interior = np.flatnonzero(~part.is_boundary & part.diagnostic_mask)
    if interior.size == 0:
        raise ScaleError(f"no interior cells at n={part.level}; epsilon/rho on the interior is undefined")
    eps = np.array([epsilon(part, int(i)) for i in interior])
    return float(np.max(eps / part.rho[interior]))


def calibrate_k_a(
    part: Partition,
    target: float,
    b_n: float,
    a_exponent: float = A_EXPONENT,
    max_iter: int = 30,
) -> float:
    """Smallest tried K_a for which max interior epsilon/rho <= ``target``.

    ``b_n`` is the boundary scale of this level; it stays fixed while a_n grows.
    """
    if target <= 0:
        raise ScaleError(f"calibration target must be positive, got {target}")
    h_pow = part.spacing ** a_exponent
    k_a = float(np.median(part.radius_bounds)) / (target * h_pow)
    for it in range(max_iter):
        a_n = k_a * h_pow
        if a_n >= b_n:
            raise ScaleError(
                f"calibration at n={part.level} pushed a_n={a_n:.4g} up to b_n={b_n:.4g}; "
                "calibrate at a finer level or raise scales.boundary_cap"
            )
        ratio = interior_eps_ratio(assign_scales(part, a_n, b_n))
        logger.debug("calibration step %d: K_a=%.4g max eps/rho=%.4g", it, k_a, ratio)
        if ratio <= target:
            logger.info("calibrated K_a=%.4g at n=%d (a_n=%.4g, max eps/rho=%.4g)", k_a, part.level, a_n, ratio)
            return float(k_a)
        k_a *= 1.05 * ratio / target
    raise ScaleError(f"could not reach eps/rho <= {target:g} within {max_iter} calibration steps")


def scale_schedule_check(levels: Sequence[Dict[str, float]]) -> Dict[str, object]:
    """Ratios behind the three scale limits, evaluated on the level grid.

    Each entry needs ``n``, ``spacing``, ``a_n`` and ``b_n``. The schedule is
    accepted when h_n/a_n, a_n/b_n and b_n are all non-increasing in n.
    """
    rows = sorted(levels, key=lambda r: r["n"])
    spacing_ratio = [r["spacing"] / r["a_n"] for r in rows]
    scale_ratio = [r["a_n"] / r["b_n"] for r in rows]
    outer = [r["b_n"] for r in rows]

    def non_increasing(seq: List[float]) -> bool:
        return all(b <= a * (1 + 1e-12) for a, b in zip(seq, seq[1:]))

    return {
        "n": [r["n"] for r in rows],
        "spacing_over_a": spacing_ratio,
        "a_over_b": scale_ratio,
        "b": outer,
        "spacing_over_a_decreasing": non_increasing(spacing_ratio),
        "a_over_b_decreasing": non_increasing(scale_ratio),
        "b_decreasing": non_increasing(outer),
    }


def diameter_fit(part: Partition) -> float:
    """max diam(cell) / (log n / n)^(1/d), using 2 * radius bound as diameter bound."""
    return float(2.0 * part.max_radius_bound / voronoi_spacing(part.n_cells, part.dim))


def sample_sites(dom: Domain, n: int, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. uniform sites; duplicates are redrawn."""
    sites = dom.sample_uniform(n, rng)
    while True:
        _, first = np.unique(sites, axis=0, return_index=True)
        if first.size == n:
            return sites
        dup = np.setdiff1d(np.arange(n), first)
        sites[dup] = dom.sample_uniform(dup.size, rng)


def build_level(
    kind: str,
    dom: Domain,
    level: int,
    make_rng: Callable[[int], np.random.Generator],
    mc_per_cell: int = 200,
    window: Optional[Box] = None,
    quadrature_per_axis: int = 4,
    threads: Optional[int] = None,
) -> Partition:
    """Unscaled partition for one refinement level.

    ``make_rng(tag)`` returns the stream for tag 0 (sites) or 1 (Monte Carlo).
    """
    if kind == "lattice":
        return build_lattice_partition(dom, level, window=window, quadrature_per_axis=quadrature_per_axis)
    if kind == "voronoi":
        sites = sample_sites(dom, level, make_rng(0))
        return build_voronoi_partition(dom, sites, mc_per_cell, make_rng(1), threads=threads)
    raise PartitionError(f"unknown partition kind {kind!r}")
