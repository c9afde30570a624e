"""Corrected generator assembly.

For each cell xi the generator acts as

    L f(xi) = (1 / q(xi)) * sum_{eta in N_xi} (f(eta) - f(xi)) * w(xi, eta)

with ``w = (1 - c) * m(eta) / m(O_xi)``. The corrector ``c = A^+ b`` cancels
the first-order drift ``b`` (which on boundary cells carries the half-ball
term ``beta_d * rho * nu``) and ``q = tr(Q) / d`` rescales time.
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy import optimize, special

from src.models.generator_table import CellGenerator, GeneratorTable
from src.models.partition import Partition
from src.utils.errors import GeneratorError, ScaleError, ThresholdError
from src.utils.linalg import DEFAULT_RANK_TOL, min_quadratic_form, numerical_rank, pseudoinverse
from src.utils.partition import epsilons

logger = logging.getLogger(__name__)

THRESHOLD_SAFETY = 0.99
BISECT_TOL = 1e-12
ANCHOR_OFFSETS = (0.3, 0.4, 0.5)
R_D_INFLATION = 1.1
IDENTITY_TOL = 1e-8


def beta_d(d: int) -> float:
    """2 / ((d + 1) * B(1/2, (d + 1)/2)), the half-ball mean displacement constant."""
    if int(d) < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    d = int(d)
    log_beta = special.gammaln(0.5) + special.gammaln(0.5 * (d + 1)) - special.gammaln(0.5 * d + 1.0)
    return float(2.0 / ((d + 1) * math.exp(log_beta)))


def _anchor(part: Partition, i: int, corrected: bool = True) -> np.ndarray:
    if corrected and part.is_boundary[i]:
        return part.anchors[i]
    return part.centroids[i]


def neighbor_set(part: Partition, i: int, corrected: bool = True) -> np.ndarray:
    """Ids of cells whose centroid lies strictly inside B(anchor, rho(xi))."""
    if part.rho is None:
        raise ScaleError("neighbor_set needs rho to be assigned")
    rho = float(part.rho[i])
    nbr = part.cells_with_centroid_in(_anchor(part, i, corrected), rho)
    if nbr.size == 0:
        raise GeneratorError(f"cell {i} has an empty neighbor set; rho={rho:g} violates the scale rule")
    return nbr


def neighbor_masses(part: Partition, nbr: np.ndarray) -> np.ndarray:
    """m(eta) / m(O_xi) over the neighbor set."""
    m = part.measures[nbr]
    return m / np.sum(m)


def drift_b(part: Partition, i: int, nbr: Optional[np.ndarray] = None) -> np.ndarray:
    if nbr is None:
        nbr = neighbor_set(part, i)
    mass = neighbor_masses(part, nbr)
    if part.is_boundary[i]:
        disp = part.centroids[nbr] - part.anchors[i]
        return mass @ disp - beta_d(part.dim) * float(part.rho[i]) * part.normals[i]
    return mass @ (part.centroids[nbr] - part.centroids[i])


def second_moment_Q(part: Partition, i: int, nbr: Optional[np.ndarray] = None, corrected: bool = True):
    """(Q, q) with Q the mass-weighted second moment about the anchor and q = tr(Q)/d."""
    if nbr is None:
        nbr = neighbor_set(part, i, corrected)
    mass = neighbor_masses(part, nbr)
    disp = part.centroids[nbr] - _anchor(part, i, corrected)
    Q = (disp * mass[:, None]).T @ disp
    Q = 0.5 * (Q + Q.T)
    return Q, float(np.trace(Q)) / part.dim


def design_matrix(part: Partition, i: int, nbr: np.ndarray) -> np.ndarray:
    """A(xi): d x |N_xi| with columns (centroid - anchor) * m(eta)/m(O_xi)."""
    mass = neighbor_masses(part, nbr)
    disp = part.centroids[nbr] - _anchor(part, i)
    return (disp * mass[:, None]).T


def corrector_c(a: np.ndarray, b: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL):
    """c = A^+ b and whether A has full row rank."""
    c = pseudoinverse(a, rank_tol) @ b
    rank_full = numerical_rank(a, rank_tol) == a.shape[0]
    if rank_full:
        residual = float(np.linalg.norm(a @ c - b))
        if residual > IDENTITY_TOL * max(1.0, float(np.linalg.norm(b))):
            logger.warning("Warning: A c = b residual %.3g exceeds %.0e", residual, IDENTITY_TOL)
    return c, rank_full


def a1(t: float, d: int) -> float:
    return (1.0 / (d + 2)) * (1.0 - t) ** (d + 2) / (1.0 + t) ** d - t * t


def a2(t: float, d: int, r_d: float) -> float:
    return (r_d ** (-(d + 2)) / (d + 2)) / (1.0 + t) ** d - t * t - 2.0 * t


def _threshold(fn: Callable[[float], float], what: str) -> float:
    f0, f1 = fn(0.0), fn(1.0)
    if not f0 > 0.0:
        raise ThresholdError(f"{what} is not positive at 0 (value {f0:.3g}); no admissible threshold")
    if not f1 < 0.0:
        raise ThresholdError(f"{what} does not change sign on (0, 1)")
    root = optimize.bisect(fn, 0.0, 1.0, xtol=BISECT_TOL, maxiter=200)
    return THRESHOLD_SAFETY * float(root)


def threshold_c1(d: int) -> float:
    """0.99 times the root of a_1 in (0, 1); bound for eps/rho on interior cells."""
    return _threshold(lambda t: a1(t, d), "a_1")


def threshold_c2(d: int, r_d: float) -> float:
    """0.99 times the root of a_2 in (0, 1); bound for eps/rho on boundary cells."""
    if not r_d > 1.0:
        raise ThresholdError(f"R_D must exceed 1, got {r_d}")
    return _threshold(lambda t: a2(t, d, r_d), "a_2")


def inscribed_radius(part: Partition, nbr: np.ndarray, center: np.ndarray) -> float:
    """Radius of the largest ball around ``center`` free of foreign quadrature points."""
    dom = part.domain
    sd = float(dom.signed_distance(center))
    if sd <= 0.0:
        return 0.0
    radius = sd
    nearby = part.cells_intersecting(center, radius)
    foreign = np.setdiff1d(nearby, nbr, assume_unique=True)
    pts = part.samples_of(foreign)
    if pts.shape[0]:
        radius = min(radius, float(np.min(np.linalg.norm(pts - center, axis=1))))
    return radius


def estimate_R_D(part: Partition) -> float:
    """1.1 * max over boundary cells of rho / (largest inscribed ball of O_xi)."""
    boundary = np.flatnonzero(part.is_boundary)
    if boundary.size == 0:
        return 1.0
    worst = 0.0
    for i in boundary:
        nbr = neighbor_set(part, int(i))
        rho = float(part.rho[i])
        best = 0.0
        for s in ANCHOR_OFFSETS:
            center = part.anchors[i] + s * rho * part.normals[i]
            best = max(best, inscribed_radius(part, nbr, center))
        if best <= 0.0:
            raise GeneratorError(f"no inscribed ball found in O_xi of boundary cell {int(i)}")
        worst = max(worst, rho / best)
    return R_D_INFLATION * worst


def build_cell(
    part: Partition,
    i: int,
    eps_i: float,
    corrected: bool = True,
    rank_tol: float = DEFAULT_RANK_TOL,
) -> CellGenerator:
    nbr = neighbor_set(part, i, corrected)
    mass = neighbor_masses(part, nbr)
    Q, q_trace = second_moment_Q(part, i, nbr, corrected)
    rho = float(part.rho[i])
    boundary = bool(part.is_boundary[i])
    if corrected:
        b = drift_b(part, i, nbr)
        c, rank_full = corrector_c(design_matrix(part, i, nbr), b, rank_tol)
        q = q_trace
    else:
        b = mass @ (part.centroids[nbr] - part.centroids[i])
        c = np.zeros(nbr.size)
        rank_full = numerical_rank((part.centroids[nbr] - part.centroids[i]).T, rank_tol) == part.dim
        q = rho * rho
    weights = (1.0 - c) * mass
    max_c = float(np.max(np.abs(c))) if c.size else 0.0
    return CellGenerator(
        cell_id=int(i),
        neighbors=nbr,
        mass=mass,
        weights=weights,
        q=q,
        c=c,
        b=b,
        Q=Q,
        anchor_used=_anchor(part, i, corrected).copy(),
        is_boundary=boundary and corrected,
        eps=float(eps_i),
        rho=rho,
        valid={"q_positive": q > 0.0, "c_below_one": max_c < 1.0, "rank_full": bool(rank_full)},
    )


def _is_simple_random_walk(part: Partition, cells: Sequence[CellGenerator], mask: np.ndarray) -> bool:
    if part.kind != "lattice":
        return False
    h = part.spacing
    expected = 1 + 2 * part.dim
    for g in cells:
        if not mask[g.cell_id]:
            continue
        if g.neighbors.size != expected:
            return False
        dist = np.linalg.norm(part.centroids[g.neighbors] - part.centroids[g.cell_id], axis=1)
        if not np.all(np.isclose(dist, 0.0, atol=1e-12 * h) | np.isclose(dist, h, rtol=1e-9)):
            return False
    return True


def build_report(part: Partition, cells: List[CellGenerator], corrected: bool) -> Dict[str, object]:
    d = part.dim
    dom = part.domain
    mask = part.diagnostic_mask
    boundary = part.is_boundary
    eps = np.array([g.eps for g in cells])
    rho = part.rho
    ratio = eps / rho
    max_c = np.array([g.max_abs_c for g in cells])
    q_rho2 = np.array([g.q for g in cells]) / rho ** 2
    valid = np.array([g.is_valid for g in cells])
    rank_full = np.array([g.valid["rank_full"] for g in cells])

    interior = mask & ~boundary
    on_boundary = mask & boundary
    judged = mask

    c1 = threshold_c1(d)
    r_d = estimate_R_D(part) if corrected else 1.0
    c2 = None
    if corrected and np.any(boundary):
        try:
            c2 = threshold_c2(d, r_d)
        except ThresholdError as e:
            logger.warning("Warning: boundary threshold unusable: %s", e)

    def _max(values, sel):
        return float(np.max(values[sel])) if np.any(sel) else 0.0

    def _min(values, sel):
        return float(np.min(values[sel])) if np.any(sel) else math.inf

    stats_interior = interior & valid & rank_full
    stats_boundary = on_boundary & valid & rank_full
    alpha = getattr(dom, "alpha", 1.0)
    c_interior = max_c * rho / np.maximum(eps, 1e-300)
    c_boundary = max_c / (ratio + rho ** alpha)
    lam_q = np.array(
        [min_quadratic_form(g.Q) / g.rho ** 2 if interior[g.cell_id] else math.inf for g in cells]
    )

    min_q = _min(q_rho2, judged)
    if np.any(interior):
        max_ratio_interior = float(np.max(ratio[interior]))
    else:
        max_ratio_interior = math.nan
        logger.warning("Warning: no interior cells at n=%d; interior eps/rho is undefined", part.level)
    max_abs_c = _max(max_c, judged)
    max_ratio_boundary = _max(ratio, on_boundary)
    holds = bool(min_q > 0.0 and max_abs_c < 1.0)
    inside = np.ones(part.n_cells, dtype=bool)
    if dom.bounded:
        inside = dom.signed_distance(part.centroids) >= -dom.tolerance
    report = {
        "level": part.level,
        "n_cells": part.n_cells,
        "corrected": corrected,
        "max_eps_rho_interior": max_ratio_interior,
        "max_eps_rho_boundary": max_ratio_boundary,
        "max_abs_c": max_abs_c,
        "min_q_rho2": min_q,
        "min_lambda_Q_rho2": _min(lam_q, interior & valid),
        "c1": c1,
        "c2": c2,
        "R_D": r_d,
        "alpha": alpha,
        "lipschitz_only": bool(getattr(dom, "lipschitz_only", False)),
        "validity_holds": holds,
        "rho_positive": bool(np.min(rho) > 0.0),
        "centroids_in_domain": bool(np.all(inside)),
        # NaN compares False, so a level without interior cells fails
        "condition_interior_eps": bool(max_ratio_interior <= c1),
        "condition_boundary_eps": bool(not np.any(on_boundary) or (c2 is not None and max_ratio_boundary <= c2)),
        "corrector_ratio_interior": _max(c_interior, stats_interior),
        "corrector_ratio_boundary": _max(c_boundary, stats_boundary),
        "n_invalid": int(np.count_nonzero(~valid & judged)),
        "n_rank_deficient": int(np.count_nonzero(~rank_full)),
        "n_absorbing": int(sum(1 for g in cells if g.is_absorbing)),
        "n_boundary": int(np.count_nonzero(boundary)),
        "is_simple_random_walk": _is_simple_random_walk(part, cells, mask),
        "laplacian_factor": 0.5 if corrected else 0.5 / (d + 2),
    }
    return report


def _worker_count(threads: Optional[int], jobs: int) -> int:
    if threads is None:
        threads = min(8, os.cpu_count() or 1)
    return max(1, min(int(threads), jobs))


def assemble(
    part: Partition,
    corrected: bool = True,
    threads: Optional[int] = None,
    rank_tol: float = DEFAULT_RANK_TOL,
) -> GeneratorTable:
    """Build every cell generator and the global validity report.

    ``corrected=False`` builds the plain neighbor-average walk: anchors at the
    centroid, no corrector and time scale rho^2. It approximates
    Delta / (2 (d + 2)) in the interior and serves as a baseline.
    """
    if not part.has_scales:
        raise ScaleError("assemble needs delta and rho to be assigned")
    bad = part.is_boundary & (part.rho <= part.delta)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise ScaleError(
            f"rho must exceed delta on boundary cells: cell {i} has rho={part.rho[i]:g} <= delta={part.delta[i]:g}"
        )
    if getattr(part.domain, "lipschitz_only", False):
        logger.warning("Warning: %s has a Lipschitz boundary only; bounds are reported heuristically", part.domain.kind)

    eps = epsilons(part)

    def run(i: int) -> CellGenerator:
        try:
            return build_cell(part, i, eps[i], corrected, rank_tol)
        except Exception as e:
            logger.error("Error assembling cell %d: %s", i, e)
            raise

    workers = _worker_count(threads, part.n_cells)
    ids = range(part.n_cells)
    if workers <= 1:
        cells = [run(i) for i in ids]
    else:
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="GeneratorWorker") as executor:
            cells = list(executor.map(run, ids))

    report = build_report(part, cells, corrected)
    if report["n_invalid"]:
        logger.warning("Warning: %d cell(s) violate q > 0 or |c| < 1", report["n_invalid"])
    if report["n_rank_deficient"]:
        logger.info("%d cell(s) have a rank-deficient A", report["n_rank_deficient"])
    logger.info(
        "assembled %s generator at n=%d: min q/rho^2=%.4g, max|c|=%.4g, holds=%s",
        "corrected" if corrected else "uncorrected",
        part.level,
        report["min_q_rho2"],
        report["max_abs_c"],
        report["validity_holds"],
    )
    return GeneratorTable(cells=cells, report=report, corrected=corrected, level=part.level)


CellFunction = Union[Callable[[int], float], Sequence[float], np.ndarray]


def _value(f: CellFunction, i: int) -> float:
    return float(f(i)) if callable(f) else float(f[i])


def apply(table: GeneratorTable, f: CellFunction, i: int) -> float:
    """(1/q) * sum over neighbors of (f(eta) - f(xi)) * w(xi, eta)."""
    g = table.cell(i)
    if not g.is_valid:
        raise GeneratorError(f"cell {i} has an invalid generator (flags {g.valid})")
    fx = _value(f, i)
    diffs = np.array([_value(f, int(j)) - fx for j in g.neighbors])
    return float(diffs @ g.weights) / g.q


def apply_all(table: GeneratorTable, values) -> np.ndarray:
    """L applied to a vector of cell values; NaN on invalid cells."""
    values = np.asarray(values, dtype=float)
    out = np.full(table.n_cells, np.nan)
    for g in table.cells:
        if g.is_valid:
            out[g.cell_id] = float((values[g.neighbors] - values[g.cell_id]) @ g.weights) / g.q
    return out


def edge_rows(table: GeneratorTable):
    """``(from, to, weight)`` for every neighbor pair, the cell itself included."""
    for g in table.cells:
        for j, w in zip(g.neighbors.tolist(), g.weights.tolist()):
            yield g.cell_id, j, w


def cell_rows(table: GeneratorTable):
    for g in table.cells:
        yield {
            "cell": g.cell_id,
            "q": g.q,
            "abs_b": float(np.linalg.norm(g.b)),
            "max_abs_c": g.max_abs_c,
            "eps": g.eps,
            "rho": g.rho,
            "boundary": int(g.is_boundary),
            "q_positive": int(g.valid["q_positive"]),
            "c_below_one": int(g.valid["c_below_one"]),
            "rank_full": int(g.valid["rank_full"]),
        }
