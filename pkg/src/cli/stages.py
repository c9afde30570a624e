"""Pipeline stages: partition, generator, simulate and diagnose.

Each stage reads the artifacts of the previous one from the level
directories (or takes them in memory when run end to end) and writes its
own. Random streams are keyed by stage and level size, so running a subset
of levels reproduces the same files as a full run.
"""

import logging
import os
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from src.models.generator_table import GeneratorTable
from src.models.partition import Partition
from src.models.rbm_config import RbmConfig
from src.models.run_config import RunConfig
from src.utils import artifacts, diagnostics, neumann
from src.utils.artifacts import Header
from src.utils.chain import simulate_replicas, trajectory_rows
from src.utils.errors import ArtifactError, DomainError, SimulationError
from src.utils.generator import assemble, cell_rows, edge_rows, threshold_c1
from src.utils.geometry import Domain, boundary_grid, describe, domain_from_spec, optional_window
from src.utils.partition import (
    assign_scales,
    build_level,
    boundary_constant,
    calibrate_k_a,
    default_scales,
    diameter_fit,
    level_spacing,
    scale_schedule_check,
)
from src.utils.reference import reference_marginals
from src.utils.rng import (
    STAGE_CHAIN,
    STAGE_DIAGNOSTICS,
    STAGE_PARTITION,
    STAGE_REFERENCE,
    STAGE_SITES,
    STAGE_UNIFORM,
    make_stream,
)

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["level", "metric", "value", "bound", "sigma"]
# trajectories.csv keeps full jump records for the first few replicas only
TRAJECTORY_REPLICAS = 16
MOMENT_SAMPLES = 100_000
SYMDIFF_RADII = (0.2, 0.1, 0.05)
SYMDIFF_SAMPLES = 100_000
PVALUE_LEVEL = 0.05

# substream tags under STAGE_DIAGNOSTICS
TAG_CONSISTENCY = 0
TAG_HAUSDORFF = 1
TAG_MARGINALS = 2
TAG_STATIONARITY = 3
TAG_MOMENTS = 4
TAG_SYMDIFF = 5

Level = Tuple[Partition, GeneratorTable]


@dataclass
class StageContext:
    """Validated run config plus the CLI's choice of command and levels."""

    run: RunConfig
    command: str
    levels: List[int]

    @cached_property
    def domain(self) -> Domain:
        return domain_from_spec(self.run.domain)

    @cached_property
    def window(self):
        return optional_window(self.run.window, self.domain.dim)

    @property
    def region(self) -> Domain:
        """Where cells live: the lattice window for whole-space runs, D otherwise."""
        return self.window if self.window is not None else self.domain

    @property
    def threads(self) -> Optional[int]:
        return self.run.threads

    @property
    def out_dir(self) -> str:
        return self.run.output_directory

    def header(self) -> Header:
        return Header(command=self.command, config_hash=self.run.hash, seed=self.run.seed)

    def level_dir(self, n: int) -> str:
        return artifacts.level_dir(self.out_dir, n)

    def stream(self, stage: int, n: int, *tags: int) -> np.random.Generator:
        return make_stream(self.run.seed, stage, n, *tags)


def _cell(value: Any):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    if isinstance(value, np.generic):
        return value.item()
    return value


def start_point(ctx: StageContext) -> np.ndarray:
    """Configured start, or the middle of the region's bounding box."""
    if ctx.run.start is not None:
        return np.asarray(ctx.run.start, dtype=float)
    lo, hi = ctx.region.bounding_box()
    return 0.5 * (np.asarray(lo, dtype=float) + np.asarray(hi, dtype=float))


# -- partition --------------------------------------------------------------
def build_partition(ctx: StageContext, n: int) -> Partition:
    def make_rng(tag: int) -> np.random.Generator:
        return ctx.stream(STAGE_SITES if tag == 0 else STAGE_PARTITION, n)

    run = ctx.run
    return build_level(
        run.partition_kind,
        ctx.domain,
        n,
        make_rng,
        mc_per_cell=run.mc_per_cell,
        window=ctx.window,
        quadrature_per_axis=run.quadrature_per_axis,
        threads=ctx.threads,
    )


def cmd_partition(ctx: StageContext) -> Dict[int, Partition]:
    """Build and save the partition of every selected level."""
    logger.info("partitioning %s (%s cells)", describe(ctx.domain), ctx.run.partition_kind)
    parts = {}
    for n in ctx.levels:
        part = build_partition(ctx, n)
        artifacts.save_partition(part, ctx.level_dir(n), ctx.header())
        logger.info("n=%d: %d cells, spacing %.4g, max radius bound %.4g", n, part.n_cells, part.spacing,
                    part.max_radius_bound)
        parts[n] = part
    return parts


# -- generator --------------------------------------------------------------
def _partition_for(ctx: StageContext, n: int, parts: Dict[int, Partition]) -> Partition:
    if n in parts:
        return parts[n]
    try:
        return artifacts.load_partition(ctx.level_dir(n))
    except ArtifactError:
        logger.info("rebuilding partition n=%d for calibration", n)
        return build_partition(ctx, n)


def resolve_scales(ctx: StageContext, parts: Dict[int, Partition]) -> Dict[int, Tuple[float, float, Dict[str, Any]]]:
    """(a_n, b_n, recorded constants) per selected level."""
    scales = ctx.run.scales
    rule = scales["rule"]
    out: Dict[int, Tuple[float, float, Dict[str, Any]]] = {}
    if rule == "explicit":
        for n in ctx.levels:
            idx = ctx.run.levels.index(n)
            out[n] = (float(scales["a"][idx]), float(scales["b"][idx]), {"rule": rule})
        return out
    if rule == "lattice":
        for n in ctx.levels:
            h = parts[n].spacing
            out[n] = (
                float(scales["multiple"]) * h,
                float(scales["boundary_multiple"]) * h,
                {"rule": rule, "multiple": scales["multiple"], "boundary_multiple": scales["boundary_multiple"]},
            )
        return out

    a_exp = float(scales["a_exponent"])
    b_exp = float(scales["b_exponent"])
    extra: Dict[str, Any] = {"rule": rule, "a_exponent": a_exp, "b_exponent": b_exp}
    k_b = scales["k_b"]
    if k_b == "auto":
        coarsest = min(ctx.run.levels)
        h0 = level_spacing(ctx.run.partition_kind, coarsest, ctx.region.dim)
        k_b = boundary_constant(ctx.region, h0, float(scales["boundary_cap"]), b_exp)
        extra["boundary_cap"] = float(scales["boundary_cap"])
    extra["k_b"] = float(k_b)
    k_a = scales["k_a"]
    if k_a == "auto":
        cal = scales.get("calibration_level") or max(ctx.run.levels)
        part = _partition_for(ctx, cal, parts)
        target = float(scales["target_fraction"]) * threshold_c1(part.dim)
        b_cal = float(k_b) * part.spacing ** b_exp
        k_a = calibrate_k_a(part, target, b_cal, a_exp)
        extra.update({"calibration_level": cal, "calibration_target": target})
    extra["k_a"] = float(k_a)
    for n in ctx.levels:
        a_n, b_n = default_scales(parts[n].spacing, float(k_a), float(k_b), a_exp, b_exp)
        out[n] = (a_n, b_n, dict(extra))
    return out


def validity_rows(part: Partition, table: GeneratorTable):
    report = table.report
    bounds = {
        "min_q_rho2": 0.0,
        "max_abs_c": 1.0,
        "max_eps_rho_interior": report.get("c1"),
        "max_eps_rho_boundary": report.get("c2"),
    }
    for key in sorted(report):
        value = report[key]
        if value is None or isinstance(value, str) or key == "level":
            continue
        yield table.level, key, _cell(value), _cell(bounds.get(key)), ""
    for key in sorted(part.level_params):
        value = part.level_params[key]
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            yield table.level, f"scale.{key}", value, "", ""


def cmd_generator(ctx: StageContext, parts: Optional[Dict[int, Partition]] = None) -> Dict[int, Level]:
    """Assign scales, assemble the corrected generator and save it with its validity report."""
    if parts is None:
        parts = {n: artifacts.load_partition(ctx.level_dir(n)) for n in ctx.levels}
    scales = resolve_scales(ctx, parts)
    levels: Dict[int, Level] = {}
    for n in ctx.levels:
        a_n, b_n, extra = scales[n]
        part = assign_scales(parts[n], a_n, b_n)
        part.level_params.update(extra)
        table = assemble(part, corrected=True, threads=ctx.threads)
        directory = ctx.level_dir(n)
        header = ctx.header()
        artifacts.save_scales(part, directory, header)
        artifacts.save_generator(table, directory, header, edge_rows(table), cell_rows(table))
        artifacts.write_csv(os.path.join(directory, "validity.csv"), header, REPORT_COLUMNS,
                            validity_rows(part, table))
        if not table.condition_holds:
            logger.warning(
                "Warning: n=%d violates the validity condition (min q/rho^2=%.4g, max|c|=%.4g)",
                n, table.report["min_q_rho2"], table.report["max_abs_c"],
            )
        levels[n] = (part, table)
    return levels


def load_level(ctx: StageContext, n: int) -> Level:
    directory = ctx.level_dir(n)
    return artifacts.load_scaled_partition(directory), artifacts.load_generator(directory)


# -- simulate ---------------------------------------------------------------
def marginal_columns(d: int) -> List[str]:
    return ["time", "replica", "cell"] + [f"x{j + 1}" for j in range(d)]


def cmd_simulate(ctx: StageContext, levels: Optional[Dict[int, Level]] = None) -> Dict[int, np.ndarray]:
    """Chain replicas from the start cell; writes trajectories and marginals.

    Returns the chain marginals per level, shape ``(len(times), replicas, d)``.
    """
    if levels is None:
        levels = {n: load_level(ctx, n) for n in ctx.levels}
    run = ctx.run
    x0 = start_point(ctx)
    times = np.asarray(run.marginal_times, dtype=float)
    out: Dict[int, np.ndarray] = {}
    for n, (part, table) in levels.items():
        start = int(part.locate(x0)[0])
        trajectories = simulate_replicas(
            table, start, run.horizon, run.replicas, run.seed, key=(STAGE_CHAIN, n), threads=ctx.threads
        )
        absorbed = sum(1 for traj in trajectories if traj.absorbed)
        if absorbed:
            logger.warning("Warning: %d of %d replicas were absorbed at n=%d", absorbed, run.replicas, n)
        header = ctx.header()
        directory = ctx.level_dir(n)
        d = part.dim

        def jump_records():
            for r, traj in enumerate(trajectories[:TRAJECTORY_REPLICAS]):
                yield from trajectory_rows(traj, r, part.centroids)

        artifacts.write_csv(os.path.join(directory, "trajectories.csv"), header,
                            ["replica", "time", "cell"] + [f"x{j + 1}" for j in range(d)], jump_records())
        cells = np.stack([np.atleast_1d(traj.cell_at(times)) for traj in trajectories], axis=1).reshape(
            times.size, run.replicas
        )

        def marginal_records():
            for k, t in enumerate(times.tolist()):
                for r, cell in enumerate(cells[k].tolist()):
                    yield (t, r, cell, *part.centroids[cell].tolist())

        artifacts.write_csv(os.path.join(directory, "marginals.csv"), header, marginal_columns(d), marginal_records())
        jumps = np.array([traj.n_jumps for traj in trajectories])
        logger.info("n=%d: %d replicas from cell %d, mean %.1f jumps", n, run.replicas, start, float(jumps.mean()))
        out[n] = part.centroids[cells]
    return out


def load_marginals(ctx: StageContext, n: int, d: int) -> np.ndarray:
    """Read marginals.csv back into shape ``(len(times), replicas, d)``."""
    _, columns, rows = artifacts.read_csv(os.path.join(ctx.level_dir(n), "marginals.csv"))
    if columns != marginal_columns(d):
        raise ArtifactError(f"unexpected marginals.csv columns {columns}")
    times = np.asarray(ctx.run.marginal_times, dtype=float)
    if not rows:
        return np.empty((times.size, 0, d))
    data = np.array([[float(v) for v in row] for row in rows])
    replicas = len(rows) // max(times.size, 1)
    if replicas * times.size != len(rows) or not np.allclose(np.unique(data[:, 0]), np.unique(times)):
        raise ArtifactError("marginals.csv does not match the configured marginal times; rerun simulate")
    return data[:, 3:].reshape(times.size, replicas, d)


# -- diagnose ---------------------------------------------------------------
def _consistency(ctx: StageContext, n: int, part: Partition, table: GeneratorTable, result: Dict[str, Any]):
    try:
        family = neumann.checked_test_functions(ctx.domain, ctx.window)
    except DomainError as e:
        logger.warning("Warning: skipping consistency at n=%d: %s", n, e)
        return
    rng = ctx.stream(STAGE_DIAGNOSTICS, n, TAG_CONSISTENCY)
    baseline = None
    if ctx.run.toggle("uncorrected_baseline"):
        baseline = assemble(part, corrected=False, threads=ctx.threads)
    for fn in family:
        rep = diagnostics.consistency_error(table, part, fn, rng)
        result["consistency"][fn.name] = rep
        result["rows"] += [
            (n, f"consistency.{fn.name}.sup_interior", rep.sup_interior, "", ""),
            (n, f"consistency.{fn.name}.sup_boundary", rep.sup_boundary, "", ""),
            (n, f"consistency.{fn.name}.fitted_interior", rep.fitted_interior, "", ""),
            (n, f"consistency.{fn.name}.fitted_boundary", rep.fitted_boundary, "", ""),
        ]
        if baseline is not None:
            base = diagnostics.consistency_error(baseline, part, fn, rng)
            result["baseline"][fn.name] = base
            result["rows"].append((n, f"baseline.{fn.name}.sup", base.sup, "", ""))


def _reference(ctx: StageContext) -> Optional[np.ndarray]:
    run = ctx.run
    if not run.marginal_times:
        return None
    try:
        cfg = RbmConfig(domain=ctx.domain, horizon=run.horizon, dt=run.reference_dt)
        return reference_marginals(
            cfg, start_point(ctx), run.marginal_times, run.replicas, run.seed, key=(STAGE_REFERENCE,),
            threads=ctx.threads,
        )
    except (DomainError, SimulationError) as e:
        logger.warning("Warning: no reference marginals: %s", e)
        return None


def _marginals(ctx: StageContext, n: int, chain: np.ndarray, reference: np.ndarray, result: Dict[str, Any]):
    rng = ctx.stream(STAGE_DIAGNOSTICS, n, TAG_MARGINALS)
    permutations = int(ctx.run.diagnostics["permutations"])
    for k, t in enumerate(ctx.run.marginal_times):
        dist = diagnostics.two_sample_distance(chain[k], reference[k])
        test = diagnostics.permutation_test(chain[k], reference[k], rng, permutations)
        result["energy"][t] = dist["energy"]
        result["pvalue"][t] = test["pvalue"]
        result["rows"] += [
            (n, f"energy.t={t:g}", dist["energy"], "", ""),
            (n, f"pvalue.t={t:g}", test["pvalue"], PVALUE_LEVEL, ""),
        ]
        if dist["ks"] is not None:
            result["rows"].append((n, f"ks.t={t:g}", dist["ks"], "", ""))


def _stationarity(ctx: StageContext, n: int, part: Partition, table: GeneratorTable, result: Dict[str, Any]):
    run = ctx.run
    if not ctx.domain.bounded:
        logger.warning("Warning: no stationarity check on an unbounded domain")
        return
    if run.stationary_horizon <= 0:
        logger.warning("Warning: stationarity check needs simulation.stationary_horizon > 0")
        return
    start = int(part.locate(start_point(ctx))[0])
    trajectories = simulate_replicas(
        table, start, run.stationary_horizon, run.replicas, run.seed, key=(STAGE_CHAIN, n, 1), threads=ctx.threads
    )
    ends = part.centroids[[traj.cell_at(run.stationary_horizon) for traj in trajectories]]
    uniform = ctx.region.sample_uniform(run.replicas, ctx.stream(STAGE_UNIFORM, n))
    rng = ctx.stream(STAGE_DIAGNOSTICS, n, TAG_STATIONARITY)
    test = diagnostics.permutation_test(ends, uniform, rng, int(run.diagnostics["permutations"]))
    result["stationarity"] = test["pvalue"]
    result["rows"] += [
        (n, "stationarity.energy", diagnostics.two_sample_distance(ends, uniform)["energy"], "", ""),
        (n, "stationarity.pvalue", test["pvalue"], PVALUE_LEVEL, ""),
    ]


def _oracle_rows(ctx: StageContext, levels: Dict[int, Level]):
    """Level-independent checks: half-ball moments, boundary flatness, scale limits."""
    rows = []
    d = ctx.domain.dim
    if ctx.run.toggle("moments"):
        check = diagnostics.halfball_moment_check(d, 1.0, MOMENT_SAMPLES, ctx.stream(STAGE_DIAGNOSTICS, 0, TAG_MOMENTS))
        rows += [
            (0, "halfball.first_moment_error", check["first_moment_error"], "", check["first_moment_sigma"]),
            (0, "halfball.first_moment_z", check["first_moment_z"], 3.0, ""),
            (0, "halfball.second_moment_error", check["second_moment_error"], "", check["second_moment_sigma"]),
            (0, "halfball.second_moment_z", check["second_moment_z"], 3.0, ""),
        ]
    if ctx.run.toggle("symdiff") and ctx.domain.bounded:
        points, _ = boundary_grid(ctx.domain, 8)
        rng = ctx.stream(STAGE_DIAGNOSTICS, 0, TAG_SYMDIFF)
        for r in SYMDIFF_RADII:
            check = diagnostics.boundary_symdiff_check(ctx.domain, points[0], r, SYMDIFF_SAMPLES, rng)
            rows.append((0, f"symdiff.r={r:g}.ratio", check["ratio"], "", check["ratio_sigma"]))
    params = [part.level_params for part, _ in levels.values() if part.level_params]
    if params:
        schedule = scale_schedule_check(params)
        for k, n in enumerate(schedule["n"]):
            rows += [
                (n, "schedule.spacing_over_a", schedule["spacing_over_a"][k], "", ""),
                (n, "schedule.a_over_b", schedule["a_over_b"][k], "", ""),
                (n, "schedule.b", schedule["b"][k], "", ""),
            ]
        for key in ("spacing_over_a_decreasing", "a_over_b_decreasing", "b_decreasing"):
            rows.append((0, f"schedule.{key}", int(schedule[key]), "", ""))
    return rows


def cmd_diagnose(
    ctx: StageContext,
    levels: Optional[Dict[int, Level]] = None,
    marginals: Optional[Dict[int, np.ndarray]] = None,
) -> Dict[str, Any]:
    """Run the toggled diagnostics on every selected level and write the report tables.

    Returns ``{"levels": {n: per-level results}, "trackers": ..., "oracles": rows}``.
    """
    if levels is None:
        levels = {n: load_level(ctx, n) for n in ctx.levels}
    run = ctx.run
    reference = _reference(ctx) if run.toggle("marginals") else None
    per_level: Dict[int, Dict[str, Any]] = {}
    for n, (part, table) in levels.items():
        result: Dict[str, Any] = {
            "report": table.report,
            "consistency": {},
            "baseline": {},
            "energy": {},
            "pvalue": {},
            "stationarity": None,
            "hausdorff": None,
            "rows": [],
        }
        coverage = diagnostics.coverage_check(part)
        result["rows"] += [
            (n, "coverage.relative_error", coverage["relative_error"], "", coverage["sigma"] / coverage["domain_measure"]),
            (n, "coverage.max_quadrature_mismatch", coverage["max_quadrature_mismatch"], "", ""),
        ]
        if part.kind == "voronoi":
            result["rows"].append((n, "diameter_fit", diameter_fit(part), "", ""))
        if run.toggle("consistency"):
            _consistency(ctx, n, part, table, result)
        if run.toggle("hausdorff"):
            check = diagnostics.hausdorff_check(
                part, int(run.diagnostics["pairs"]), ctx.stream(STAGE_DIAGNOSTICS, n, TAG_HAUSDORFF)
            )
            result["hausdorff"] = check
            result["rows"] += [
                (n, "hausdorff.max_excess", check["max_excess"], 0.0, ""),
                (n, "hausdorff.violations", check["violations"], 0, ""),
            ]
        if run.toggle("sandwich"):
            check = diagnostics.sandwich_check(part, table)
            result["rows"] += [(n, f"sandwich.{k}", v, 0, "") for k, v in check.items()]
        if reference is not None:
            chain = marginals[n] if marginals is not None else load_marginals(ctx, n, part.dim)
            _marginals(ctx, n, chain, reference, result)
        if run.toggle("stationarity"):
            _stationarity(ctx, n, part, table, result)
        per_level[n] = result

    trackers = None
    if run.toggle("trackers"):
        trackers = diagnostics.bound_trackers([levels[n] for n in sorted(levels)])
        for row in trackers["levels"]:
            n = row["level"]
            per_level[n]["rows"] += [
                (n, "tracker.q_gap", row["q_gap"], 1.0, ""),
                (n, "tracker.q_gap_violations", row["q_gap_violations"], 0, ""),
                (n, "tracker.q_fine", row["q_fine"], "", ""),
                (n, "tracker.q_shape", row["q_shape"], "", ""),
            ]

    header = ctx.header()
    for n, result in per_level.items():
        rows = ([_cell(v) for v in row] for row in result["rows"])
        artifacts.write_csv(os.path.join(ctx.level_dir(n), "diagnostics.csv"), header, REPORT_COLUMNS, rows)
    oracles = _oracle_rows(ctx, levels)
    artifacts.write_csv(os.path.join(ctx.out_dir, "oracles.csv"), header, REPORT_COLUMNS,
                        ([_cell(v) for v in row] for row in oracles))
    return {"levels": per_level, "trackers": trackers, "oracles": oracles}
