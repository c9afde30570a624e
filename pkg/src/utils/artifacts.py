"""On-disk artifacts: CSV tables with metadata headers and .npy companions.

Every CSV starts with ``# key: value`` lines (tool, version, command,
config hash, seed, RNG) followed by a header row.
"""

import csv
import json
import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from src import __version__
from src.models.generator_table import CellGenerator, GeneratorTable
from src.models.partition import Partition
from src.utils.errors import ArtifactError
from src.utils.geometry import domain_from_spec, optional_window
from src.utils.rng import RNG_NAME

logger = logging.getLogger(__name__)

TOOL = "rbm-chains"

PARTITION_ARRAYS = (
    "sites",
    "centroids",
    "measures",
    "measure_sigma",
    "radius_bounds",
    "covariances",
    "samples",
    "sample_weights",
    "quad_offsets",
)
SCALE_ARRAYS = ("delta", "rho", "is_boundary", "anchors", "normals", "diagnostic_mask")

CELLS_COLUMNS = ["cell", "measure", "measure_sigma", "radius_bound", "is_boundary"]


@dataclass(frozen=True)
class Header:
    command: str
    config_hash: str
    seed: int

    def lines(self) -> List[str]:
        return [
            f"# tool: {TOOL}",
            f"# version: {__version__}",
            f"# command: {self.command}",
            f"# config_hash: {self.config_hash}",
            f"# seed: {self.seed}",
            f"# rng: {RNG_NAME}",
        ]


def level_dir(out_dir: str, level: int) -> str:
    return os.path.join(out_dir, f"level-{level}")


def write_csv(path: str, header: Header, columns: Sequence[str], rows: Iterable[Sequence[Any]]):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for line in header.lines():
            f.write(line + "\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow(row)
    logger.debug("wrote %s", path)


def read_csv(path: str):
    """(metadata dict, column names, rows as lists of strings)."""
    if not os.path.exists(path):
        raise ArtifactError(f"missing artifact {path}")
    meta: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8", newline="") as f:
        body = []
        for line in f:
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                meta[key.strip()] = value.strip()
            else:
                body.append(line)
    reader = csv.reader(body)
    columns = next(reader, [])
    return meta, columns, list(reader)


def _save_arrays(directory: str, arrays: Dict[str, np.ndarray]):
    os.makedirs(directory, exist_ok=True)
    for name, arr in arrays.items():
        np.save(os.path.join(directory, f"{name}.npy"), np.ascontiguousarray(arr), allow_pickle=False)


def _load_array(directory: str, name: str) -> np.ndarray:
    path = os.path.join(directory, f"{name}.npy")
    if not os.path.exists(path):
        raise ArtifactError(f"missing artifact {path}; run the earlier pipeline stage first")
    return np.load(path, allow_pickle=False)


def _write_json(path: str, data: Dict[str, Any]):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def _read_json(path: str) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise ArtifactError(f"missing artifact {path}; run the earlier pipeline stage first")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def cell_columns(d: int) -> List[str]:
    return (
        CELLS_COLUMNS
        + [f"site{j + 1}" for j in range(d)]
        + [f"centroid{j + 1}" for j in range(d)]
        + [f"anchor{j + 1}" for j in range(d)]
        + [f"normal{j + 1}" for j in range(d)]
    )


def _maybe(values: np.ndarray) -> List[Any]:
    return ["" if np.isnan(v) else v for v in values]


def write_cells(part: Partition, directory: str, header: Header):
    """cells.csv; is_boundary, anchor and normal stay blank until scales are assigned."""
    scaled = part.delta is not None
    rows = (
        [
            i,
            part.measures[i],
            part.measure_sigma[i],
            part.radius_bounds[i],
            int(part.is_boundary[i]) if scaled else "",
            *part.sites[i],
            *part.centroids[i],
            *_maybe(part.anchors[i]),
            *_maybe(part.normals[i]),
        ]
        for i in range(part.n_cells)
    )
    write_csv(os.path.join(directory, "cells.csv"), header, cell_columns(part.dim), rows)


def save_partition(part: Partition, directory: str, header: Header):
    """cells.csv plus the raw arrays under ``partition/``."""
    write_cells(part, directory, header)
    arrays = {name: getattr(part, name) for name in PARTITION_ARRAYS}
    _save_arrays(os.path.join(directory, "partition"), arrays)
    _write_json(
        os.path.join(directory, "partition", "meta.json"),
        {
            "kind": part.kind,
            "level": part.level,
            "spacing": part.spacing,
            "domain": part.domain.to_spec(),
            "window": None if part.window is None else {"lo": part.window.lo.tolist(), "hi": part.window.hi.tolist()},
        },
    )


def load_partition(directory: str) -> Partition:
    src = os.path.join(directory, "partition")
    meta = _read_json(os.path.join(src, "meta.json"))
    dom = domain_from_spec(meta["domain"])
    arrays = {name: _load_array(src, name) for name in PARTITION_ARRAYS}
    return Partition(
        domain=dom,
        kind=meta["kind"],
        level=int(meta["level"]),
        spacing=float(meta["spacing"]),
        window=optional_window(meta["window"], dom.dim),
        **arrays,
    )


def save_scales(part: Partition, directory: str, header: Optional[Header] = None):
    """Scale arrays under ``generator/``; with a header, cells.csv is rewritten with the boundary columns."""
    dst = os.path.join(directory, "generator")
    _save_arrays(dst, {name: getattr(part, name) for name in SCALE_ARRAYS})
    _write_json(os.path.join(dst, "scales.json"), part.level_params)
    if header is not None:
        write_cells(part, directory, header)


def load_scaled_partition(directory: str) -> Partition:
    part = load_partition(directory)
    src = os.path.join(directory, "generator")
    for name in SCALE_ARRAYS:
        setattr(part, name, _load_array(src, name))
    part.level_params = _read_json(os.path.join(src, "scales.json"))
    return part


def save_generator(table: GeneratorTable, directory: str, header: Header, edges, cells):
    """Edge and cell CSVs plus CSR arrays and the report under ``generator/``."""
    write_csv(os.path.join(directory, "generator_edges.csv"), header, ["from", "to", "weight"], edges)
    cell_list = list(cells)
    columns = list(cell_list[0].keys()) if cell_list else []
    write_csv(
        os.path.join(directory, "generator_cells.csv"), header, columns, ([r[c] for c in columns] for r in cell_list)
    )
    counts = np.array([g.neighbors.size for g in table.cells], dtype=np.int64)
    d = table.cells[0].b.size if table.cells else 0
    arrays = {
        "indptr": np.concatenate([[0], np.cumsum(counts)]).astype(np.int64),
        "neighbors": np.concatenate([g.neighbors for g in table.cells]).astype(np.int64),
        "mass": np.concatenate([g.mass for g in table.cells]),
        "weights": np.concatenate([g.weights for g in table.cells]),
        "c": np.concatenate([g.c for g in table.cells]),
        "q": np.array([g.q for g in table.cells]),
        "b": np.array([g.b for g in table.cells]).reshape(-1, d),
        "Q": np.array([g.Q for g in table.cells]).reshape(-1, d, d),
        "anchor_used": np.array([g.anchor_used for g in table.cells]).reshape(-1, d),
        "is_boundary_used": np.array([g.is_boundary for g in table.cells]),
        "eps": np.array([g.eps for g in table.cells]),
        "rho_used": np.array([g.rho for g in table.cells]),
        "flags": np.array(
            [[g.valid["q_positive"], g.valid["c_below_one"], g.valid["rank_full"]] for g in table.cells], dtype=bool
        ).reshape(-1, 3),
    }
    dst = os.path.join(directory, "generator")
    _save_arrays(dst, arrays)
    _write_json(os.path.join(dst, "report.json"), {"corrected": table.corrected, "level": table.level, **table.report})


def load_generator(directory: str) -> GeneratorTable:
    src = os.path.join(directory, "generator")
    names = ("indptr", "neighbors", "mass", "weights", "c", "q", "b", "Q", "anchor_used",
             "is_boundary_used", "eps", "rho_used", "flags")
    a = {name: _load_array(src, name) for name in names}
    report = _read_json(os.path.join(src, "report.json"))
    cells = []
    for i in range(a["q"].size):
        lo, hi = a["indptr"][i], a["indptr"][i + 1]
        flags = a["flags"][i]
        cells.append(
            CellGenerator(
                cell_id=i,
                neighbors=a["neighbors"][lo:hi],
                mass=a["mass"][lo:hi],
                weights=a["weights"][lo:hi],
                q=float(a["q"][i]),
                c=a["c"][lo:hi],
                b=a["b"][i],
                Q=a["Q"][i],
                anchor_used=a["anchor_used"][i],
                is_boundary=bool(a["is_boundary_used"][i]),
                eps=float(a["eps"][i]),
                rho=float(a["rho_used"][i]),
                valid={"q_positive": bool(flags[0]), "c_below_one": bool(flags[1]), "rank_full": bool(flags[2])},
            )
        )
    corrected = bool(report.pop("corrected", True))
    level = int(report.pop("level", 0))
    report["level"] = level
    return GeneratorTable(cells=cells, report=report, corrected=corrected, level=level)


def write_text(path: str, text: str):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
