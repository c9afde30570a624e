from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, List

import numpy as np
from scipy import sparse


@dataclass(frozen=True)
class CellGenerator:
    """Per-cell rates of the corrected generator.

    ``weights[j] = (1 - c[j]) * mass[j]`` where ``mass[j] = m(eta_j) / m(O_xi)``.
    The cell itself is kept in ``neighbors``; it contributes nothing to L.
    """

    cell_id: int
    neighbors: np.ndarray
    mass: np.ndarray
    weights: np.ndarray
    q: float
    c: np.ndarray
    b: np.ndarray
    Q: np.ndarray
    anchor_used: np.ndarray
    is_boundary: bool
    eps: float
    rho: float
    valid: Dict[str, bool] = field(default_factory=dict)

    @property
    def is_valid(self) -> bool:
        return bool(self.valid.get("q_positive")) and bool(self.valid.get("c_below_one"))

    @property
    def is_absorbing(self) -> bool:
        return bool(np.all(self.neighbors == self.cell_id))

    @property
    def max_abs_c(self) -> float:
        return float(np.max(np.abs(self.c))) if self.c.size else 0.0

    def off_diagonal(self):
        """(neighbor ids, weights) with the cell itself removed."""
        keep = self.neighbors != self.cell_id
        return self.neighbors[keep], self.weights[keep]


@dataclass
class GeneratorTable:
    """All cell generators of one level plus the global validity report."""

    cells: List[CellGenerator]
    report: Dict[str, Any] = field(default_factory=dict)
    corrected: bool = True
    level: int = 0

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def condition_holds(self) -> bool:
        return bool(self.report.get("validity_holds", False))

    def cell(self, i: int) -> CellGenerator:
        return self.cells[i]

    @cached_property
    def q(self) -> np.ndarray:
        return np.array([g.q for g in self.cells])

    @cached_property
    def jump_rates(self) -> np.ndarray:
        """lambda(xi) = sum of off-diagonal weights / q; zero for absorbing or invalid cells."""
        out = np.zeros(self.n_cells)
        for g in self.cells:
            _, w = g.off_diagonal()
            if g.is_valid and w.size:
                out[g.cell_id] = float(np.sum(w)) / g.q
        return out

    @cached_property
    def jump_csr(self):
        """CSR arrays ``(indptr, targets, cumulative probabilities)`` of the jump chain."""
        indptr = np.zeros(self.n_cells + 1, dtype=np.int64)
        targets, cums = [], []
        for g in self.cells:
            nbr, w = g.off_diagonal()
            total = float(np.sum(w)) if w.size else 0.0
            if g.is_valid and total > 0.0:
                cum = np.cumsum(w) / total
                cum[-1] = 1.0
            else:
                nbr, cum = nbr[:0], np.empty(0)
            targets.append(nbr.astype(np.int64))
            cums.append(cum)
            indptr[g.cell_id + 1] = nbr.size
        indptr = np.cumsum(indptr)
        flat_t = np.concatenate(targets) if targets else np.empty(0, dtype=np.int64)
        flat_c = np.concatenate(cums) if cums else np.empty(0)
        return indptr, flat_t, flat_c

    def rate_matrix(self) -> sparse.csr_matrix:
        """Sparse generator matrix: off-diagonal w/q, rows summing to zero."""
        rows, cols, vals = [], [], []
        for g in self.cells:
            nbr, w = g.off_diagonal()
            if not g.is_valid or not w.size:
                continue
            rates = w / g.q
            rows.append(np.full(nbr.size + 1, g.cell_id))
            cols.append(np.concatenate([nbr, [g.cell_id]]))
            vals.append(np.concatenate([rates, [-np.sum(rates)]]))
        n = self.n_cells
        if not rows:
            return sparse.csr_matrix((n, n))
        mat = sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )
        return mat.tocsr()
