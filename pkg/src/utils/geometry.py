"""Geometric oracles for the supported domains.

Four kinds are supported: the whole space, axis-aligned boxes, balls and
star-shaped planar domains whose boundary is a smooth radius function
``r(theta)``. Domain objects are immutable after construction and every
method is reentrant; random sampling takes an explicit generator.

Methods accept a single point of shape ``(d,)`` or a stack ``(N, d)`` and
return a scalar or an array accordingly.
"""

import logging
import math
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, optimize, special

from src.models.boundary_point import BoundaryPoint
from src.utils.errors import DimensionError, DomainError

logger = logging.getLogger(__name__)

# Relative tolerance (times the diameter) for "on the boundary" decisions.
REL_TOL = 1e-10

_RADIAL_GRID = 720


def unit_ball_volume(d: int) -> float:
    """omega_d = pi^(d/2) / Gamma(d/2 + 1)."""
    return float(math.exp(0.5 * d * math.log(math.pi) - special.gammaln(0.5 * d + 1.0)))


def _points(x, dim: int) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise DimensionError(
            f"expected point(s) of dimension {dim}, got shape {np.shape(x)}"
        )
    return arr, single


def _unwrap(values: np.ndarray, single: bool):
    if single:
        v = values[0]
        return v.item() if np.ndim(v) == 0 else v
    return values


class Domain:
    """Common interface; concrete kinds override the ``_``-prefixed hooks."""

    kind = "abstract"
    bounded = True
    # Hoelder exponent of the boundary normal; boxes are only Lipschitz.
    alpha = 1.0
    lipschitz_only = False

    def __init__(self, dim: int):
        if int(dim) < 1:
            raise DomainError(f"dimension must be a positive integer, got {dim}")
        self.dim = int(dim)

    # -- hooks ---------------------------------------------------------
    def _contains(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _signed_distance(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _nearest(self, x: np.ndarray) -> BoundaryPoint:
        raise NotImplementedError

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    @property
    def measure(self) -> float:
        raise NotImplementedError

    @property
    def diameter(self) -> float:
        raise NotImplementedError

    @property
    def inradius(self) -> float:
        """Radius of a ball inscribed in the domain."""
        raise NotImplementedError

    def to_spec(self) -> Dict[str, Any]:
        raise NotImplementedError

    # -- public operations --------------------------------------------
    @property
    def tolerance(self) -> float:
        return REL_TOL * self.diameter

    def contains(self, x):
        """True iff x lies in the open domain."""
        pts, single = _points(x, self.dim)
        return _unwrap(self._contains(pts), single)

    def signed_distance(self, x):
        """Distance to the boundary, positive inside and negative outside."""
        pts, single = _points(x, self.dim)
        return _unwrap(self._signed_distance(pts), single)

    def dist_to_boundary(self, x):
        """Euclidean distance to the boundary for points of the closure."""
        pts, single = _points(x, self.dim)
        sd = self._signed_distance(pts)
        if np.any(sd < -self.tolerance):
            bad = pts[int(np.argmin(sd))]
            raise DomainError(f"point {bad.tolist()} lies outside the closure of the domain")
        return _unwrap(np.maximum(sd, 0.0), single)

    def nearest_boundary_point(self, x) -> BoundaryPoint:
        """A closest boundary point with its inward normal.

        Ties resolve to the lexicographically smallest candidate; the center
        of a ball resolves to the direction of the first basis vector.
        """
        if not self.bounded:
            raise DomainError(f"{self.kind} has no boundary")
        pts, single = _points(x, self.dim)
        if not single:
            raise DimensionError("nearest_boundary_point takes a single point")
        return self._nearest(pts[0])

    def project(self, x):
        """Closest point of the closure (identity on the closure)."""
        pts, single = _points(x, self.dim)
        out = pts.copy()
        outside = self._signed_distance(pts) < 0.0
        for i in np.flatnonzero(outside):
            out[i] = self._nearest(pts[i]).location
        return _unwrap(out, single)

    def sample_uniform(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` i.i.d. uniform points of D by rejection from the bounding box."""
        if not self.bounded:
            raise DomainError("cannot sample uniformly from an unbounded domain")
        n = int(n)
        if n < 0:
            raise ValueError(f"sample count must be non-negative, got {n}")
        out = np.empty((n, self.dim))
        if n == 0:
            return out
        lo, hi = self.bounding_box()
        accept = max(self.measure / float(np.prod(hi - lo)), 1e-3)
        filled = 0
        while filled < n:
            want = n - filled
            draw = int(math.ceil(want / accept * 1.1)) + 16
            cand = lo + (hi - lo) * rng.random((draw, self.dim))
            cand = cand[self._contains(cand)]
            take = min(want, cand.shape[0])
            out[filled:filled + take] = cand[:take]
            filled += take
        return out

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.to_spec()})"


class WholeSpace(Domain):
    kind = "whole-space"
    bounded = False

    def _contains(self, pts):
        return np.ones(pts.shape[0], dtype=bool)

    def _signed_distance(self, pts):
        return np.full(pts.shape[0], np.inf)

    def bounding_box(self):
        return np.full(self.dim, -np.inf), np.full(self.dim, np.inf)

    @property
    def measure(self) -> float:
        return math.inf

    @property
    def diameter(self) -> float:
        return math.inf

    @property
    def inradius(self) -> float:
        return math.inf

    @property
    def tolerance(self) -> float:
        return 0.0

    def project(self, x):
        pts, single = _points(x, self.dim)
        return _unwrap(pts.copy(), single)

    def to_spec(self):
        return {"kind": self.kind, "dim": self.dim}


class Box(Domain):
    kind = "box"
    lipschitz_only = True

    def __init__(self, lo: Sequence[float], hi: Sequence[float]):
        lo_arr = np.asarray(lo, dtype=float).ravel()
        hi_arr = np.asarray(hi, dtype=float).ravel()
        if lo_arr.shape != hi_arr.shape or lo_arr.size == 0:
            raise DomainError("box bounds must be non-empty and of equal length")
        if not np.all(lo_arr < hi_arr):
            raise DomainError(f"box needs lo < hi on every axis, got lo={lo_arr}, hi={hi_arr}")
        super().__init__(lo_arr.size)
        self.lo = lo_arr
        self.hi = hi_arr
        self.lo.setflags(write=False)
        self.hi.setflags(write=False)

    def _contains(self, pts):
        return np.all((pts > self.lo) & (pts < self.hi), axis=1)

    def _signed_distance(self, pts):
        inside = np.min(np.minimum(pts - self.lo, self.hi - pts), axis=1)
        clipped = np.clip(pts, self.lo, self.hi)
        outside = np.linalg.norm(pts - clipped, axis=1)
        return np.where(outside > 0.0, -outside, inside)

    def _nearest(self, x):
        if np.any(x < self.lo) or np.any(x > self.hi):
            loc = np.clip(x, self.lo, self.hi)
            excess = np.maximum(self.lo - x, x - self.hi)
            axis = int(np.argmax(excess))
            normal = np.zeros(self.dim)
            normal[axis] = 1.0 if x[axis] < self.lo[axis] else -1.0
            return BoundaryPoint(loc, normal)
        gaps = np.concatenate([x - self.lo, self.hi - x])
        best = gaps.min()
        tol = max(self.tolerance * 1e-2, 1e-15)
        candidates = []
        for j in np.flatnonzero(gaps <= best + tol):
            axis = int(j % self.dim)
            loc = x.copy()
            normal = np.zeros(self.dim)
            if j < self.dim:
                loc[axis] = self.lo[axis]
                normal[axis] = 1.0
            else:
                loc[axis] = self.hi[axis]
                normal[axis] = -1.0
            candidates.append((tuple(loc), loc, normal))
        candidates.sort(key=lambda c: c[0])
        _, loc, normal = candidates[0]
        return BoundaryPoint(loc, normal)

    def project(self, x):
        pts, single = _points(x, self.dim)
        return _unwrap(np.clip(pts, self.lo, self.hi), single)

    def bounding_box(self):
        return self.lo.copy(), self.hi.copy()

    @property
    def measure(self) -> float:
        return float(np.prod(self.hi - self.lo))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    @property
    def inradius(self) -> float:
        return 0.5 * float(np.min(self.hi - self.lo))

    def to_spec(self):
        return {"kind": self.kind, "lo": self.lo.tolist(), "hi": self.hi.tolist()}


class Ball(Domain):
    kind = "ball"

    def __init__(self, center: Sequence[float], radius: float):
        c = np.asarray(center, dtype=float).ravel()
        if c.size == 0:
            raise DomainError("ball center must be non-empty")
        if not radius > 0:
            raise DomainError(f"ball radius must be positive, got {radius}")
        super().__init__(c.size)
        self.center = c
        self.center.setflags(write=False)
        self.radius = float(radius)

    def _contains(self, pts):
        return np.linalg.norm(pts - self.center, axis=1) < self.radius

    def _signed_distance(self, pts):
        return self.radius - np.linalg.norm(pts - self.center, axis=1)

    def _nearest(self, x):
        offset = x - self.center
        r = float(np.linalg.norm(offset))
        if r <= 1e-15 * self.radius:
            direction = np.zeros(self.dim)
            direction[0] = 1.0
        else:
            direction = offset / r
        return BoundaryPoint(self.center + self.radius * direction, -direction)

    def project(self, x):
        pts, single = _points(x, self.dim)
        offset = pts - self.center
        r = np.linalg.norm(offset, axis=1)
        scale = np.where(r > self.radius, self.radius / np.maximum(r, 1e-300), 1.0)
        return _unwrap(self.center + offset * scale[:, None], single)

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    @property
    def measure(self) -> float:
        return unit_ball_volume(self.dim) * self.radius ** self.dim

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    @property
    def inradius(self) -> float:
        return self.radius

    def to_spec(self):
        return {"kind": self.kind, "center": self.center.tolist(), "radius": self.radius}


class Radial(Domain):
    """Planar star-shaped domain ``{c + s(cos t, sin t) : s < r(t)}``.

    ``r(t) = r0 + sum_k (a_k cos kt + b_k sin kt)``, which is smooth, so the
    boundary is C^{1,1}.
    """

    kind = "radial"

    def __init__(
        self,
        center: Sequence[float],
        r0: float,
        cos_coeffs: Sequence[float] = (),
        sin_coeffs: Sequence[float] = (),
    ):
        c = np.asarray(center, dtype=float).ravel()
        if c.size != 2:
            raise DomainError("radial domains are planar (d = 2)")
        super().__init__(2)
        self.center = c
        self.center.setflags(write=False)
        self.r0 = float(r0)
        self.cos_coeffs = np.asarray(cos_coeffs, dtype=float).ravel()
        self.sin_coeffs = np.asarray(sin_coeffs, dtype=float).ravel()
        grid = np.linspace(0.0, 2.0 * np.pi, 4096, endpoint=False)
        if np.min(self.radius_at(grid)) <= 0.0:
            raise DomainError("radius function must stay positive")
        self.r_max = self.r0 + float(np.sum(np.abs(self.cos_coeffs)) + np.sum(np.abs(self.sin_coeffs)))
        self._measure = float(
            integrate.quad(lambda t: 0.5 * self.radius_at(t) ** 2, 0.0, 2.0 * np.pi, limit=200)[0]
        )
        self._grid = np.linspace(0.0, 2.0 * np.pi, _RADIAL_GRID, endpoint=False)
        self._grid_points = self.boundary_at(self._grid)

    def radius_at(self, theta):
        theta = np.asarray(theta, dtype=float)
        r = np.full(theta.shape, self.r0)
        for k, a in enumerate(self.cos_coeffs, start=1):
            r = r + a * np.cos(k * theta)
        for k, b in enumerate(self.sin_coeffs, start=1):
            r = r + b * np.sin(k * theta)
        return r

    def radius_derivative(self, theta):
        theta = np.asarray(theta, dtype=float)
        dr = np.zeros(theta.shape)
        for k, a in enumerate(self.cos_coeffs, start=1):
            dr = dr - k * a * np.sin(k * theta)
        for k, b in enumerate(self.sin_coeffs, start=1):
            dr = dr + k * b * np.cos(k * theta)
        return dr

    def boundary_at(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        r = self.radius_at(theta)
        return self.center + np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)

    def inward_normal_at(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        r = self.radius_at(theta)
        dr = self.radius_derivative(theta)
        c, s = np.cos(theta), np.sin(theta)
        tangent = np.stack([dr * c - r * s, dr * s + r * c], axis=-1)
        normal = np.stack([-tangent[..., 1], tangent[..., 0]], axis=-1)
        return normal / np.linalg.norm(normal, axis=-1, keepdims=True)

    def _contains(self, pts):
        offset = pts - self.center
        theta = np.arctan2(offset[:, 1], offset[:, 0])
        return np.linalg.norm(offset, axis=1) < self.radius_at(theta)

    def _refine(self, x: np.ndarray, theta0: float) -> Tuple[float, float]:
        h = 2.0 * np.pi / _RADIAL_GRID
        res = optimize.minimize_scalar(
            lambda t: float(np.sum((self.boundary_at(t) - x) ** 2)),
            bounds=(theta0 - h, theta0 + h),
            method="bounded",
            options={"xatol": 1e-13},
        )
        theta = float(res.x) % (2.0 * np.pi)
        return theta, float(np.sqrt(max(res.fun, 0.0)))

    def _signed_distance(self, pts):
        inside = self._contains(pts)
        out = np.empty(pts.shape[0])
        for i, x in enumerate(pts):
            d2 = np.sum((self._grid_points - x) ** 2, axis=1)
            _, dist = self._refine(x, float(self._grid[int(np.argmin(d2))]))
            out[i] = dist if inside[i] else -dist
        return out

    def _nearest(self, x):
        d2 = np.sum((self._grid_points - x) ** 2, axis=1)
        best = d2.min()
        cand_idx = np.flatnonzero(d2 <= best * (1.0 + 1e-9) + 1e-24)
        refined = [self._refine(x, float(self._grid[j])) for j in cand_idx]
        dmin = min(dist for _, dist in refined)
        tol = self.tolerance
        options = []
        for theta, dist in refined:
            if dist <= dmin + tol:
                loc = self.boundary_at(theta)
                options.append((tuple(np.round(loc, 12)), theta))
        options.sort(key=lambda o: o[0])
        theta = options[0][1]
        return BoundaryPoint(self.boundary_at(theta), self.inward_normal_at(theta))

    def bounding_box(self):
        return self.center - self.r_max, self.center + self.r_max

    @property
    def measure(self) -> float:
        return self._measure

    @property
    def diameter(self) -> float:
        return 2.0 * self.r_max

    @property
    def inradius(self) -> float:
        # largest ball about the centre; a lower bound for star domains
        return float(self.signed_distance(self.center))

    def to_spec(self):
        return {
            "kind": self.kind,
            "center": self.center.tolist(),
            "r0": self.r0,
            "cos": self.cos_coeffs.tolist(),
            "sin": self.sin_coeffs.tolist(),
        }


def domain_from_spec(spec: Dict[str, Any]) -> Domain:
    """Build a domain from its tagged config record."""
    try:
        kind = spec["kind"]
        if kind == "ball":
            return Ball(spec["center"], spec["radius"])
        if kind == "box":
            return Box(spec["lo"], spec["hi"])
        if kind == "whole-space":
            return WholeSpace(spec["dim"])
        if kind == "radial":
            return Radial(spec.get("center", [0.0, 0.0]), spec["r0"], spec.get("cos", ()), spec.get("sin", ()))
    except KeyError as e:
        raise DomainError(f"domain record of kind {spec.get('kind')!r} is missing field {e}") from e
    raise DomainError(f"unknown domain kind {spec.get('kind')!r}")


def _sphere_directions(d: int, count: int) -> np.ndarray:
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        t = np.linspace(0.0, 2.0 * np.pi, count, endpoint=False)
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    if d == 3:
        i = np.arange(count) + 0.5
        z = 1.0 - 2.0 * i / count
        phi = np.pi * (1.0 + 5.0 ** 0.5) * i
        s = np.sqrt(1.0 - z * z)
        return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)
    g = np.random.Generator(np.random.Philox(0)).standard_normal((count, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def boundary_grid(dom: Domain, count: int = 256) -> Tuple[np.ndarray, np.ndarray]:
    """Deterministic points on the boundary and their inward normals."""
    if isinstance(dom, Ball):
        u = _sphere_directions(dom.dim, count)
        return dom.center + dom.radius * u, -u
    if isinstance(dom, Radial):
        t = np.linspace(0.0, 2.0 * np.pi, count, endpoint=False)
        return dom.boundary_at(t), dom.inward_normal_at(t)
    if isinstance(dom, Box):
        d = dom.dim
        if d == 1:
            return np.array([[dom.lo[0]], [dom.hi[0]]]), np.array([[1.0], [-1.0]])
        per_axis = max(2, int(round((count / (2 * d)) ** (1.0 / (d - 1)))))
        pts, normals = [], []
        for axis in range(d):
            others = [j for j in range(d) if j != axis]
            axes = [
                dom.lo[j] + (dom.hi[j] - dom.lo[j]) * (np.arange(per_axis) + 0.5) / per_axis
                for j in others
            ]
            mesh = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
            for side, value, sign in ((0, dom.lo[axis], 1.0), (1, dom.hi[axis], -1.0)):
                face = np.empty((mesh.shape[0], d))
                face[:, others] = mesh
                face[:, axis] = value
                nu = np.zeros((mesh.shape[0], d))
                nu[:, axis] = sign
                pts.append(face)
                normals.append(nu)
        return np.concatenate(pts), np.concatenate(normals)
    raise DomainError(f"{dom.kind} has no boundary grid")


def describe(dom: Domain) -> str:
    text = f"{dom.kind} in R^{dom.dim}"
    if dom.lipschitz_only:
        text += " (Lipschitz boundary only; convergence results are heuristic)"
    return text


def optional_window(spec: Optional[Dict[str, Any]], dim: int) -> Optional[Box]:
    """Lattice window for whole-space runs, ``{"lo": [...], "hi": [...]}``."""
    if spec is None:
        return None
    window = Box(spec["lo"], spec["hi"])
    if window.dim != dim:
        raise DomainError(f"window dimension {window.dim} does not match domain dimension {dim}")
    return window
