"""Families of test functions with zero normal derivative.

Balls use polynomials in ``s = |x - c|^2``, some times a linear or quadratic
factor, whose radial derivative vanishes at ``s = R^2``. Boxes use cosine
products; the whole space uses a quadratic and compactly supported bumps.
"""

import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from src.models.neumann_function import NeumannTestFunction
from src.utils.errors import DomainError
from src.utils.geometry import Ball, Box, Domain, WholeSpace, boundary_grid

logger = logging.getLogger(__name__)

NEUMANN_TOL = 1e-8

Radial = Tuple[Callable, Callable, Callable]


def _radial_function(name: str, center, d: int, phi: Radial, bound: float, description: str) -> NeumannTestFunction:
    """f(x) = phi(|x - c|^2) with its derivatives in closed form."""
    value, first, second = phi
    c = np.asarray(center, dtype=float)

    def split(x):
        y = np.atleast_2d(x) - c
        return y, np.sum(y * y, axis=1)

    def f(x):
        _, s = split(x)
        return value(s)

    def gradient(x):
        y, s = split(x)
        return 2.0 * first(s)[:, None] * y

    def hessian(x):
        y, s = split(x)
        eye = np.eye(d)[None, :, :]
        return 2.0 * first(s)[:, None, None] * eye + 4.0 * second(s)[:, None, None] * y[:, :, None] * y[:, None, :]

    def laplacian(x):
        _, s = split(x)
        return 2.0 * d * first(s) + 4.0 * s * second(s)

    return NeumannTestFunction(name, f, laplacian, gradient, hessian, bound, description)


def _ball_tilted(center, radius: float, d: int) -> NeumannTestFunction:
    """x_1 (1 - s / (3 R^2)), odd in the first coordinate."""
    c = np.asarray(center, dtype=float)
    k = 1.0 / (3.0 * radius ** 2)

    def f(x):
        y = np.atleast_2d(x) - c
        return y[:, 0] * (1.0 - k * np.sum(y * y, axis=1))

    def gradient(x):
        y = np.atleast_2d(x) - c
        g = -2.0 * k * y[:, :1] * y
        g[:, 0] += 1.0 - k * np.sum(y * y, axis=1)
        return g

    def hessian(x):
        y = np.atleast_2d(x) - c
        h = np.zeros((y.shape[0], d, d))
        h[:, 0, :] += y
        h[:, :, 0] += y
        h += y[:, 0, None, None] * np.eye(d)[None, :, :]
        return -2.0 * k * h

    def laplacian(x):
        y = np.atleast_2d(x) - c
        return -2.0 * (d + 2) * k * y[:, 0]

    return NeumannTestFunction(
        "ball-tilted", f, laplacian, gradient, hessian, 2.0 / radius, "x1 * (1 - |x|^2 / (3 R^2))"
    )


def _ball_saddle(center, radius: float, d: int) -> NeumannTestFunction:
    """(x_1^2 - x_2^2)(1 - s / (2 R^2)), a non-radial mode for d >= 2."""
    c = np.asarray(center, dtype=float)
    k = 1.0 / (2.0 * radius ** 2)
    signs = np.zeros(d)
    signs[:2] = (1.0, -1.0)

    def parts(x):
        y = np.atleast_2d(x) - c
        poly = y[:, 0] ** 2 - y[:, 1] ** 2
        return y, poly, 1.0 - k * np.sum(y * y, axis=1)

    def f(x):
        _, poly, phi = parts(x)
        return poly * phi

    def gradient(x):
        y, poly, phi = parts(x)
        p = 2.0 * signs * y
        return p * phi[:, None] - 2.0 * k * poly[:, None] * y

    def hessian(x):
        y, poly, phi = parts(x)
        p = 2.0 * signs * y
        cross = p[:, :, None] * y[:, None, :]
        h = 2.0 * np.diag(signs)[None, :, :] * phi[:, None, None]
        h -= 2.0 * k * (cross + cross.transpose(0, 2, 1))
        h -= 2.0 * k * poly[:, None, None] * np.eye(d)[None, :, :]
        return h

    def laplacian(x):
        _, poly, _ = parts(x)
        return -2.0 * k * (d + 4) * poly

    return NeumannTestFunction(
        "ball-saddle", f, laplacian, gradient, hessian, 7.0, "(x1^2 - x2^2)(1 - |x|^2 / (2 R^2))"
    )


def ball_functions(dom: Ball) -> List[NeumannTestFunction]:
    d, r2 = dom.dim, dom.radius ** 2
    quartic = (
        lambda s: s - s * s / (2.0 * r2),
        lambda s: 1.0 - s / r2,
        lambda s: np.full_like(s, -1.0 / r2),
    )
    family = [
        _radial_function("ball-quartic", dom.center, d, quartic, 6.0, "r^2 - r^4 / (2 R^2)"),
        _ball_tilted(dom.center, dom.radius, d),
    ]
    if d >= 2:
        family.append(_ball_saddle(dom.center, dom.radius, d))
    return family


def _cosine_product(dom: Box, k: Sequence[int]) -> NeumannTestFunction:
    lo = np.asarray(dom.lo)
    freq = np.asarray(k, dtype=float) * np.pi / (dom.hi - dom.lo)

    def parts(x):
        phase = (np.atleast_2d(x) - lo) * freq
        return np.cos(phase), np.sin(phase)

    def f(x):
        cos, _ = parts(x)
        return np.prod(cos, axis=1)

    def gradient(x):
        cos, sin = parts(x)
        out = np.empty_like(cos)
        for i in range(cos.shape[1]):
            others = np.prod(np.delete(cos, i, axis=1), axis=1)
            out[:, i] = -freq[i] * sin[:, i] * others
        return out

    def hessian(x):
        cos, sin = parts(x)
        n, d = cos.shape
        out = np.empty((n, d, d))
        for i in range(d):
            for j in range(d):
                if i == j:
                    out[:, i, i] = -freq[i] ** 2 * np.prod(cos, axis=1)
                else:
                    rest = np.prod(np.delete(cos, [i, j], axis=1), axis=1)
                    out[:, i, j] = freq[i] * freq[j] * sin[:, i] * sin[:, j] * rest
        return out

    def laplacian(x):
        return -float(np.sum(freq ** 2)) * f(x)

    label = ",".join(str(int(v)) for v in k)
    return NeumannTestFunction(
        f"box-cos({label})", f, laplacian, gradient, hessian, float(np.sum(freq ** 2)),
        f"prod_i cos(k_i pi (x_i - lo_i) / L_i), k=({label})",
    )


def box_functions(dom: Box) -> List[NeumannTestFunction]:
    d = dom.dim
    if d == 1:
        modes = [(1,), (2,), (3,)]
    else:
        first = tuple([1] + [0] * (d - 1))
        modes = [first, tuple([1] * d), tuple([2] + [0] * (d - 1))]
    return [_cosine_product(dom, k) for k in modes]


def _quadratic(d: int) -> NeumannTestFunction:
    return NeumannTestFunction(
        "quadratic",
        lambda x: np.sum(np.atleast_2d(x) ** 2, axis=1),
        lambda x: np.full(np.atleast_2d(x).shape[0], 2.0 * d),
        lambda x: 2.0 * np.atleast_2d(x),
        lambda x: np.broadcast_to(2.0 * np.eye(d), (np.atleast_2d(x).shape[0], d, d)).copy(),
        2.0,
        "|x|^2",
    )


def _bump(name: str, center, width) -> NeumannTestFunction:
    """prod_i (1 - u_i^2)^4 with u = (x - c) / w, zero outside the support."""
    c = np.asarray(center, dtype=float)
    w = np.asarray(width, dtype=float)

    def factors(x):
        u = (np.atleast_2d(x) - c) / w
        inside = np.abs(u) < 1.0
        v = np.where(inside, 1.0 - u * u, 0.0)
        g = v ** 4
        g1 = np.where(inside, -8.0 * u * v ** 3, 0.0) / w
        g2 = np.where(inside, v * v * (56.0 * u * u - 8.0), 0.0) / (w * w)
        return g, g1, g2

    def f(x):
        g, _, _ = factors(x)
        return np.prod(g, axis=1)

    def gradient(x):
        g, g1, _ = factors(x)
        out = np.empty_like(g)
        for i in range(g.shape[1]):
            out[:, i] = g1[:, i] * np.prod(np.delete(g, i, axis=1), axis=1)
        return out

    def hessian(x):
        g, g1, g2 = factors(x)
        n, d = g.shape
        out = np.empty((n, d, d))
        for i in range(d):
            for j in range(d):
                if i == j:
                    out[:, i, i] = g2[:, i] * np.prod(np.delete(g, i, axis=1), axis=1)
                else:
                    rest = np.prod(np.delete(g, [i, j], axis=1), axis=1)
                    out[:, i, j] = g1[:, i] * g1[:, j] * rest
        return out

    def laplacian(x):
        return np.trace(hessian(x), axis1=1, axis2=2)

    bound = float(np.sum(8.0 / w ** 2) + np.sum(8.0 / w) ** 2)
    return NeumannTestFunction(name, f, laplacian, gradient, hessian, bound, "prod_i (1 - u_i^2)^4")


def whole_space_functions(dim: int, window: Optional[Box] = None) -> List[NeumannTestFunction]:
    if window is not None:
        center = 0.5 * (window.lo + window.hi)
        half = 0.5 * (window.hi - window.lo)
    else:
        center, half = np.zeros(dim), np.ones(dim)
    shifted = center.copy()
    shifted[0] += 0.25 * half[0]
    return [
        _quadratic(dim),
        _bump("bump-centered", center, 0.6 * half),
        _bump("bump-shifted", shifted, 0.4 * half),
    ]


def test_functions(dom: Domain, window: Optional[Box] = None) -> List[NeumannTestFunction]:
    if isinstance(dom, Ball):
        return ball_functions(dom)
    if isinstance(dom, Box):
        return box_functions(dom)
    if isinstance(dom, WholeSpace):
        return whole_space_functions(dom.dim, window)
    raise DomainError(f"no Neumann test functions for {dom.kind} domains")


def normal_derivative_residual(fn: NeumannTestFunction, dom: Domain, count: int = 256) -> float:
    """max |<grad f, nu>| over a boundary grid (0 for the whole space)."""
    if not dom.bounded:
        return 0.0
    points, normals = boundary_grid(dom, count)
    return float(np.max(np.abs(np.sum(fn.gradient(points) * normals, axis=1))))


def checked_test_functions(dom: Domain, window: Optional[Box] = None) -> List[NeumannTestFunction]:
    """test_functions with the boundary condition verified on a grid."""
    family = test_functions(dom, window)
    for fn in family:
        residual = normal_derivative_residual(fn, dom)
        if residual > NEUMANN_TOL:
            raise DomainError(f"{fn.name} violates the Neumann condition (residual {residual:.3g})")
    return family
