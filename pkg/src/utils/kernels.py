"""JIT-compiled inner loops.

Random draws are made by the callers with numpy generators and passed in,
so the kernels are pure functions of their arguments.
"""

import numpy as np
from numba import njit


@njit(nogil=True, cache=True)
def _pick(cums, lo, hi, u):
    # first index whose cumulative probability exceeds u
    a, b = lo, hi - 1
    while a < b:
        mid = (a + b) // 2
        if cums[mid] > u:
            b = mid
        else:
            a = mid + 1
    return a


@njit(nogil=True, cache=True)
def advance_chain(cell, t, horizon, rates, indptr, targets, cums, expo, unif, out_times, out_cells):
    """Run the jump chain on one chunk of draws.

    Returns ``(written, cell, t, finished, absorbed)``. ``finished`` is set once
    the next jump would pass ``horizon`` or an absorbing cell is reached.
    """
    k = 0
    while k < expo.shape[0]:
        lam = rates[cell]
        if lam <= 0.0:
            return k, cell, t, True, True
        t_next = t + expo[k] / lam
        if t_next > horizon:
            return k, cell, t, True, False
        j = _pick(cums, indptr[cell], indptr[cell + 1], unif[k])
        cell = targets[j]
        t = t_next
        out_times[k] = t
        out_cells[k] = cell
        k += 1
    return k, cell, t, False, False


@njit(nogil=True, cache=True)
def ball_reflected_path(x0, center, radius, increments):
    """Euler steps followed by radial projection onto the closed ball."""
    steps, d = increments.shape
    path = np.empty((steps + 1, d))
    path[0] = x0
    x = x0.copy()
    for k in range(steps):
        r2 = 0.0
        for j in range(d):
            x[j] += increments[k, j]
            r2 += (x[j] - center[j]) ** 2
        r = np.sqrt(r2)
        if r > radius:
            s = radius / r
            for j in range(d):
                x[j] = center[j] + (x[j] - center[j]) * s
        path[k + 1] = x
    return path


@njit(nogil=True, cache=True)
def box_reflected_path(x0, lo, hi, increments):
    """Euler steps folded back into the box by coordinatewise mirroring."""
    steps, d = increments.shape
    path = np.empty((steps + 1, d))
    path[0] = x0
    x = x0.copy()
    for k in range(steps):
        for j in range(d):
            width = hi[j] - lo[j]
            y = (x[j] + increments[k, j] - lo[j]) % (2.0 * width)
            if y > width:
                y = 2.0 * width - y
            x[j] = min(max(lo[j] + y, lo[j]), hi[j])
        path[k + 1] = x
    return path
