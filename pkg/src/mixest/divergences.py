"""Hellinger distance, affinity, total variation and weighted Hellinger on a grid.

All functionals take density vectors tabulated on one ``QuadratureGrid`` and
integrate with its Simpson weights.
"""

from __future__ import annotations

import math

import numpy as np

from .densities import QuadratureGrid

AFFINITY_ROUNDOFF = 1e-12


class DivergenceError(ValueError):
    pass


def _check(p, q, grid: QuadratureGrid):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != (grid.n,) or q.shape != (grid.n,):
        raise DivergenceError(
            f"density vectors of shape {p.shape} and {q.shape} do not match a grid of {grid.n} points"
        )
    if np.any(p < 0) or np.any(q < 0):
        raise DivergenceError("densities must be nonnegative")
    return p, q


def affinity(p, q, grid: QuadratureGrid) -> float:
    """Bhattacharyya affinity ``int sqrt(p q)``."""
    p, q = _check(p, q, grid)
    return grid.integrate(np.sqrt(p * q))


def hellinger_from_affinity(aff: float) -> float:
    excess = aff - 1.0
    if excess > AFFINITY_ROUNDOFF:
        raise DivergenceError(f"affinity exceeds one by {excess:.3g}; densities are not normalized on this grid")
    return math.sqrt(max(0.0, 1.0 - aff))


def hellinger(p, q, grid: QuadratureGrid) -> float:
    """Hellinger distance ``sqrt(1 - int sqrt(p q))``, clamped to ``[0, 1]``."""
    return hellinger_from_affinity(affinity(p, q, grid))


def total_variation(p, q, grid: QuadratureGrid) -> float:
    p, q = _check(p, q, grid)
    return min(1.0, 0.5 * grid.integrate(np.abs(p - q)))


def weighted_hellinger(p1, p2, ref_num, ref_den, grid: QuadratureGrid) -> float:
    """Hellinger distance with the squared integrand reweighted by ``sqrt(ref_num / ref_den)``.

    Grid points where ``ref_den < 1e-300`` contribute zero when the
    unweighted integrand vanishes there; otherwise the weight is undefined
    and an error naming the offending x-range is raised.
    """
    p1, p2 = _check(p1, p2, grid)
    num, den = _check(ref_num, ref_den, grid)
    sq = (np.sqrt(p1) - np.sqrt(p2)) ** 2
    tiny = den < 1e-300
    bad = tiny & (sq > 0)
    if np.any(bad):
        xs = grid.points[bad]
        raise DivergenceError(
            f"weight undefined on {bad.sum()} grid points in x in [{xs.min():.6g}, {xs.max():.6g}]"
        )
    weight = np.zeros(grid.n)
    ok = ~tiny
    weight[ok] = np.sqrt(num[ok] / den[ok])
    return math.sqrt(max(0.0, 0.5 * grid.integrate(sq * weight)))
