"""Independent reference computations used by the test-suite."""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import integrate, stats


def brute_force_transport(a, b, C):
    """Minimum of <q, C> over the vertices of the transportation polytope.

    Every vertex is a basic solution supported on ``k + l - 1`` cells; all
    such supports are enumerated and the feasible ones compared.
    """
    a, b, C = (np.asarray(v, dtype=float) for v in (a, b, C))
    k, l = a.size, b.size
    cells = list(itertools.product(range(k), range(l)))
    rhs = np.concatenate([a, b])
    best = math.inf
    for support in itertools.combinations(cells, k + l - 1):
        A = np.zeros((k + l, len(support)))
        for c, (i, j) in enumerate(support):
            A[i, c] = 1.0
            A[k + j, c] = 1.0
        if np.linalg.matrix_rank(A) < len(support):
            continue
        x, *_ = np.linalg.lstsq(A, rhs, rcond=None)
        if np.max(np.abs(A @ x - rhs)) > 1e-11 or np.min(x) < -1e-12:
            continue
        best = min(best, sum(x[c] * C[i, j] for c, (i, j) in enumerate(support)))
    return best


def gaussian_affinity(m1, s1, m2, s2):
    """Closed form of the integral of sqrt(N(m1, s1^2) N(m2, s2^2))."""
    v = s1 * s1 + s2 * s2
    return math.sqrt(2.0 * s1 * s2 / v) * math.exp(-((m1 - m2) ** 2) / (4.0 * v))


def quad_convolution(base_pdf, kernel_pdf, x, centers=()):
    """Direct adaptive quadrature of int base(y) kernel(x - y) dy.

    The line is split at ``x`` (the kernel peak) and at any ``centers`` of the
    base density so that narrow peaks are never skipped by the integrator.
    """
    cuts = sorted({float(x), *map(float, centers)})
    edges = [-np.inf, *cuts, np.inf]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(lambda y: base_pdf(y) * kernel_pdf(x - y), lo, hi,
                                limit=400, epsabs=1e-14, epsrel=1e-12)
        total += val
    return total


def skewnorm_pdf(x, loc, scale, shape):
    return stats.skewnorm.pdf(x, shape, loc=loc, scale=scale)
