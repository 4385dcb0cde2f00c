"""Component families, smoothing kernels, quadrature grids and kernel smoothing.

Everything here is univariate in the observation ``x``.  A family evaluates
``f(x | theta)`` for a stack of parameter vectors at once, returning a
``(k, N)`` matrix, so that a mixture density on a grid is one weighted sum.

Convolving a family with a smoothing kernel ``K_sigma`` gives another family
with the same parameterization.  Gaussian/Gaussian, Cauchy/Cauchy and
skew-normal/Gaussian pairs have closed forms; other pairs fall back to a
discrete convolution on the evaluation grid.
"""

from __future__ import annotations

import math
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import signal, special, stats

from .measures import MixingMeasure, ParameterBox

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
DEFAULT_GRID_POINTS = 4097
#: grid core range stops this many interquartile ranges beyond the quartiles
GRID_IQR_REACH = 20.0
MIN_GRID_POINTS = 257


class DensityError(ValueError):
    """Raised for invalid family parameters, grids or samples."""


def norm_cdf(z):
    """Standard normal CDF through ``erfc``; accurate in both tails."""
    return 0.5 * special.erfc(-np.asarray(z, dtype=float) / math.sqrt(2.0))


def _mills(t):
    # phi(t) / Phi(t), stable for very negative t
    return np.exp(-0.5 * t * t - LOG_SQRT_2PI - special.log_ndtr(t))


# ---------------------------------------------------------------------------
# smoothing kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SmoothingKernel:
    """Scaled kernel ``K_sigma(x) = K(x / sigma) / sigma``; ``sigma == 0`` is the identity."""

    kind: str = "gaussian"
    bandwidth: float = 0.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "cauchy"):
            raise DensityError(f"unknown smoothing kernel {self.kind!r}")
        if not (self.bandwidth >= 0 and math.isfinite(self.bandwidth)):
            raise DensityError("bandwidth must be a finite nonnegative number")

    @property
    def is_identity(self) -> bool:
        return self.bandwidth == 0

    def pdf(self, u):
        if self.is_identity:
            raise DensityError("the identity kernel has no density")
        s = self.bandwidth
        z = np.asarray(u, dtype=float) / s
        if self.kind == "gaussian":
            return np.exp(-0.5 * z * z - LOG_SQRT_2PI) / s
        return 1.0 / (math.pi * s * (1.0 + z * z))

    def cdf(self, u):
        if self.is_identity:
            raise DensityError("the identity kernel has no density")
        z = np.asarray(u, dtype=float) / self.bandwidth
        if self.kind == "gaussian":
            return norm_cdf(z)
        return 0.5 + np.arctan(z) / math.pi

    def rvs(self, size, rng):
        if self.is_identity:
            return np.zeros(size)
        if self.kind == "gaussian":
            return self.bandwidth * rng.standard_normal(size)
        return self.bandwidth * rng.standard_cauchy(size)

    def support_halfwidth(self, span: float) -> float:
        if self.kind == "gaussian":
            return 12.0 * self.bandwidth
        return max(200.0 * self.bandwidth, span)


# ---------------------------------------------------------------------------
# component families
# ---------------------------------------------------------------------------


class KernelFamily:
    """Base class for parametric component densities ``f(x | theta)``.

    Subclasses set ``tag``, ``dim`` (parameter dimension), ``scale_index``
    (``None`` for location-only families) and implement ``pdf``.
    ``pdf_grad`` returns ``(k, dim, N)`` derivatives with respect to theta;
    the default is a central difference on ``pdf``.
    """

    tag = "abstract"
    dim = 1
    scale_index: Optional[int] = None
    samplable = True
    #: bandwidth already folded into the family by a closed-form convolution
    smoothing = 0.0

    def pdf(self, x, thetas) -> np.ndarray:
        raise NotImplementedError

    def pdf_grad(self, x, thetas) -> np.ndarray:
        thetas = self._thetas(thetas)
        k = thetas.shape[0]
        x = np.asarray(x, dtype=float)
        out = np.empty((k, self.dim, x.size))
        for j in range(self.dim):
            step = 1e-5 * np.maximum(1.0, np.abs(thetas[:, j]))
            up, dn = thetas.copy(), thetas.copy()
            up[:, j] += step
            dn[:, j] -= step
            out[:, j, :] = (self.pdf(x, up) - self.pdf(x, dn)) / (2 * step)[:, None]
        return out

    def pdf_and_grad(self, x, thetas):
        return self.pdf(x, thetas), self.pdf_grad(x, thetas)

    def rvs(self, thetas, rng) -> np.ndarray:
        raise DensityError(f"family {self.tag!r} has no sampler")

    def tail_masses(self, lo: float, hi: float, thetas):
        """Mass below ``lo`` and above ``hi`` per component with its parameter gradient.

        Returns ``(M, dM)`` of shapes ``(k, 2)`` and ``(k, dim, 2)``, or ``None``
        when the family's tails are light enough to ignore.
        """
        return None

    def convolve_closed(self, kernel: SmoothingKernel) -> Optional["KernelFamily"]:
        return None

    def typical_scale(self, thetas=None) -> float:
        """Spread of a single component, used to size grids and perturbations."""
        return 1.0

    def default_box(self, data) -> ParameterBox:
        data = np.asarray(data, dtype=float)
        lo, hi = np.quantile(data, [0.005, 0.995])
        spread = robust_scale(data)
        lower, upper = [lo - 1.0], [hi + 1.0]
        if self.scale_index is not None:
            lower.append(0.01 * spread)
            upper.append(10.0 * spread)
        while len(lower) < self.dim:
            lower.append(-20.0)
            upper.append(20.0)
        return ParameterBox(np.array(lower), np.array(upper))

    def _thetas(self, thetas) -> np.ndarray:
        t = np.asarray(thetas, dtype=float)
        if t.ndim == 1:
            t = t.reshape(-1, self.dim) if t.size != self.dim else t[None, :]
        if t.shape[-1] != self.dim:
            raise DensityError(f"{self.tag} expects parameters of length {self.dim}, got {t.shape}")
        if self.scale_index is not None and np.any(t[:, self.scale_index] <= 0):
            raise DensityError(f"{self.tag}: scale parameter must be positive")
        return t

    def __eq__(self, other):
        return type(self) is type(other) and self.__dict__ == other.__dict__

    def __hash__(self):
        return hash((type(self).__name__, tuple(sorted(self.__dict__.items()))))

    def __repr__(self):
        extra = ", ".join(f"{k}={v!r}" for k, v in sorted(self.__dict__.items()))
        return f"{type(self).__name__}({extra})"


class GaussianLocScale(KernelFamily):
    """Normal components, ``theta = (location, sd)``."""

    tag = "gaussian-loc-scale"
    dim = 2
    scale_index = 1

    def __init__(self, smoothing: float = 0.0):
        self.smoothing = float(smoothing)

    def _omega(self, tau):
        return np.sqrt(tau * tau + self.smoothing**2)

    def pdf(self, x, thetas):
        t = self._thetas(thetas)
        om = self._omega(t[:, 1])[:, None]
        z = (np.asarray(x, dtype=float)[None, :] - t[:, :1]) / om
        return np.exp(-0.5 * z * z - LOG_SQRT_2PI) / om

    def pdf_grad(self, x, thetas):
        return self.pdf_and_grad(x, thetas)[1]

    def pdf_and_grad(self, x, thetas):
        t = self._thetas(thetas)
        om = self._omega(t[:, 1])[:, None]
        z = (np.asarray(x, dtype=float)[None, :] - t[:, :1]) / om
        g = np.exp(-0.5 * z * z - LOG_SQRT_2PI) / om
        d_loc = g * z / om
        d_tau = g * (z * z - 1.0) * t[:, 1:2] / (om * om)
        return g, np.stack([d_loc, d_tau], axis=1)

    def rvs(self, thetas, rng):
        t = self._thetas(thetas)
        return t[:, 0] + self._omega(t[:, 1]) * rng.standard_normal(t.shape[0])

    def convolve_closed(self, kernel):
        if kernel.kind == "gaussian":
            return GaussianLocScale(math.hypot(self.smoothing, kernel.bandwidth))
        return None

    def typical_scale(self, thetas=None):
        if thetas is None:
            return 1.0
        return float(np.max(self._omega(np.atleast_2d(thetas)[:, 1])))


class GaussianLoc(KernelFamily):
    """Normal components with a fixed standard deviation, ``theta = (location,)``."""

    tag = "gaussian-loc"
    dim = 1

    def __init__(self, scale: float = 1.0, smoothing: float = 0.0):
        if scale <= 0:
            raise DensityError("scale must be positive")
        self.scale = float(scale)
        self.smoothing = float(smoothing)

    @property
    def omega(self):
        return math.hypot(self.scale, self.smoothing)

    def pdf(self, x, thetas):
        t = self._thetas(thetas)
        z = (np.asarray(x, dtype=float)[None, :] - t) / self.omega
        return np.exp(-0.5 * z * z - LOG_SQRT_2PI) / self.omega

    def pdf_grad(self, x, thetas):
        return self.pdf_and_grad(x, thetas)[1]

    def pdf_and_grad(self, x, thetas):
        t = self._thetas(thetas)
        z = (np.asarray(x, dtype=float)[None, :] - t) / self.omega
        g = np.exp(-0.5 * z * z - LOG_SQRT_2PI) / self.omega
        return g, (g * z / self.omega)[:, None, :]

    def rvs(self, thetas, rng):
        t = self._thetas(thetas)
        return t[:, 0] + self.omega * rng.standard_normal(t.shape[0])

    def convolve_closed(self, kernel):
        if kernel.kind == "gaussian":
            return GaussianLoc(self.scale, math.hypot(self.smoothing, kernel.bandwidth))
        return None

    def typical_scale(self, thetas=None):
        return self.omega


def _cauchy_tails(lo, hi, loc, s):
    # masses outside [lo, hi] and their derivatives in location and scale
    zl, zh = (lo - loc) / s, (hi - loc) / s
    fl = 1.0 / (math.pi * s * (1.0 + zl * zl))
    fh = 1.0 / (math.pi * s * (1.0 + zh * zh))
    M = np.column_stack([0.5 + np.arctan(zl) / math.pi, 0.5 - np.arctan(zh) / math.pi])
    d_loc = np.column_stack([-fl, fh])
    d_s = np.column_stack([-fl * zl, fh * zh])
    return M, d_loc, d_s


class CauchyLocScale(KernelFamily):
    """Cauchy components, ``theta = (location, scale)``."""

    tag = "cauchy-loc-scale"
    dim = 2
    scale_index = 1

    def __init__(self, smoothing: float = 0.0):
        self.smoothing = float(smoothing)

    def pdf(self, x, thetas):
        t = self._thetas(thetas)
        s = (t[:, 1] + self.smoothing)[:, None]
        z = (np.asarray(x, dtype=float)[None, :] - t[:, :1]) / s
        return 1.0 / (math.pi * s * (1.0 + z * z))

    def pdf_grad(self, x, thetas):
        return self.pdf_and_grad(x, thetas)[1]

    def pdf_and_grad(self, x, thetas):
        t = self._thetas(thetas)
        s = (t[:, 1] + self.smoothing)[:, None]
        z = (np.asarray(x, dtype=float)[None, :] - t[:, :1]) / s
        q = 1.0 + z * z
        g = 1.0 / (math.pi * s * q)
        d_loc = g * 2.0 * z / (s * q)
        d_tau = g * (z * z - 1.0) / (s * q)
        return g, np.stack([d_loc, d_tau], axis=1)

    def rvs(self, thetas, rng):
        t = self._thetas(thetas)
        return t[:, 0] + (t[:, 1] + self.smoothing) * rng.standard_cauchy(t.shape[0])

    def tail_masses(self, lo, hi, thetas):
        t = self._thetas(thetas)
        M, d_loc, d_s = _cauchy_tails(lo, hi, t[:, 0], t[:, 1] + self.smoothing)
        return M, np.stack([d_loc, d_s], axis=1)

    def convolve_closed(self, kernel):
        if kernel.kind == "cauchy":
            return CauchyLocScale(self.smoothing + kernel.bandwidth)
        return None

    def typical_scale(self, thetas=None):
        if thetas is None:
            return 1.0
        return float(np.max(np.atleast_2d(thetas)[:, 1] + self.smoothing))


class CauchyLoc(KernelFamily):
    """Cauchy components with a fixed scale, ``theta = (location,)``."""

    tag = "cauchy-loc"
    dim = 1

    def __init__(self, scale: float = 1.0, smoothing: float = 0.0):
        if scale <= 0:
            raise DensityError("scale must be positive")
        self.scale = float(scale)
        self.smoothing = float(smoothing)

    @property
    def omega(self):
        return self.scale + self.smoothing

    def pdf(self, x, thetas):
        t = self._thetas(thetas)
        z = (np.asarray(x, dtype=float)[None, :] - t) / self.omega
        return 1.0 / (math.pi * self.omega * (1.0 + z * z))

    def pdf_grad(self, x, thetas):
        return self.pdf_and_grad(x, thetas)[1]

    def pdf_and_grad(self, x, thetas):
        t = self._thetas(thetas)
        z = (np.asarray(x, dtype=float)[None, :] - t) / self.omega
        q = 1.0 + z * z
        g = 1.0 / (math.pi * self.omega * q)
        return g, (g * 2.0 * z / (self.omega * q))[:, None, :]

    def rvs(self, thetas, rng):
        t = self._thetas(thetas)
        return t[:, 0] + self.omega * rng.standard_cauchy(t.shape[0])

    def tail_masses(self, lo, hi, thetas):
        t = self._thetas(thetas)
        M, d_loc, _ = _cauchy_tails(lo, hi, t[:, 0], self.omega)
        return M, d_loc[:, None, :]

    def convolve_closed(self, kernel):
        if kernel.kind == "cauchy":
            return CauchyLoc(self.scale, self.smoothing + kernel.bandwidth)
        return None

    def typical_scale(self, thetas=None):
        return self.omega


class SkewNormal(KernelFamily):
    """Skew-normal components, ``theta = (location, scale, shape)``.

    With ``smoothing = s`` this is the law of ``X + s * W`` for ``W`` standard
    normal, which is again skew-normal with scale ``sqrt(tau^2 + s^2)`` and
    shape ``tau * m / sqrt(tau^2 + s^2 (1 + m^2))``.
    """

    tag = "skewnormal"
    dim = 3
    scale_index = 1

    def __init__(self, smoothing: float = 0.0):
        self.smoothing = float(smoothing)

    def _parts(self, x, t):
        s2 = self.smoothing**2
        tau, m = t[:, 1:2], t[:, 2:3]
        om = np.sqrt(tau * tau + s2)
        R = np.sqrt(tau * tau + s2 * (1.0 + m * m))
        a = tau * m / R
        z = (np.asarray(x, dtype=float)[None, :] - t[:, :1]) / om
        return tau, m, om, R, a, z

    def pdf(self, x, thetas):
        t = self._thetas(thetas)
        _, _, om, _, a, z = self._parts(x, t)
        return 2.0 / om * np.exp(-0.5 * z * z - LOG_SQRT_2PI) * norm_cdf(a * z)

    def pdf_grad(self, x, thetas):
        return self.pdf_and_grad(x, thetas)[1]

    def pdf_and_grad(self, x, thetas):
        t = self._thetas(thetas)
        tau, m, om, R, a, z = self._parts(x, t)
        s2 = self.smoothing**2
        g = 2.0 / om * np.exp(-0.5 * z * z - LOG_SQRT_2PI) * norm_cdf(a * z)
        lam = _mills(a * z)
        om2 = om * om
        R3 = R**3
        dlog_loc = z / om - lam * a / om
        z_tau = -z * tau / om2
        a_tau = m * s2 * (1.0 + m * m) / R3
        dlog_tau = -tau / om2 - z * z_tau + lam * (a_tau * z + a * z_tau)
        a_m = tau * (tau * tau + s2) / R3
        dlog_m = lam * a_m * z
        return g, np.stack([g * dlog_loc, g * dlog_tau, g * dlog_m], axis=1)

    def rvs(self, thetas, rng):
        t = self._thetas(thetas)
        n = t.shape[0]
        delta = t[:, 2] / np.sqrt(1.0 + t[:, 2] ** 2)
        u0 = np.abs(rng.standard_normal(n))
        u1 = rng.standard_normal(n)
        z = delta * u0 + np.sqrt(1.0 - delta**2) * u1
        out = t[:, 0] + t[:, 1] * z
        if self.smoothing:
            out = out + self.smoothing * rng.standard_normal(n)
        return out

    def convolve_closed(self, kernel):
        if kernel.kind == "gaussian":
            return SkewNormal(math.hypot(self.smoothing, kernel.bandwidth))
        return None

    def typical_scale(self, thetas=None):
        if thetas is None:
            return 1.0
        tau = np.atleast_2d(thetas)[:, 1]
        return float(np.max(np.sqrt(tau * tau + self.smoothing**2)))


class StudentT(KernelFamily):
    """Location-scale Student's t with fixed degrees of freedom (data generation only)."""

    tag = "student-t"
    dim = 2
    scale_index = 1

    def __init__(self, df: float = 3.0):
        if df <= 0:
            raise DensityError("degrees of freedom must be positive")
        self.df = float(df)

    def pdf(self, x, thetas):
        t = self._thetas(thetas)
        return stats.t.pdf(np.asarray(x, dtype=float)[None, :], self.df, loc=t[:, :1], scale=t[:, 1:2])

    def rvs(self, thetas, rng):
        t = self._thetas(thetas)
        return t[:, 0] + t[:, 1] * rng.standard_t(self.df, size=t.shape[0])

    def typical_scale(self, thetas=None):
        if thetas is None:
            return 1.0
        return float(np.max(np.atleast_2d(thetas)[:, 1]))


class ShiftMixture(KernelFamily):
    """Equal mixture ``(f(x - shift | theta) + f(x + shift | theta)) / 2`` of a base family."""

    def __init__(self, base: KernelFamily, shift: float = 2.0):
        self.base = base
        self.shift = float(shift)

    @property
    def tag(self):
        return f"shift-mixture({self.base.tag})"

    @property
    def dim(self):
        return self.base.dim

    @property
    def scale_index(self):
        return self.base.scale_index

    @property
    def samplable(self):
        return self.base.samplable

    def pdf(self, x, thetas):
        x = np.asarray(x, dtype=float)
        return 0.5 * (self.base.pdf(x - self.shift, thetas) + self.base.pdf(x + self.shift, thetas))

    def pdf_and_grad(self, x, thetas):
        x = np.asarray(x, dtype=float)
        g1, d1 = self.base.pdf_and_grad(x - self.shift, thetas)
        g2, d2 = self.base.pdf_and_grad(x + self.shift, thetas)
        return 0.5 * (g1 + g2), 0.5 * (d1 + d2)

    def pdf_grad(self, x, thetas):
        return self.pdf_and_grad(x, thetas)[1]

    def rvs(self, thetas, rng):
        draws = self.base.rvs(thetas, rng)
        signs = np.where(rng.random(draws.size) < 0.5, 1.0, -1.0)
        return draws + signs * self.shift

    def convolve_closed(self, kernel):
        inner = self.base.convolve_closed(kernel)
        return None if inner is None else ShiftMixture(inner, self.shift)

    def typical_scale(self, thetas=None):
        return self.base.typical_scale(thetas) + self.shift

    def default_box(self, data):
        return self.base.default_box(data)

    def __hash__(self):
        return hash((type(self).__name__, self.base, self.shift))


class NumericalConvolution(KernelFamily):
    """``f * K_sigma`` by discrete convolution on the evaluation grid.

    ``x`` passed to :meth:`pdf` must be uniformly spaced.  Results are cached
    per ``(theta, grid)`` behind a lock, so concurrent callers see identical
    values.  Not samplable.
    """

    samplable = False

    def __init__(self, base: KernelFamily, kernel: SmoothingKernel, cache_size: int = 4096):
        self.base = base
        self.kernel = kernel
        self._cache: OrderedDict = OrderedDict()
        self._lock = threading.Lock()
        self._cache_size = cache_size

    @property
    def tag(self):
        return f"numconv({self.base.tag},{self.kernel.kind}:{self.kernel.bandwidth:g})"

    @property
    def dim(self):
        return self.base.dim

    @property
    def scale_index(self):
        return self.base.scale_index

    def __eq__(self, other):
        return type(self) is type(other) and self.base == other.base and self.kernel == other.kernel

    def __hash__(self):
        return hash((type(self).__name__, self.base, self.kernel))

    def __repr__(self):
        return f"NumericalConvolution({self.base!r}, {self.kernel!r})"

    def _one(self, x, theta):
        x = np.asarray(x, dtype=float)
        dx = (x[-1] - x[0]) / (x.size - 1)
        if x.size < 3 or not np.allclose(np.diff(x), dx, rtol=1e-9, atol=1e-12):
            raise DensityError("numerical convolution needs a uniform grid")
        half = self.kernel.support_halfwidth(x[-1] - x[0])
        M = int(math.ceil(half / dx))
        offsets = dx * np.arange(-M, M + 1)
        kern = self.kernel.pdf(offsets)
        kern /= np.sum(kern) * dx
        ext = x[0] + dx * np.arange(-M, x.size + M)
        f = self.base.pdf(ext, theta[None, :])[0]
        out = signal.fftconvolve(f, kern * dx, mode="valid")
        return np.maximum(out, 0.0)

    def pdf(self, x, thetas):
        t = self._thetas(thetas)
        x = np.asarray(x, dtype=float)
        gkey = (x.size, float(x[0]), float(x[-1]))
        rows = []
        for theta in t:
            key = (tuple(theta.tolist()), gkey)
            with self._lock:
                hit = self._cache.get(key)
                if hit is not None:
                    self._cache.move_to_end(key)
            if hit is None:
                hit = self._one(x, theta)
                hit.flags.writeable = False
                with self._lock:
                    self._cache[key] = hit
                    if len(self._cache) > self._cache_size:
                        self._cache.popitem(last=False)
            rows.append(hit)
        return np.array(rows)

    def typical_scale(self, thetas=None):
        return self.base.typical_scale(thetas) + self.kernel.bandwidth

    def default_box(self, data):
        return self.base.default_box(data)


FAMILY_NAMES = {
    "gaussian": GaussianLocScale,
    "gaussian-loc-scale": GaussianLocScale,
    "cauchy": CauchyLocScale,
    "cauchy-loc-scale": CauchyLocScale,
    "gaussian-loc": GaussianLoc,
    "cauchy-loc": CauchyLoc,
    "skewnormal": SkewNormal,
    "student-t": StudentT,
}


def make_family(name: str, **kwargs) -> KernelFamily:
    try:
        return FAMILY_NAMES[name](**kwargs)
    except KeyError:
        raise DensityError(f"unknown family {name!r}; choose from {sorted(FAMILY_NAMES)}") from None


def convolve(fam: KernelFamily, kernel: SmoothingKernel, allow_numerical: bool = True) -> KernelFamily:
    """Family representing ``f * K_sigma``; the identity when ``sigma == 0``."""
    if kernel.is_identity:
        return fam
    closed = fam.convolve_closed(kernel)
    if closed is not None:
        return closed
    if not allow_numerical:
        raise DensityError(f"no closed-form convolution for {fam.tag} with a {kernel.kind} kernel")
    return NumericalConvolution(fam, kernel)


def eval_density(fam: KernelFamily, theta, x):
    """Pointwise ``f(x | theta)`` for a single parameter vector."""
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    vals = fam.pdf(x_arr, np.asarray(theta, dtype=float).reshape(1, -1))[0]
    return float(vals[0]) if np.ndim(x) == 0 else vals


# ---------------------------------------------------------------------------
# quadrature grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureGrid:
    """Uniform lattice with composite-Simpson weights."""

    points: np.ndarray
    weights: np.ndarray

    @classmethod
    def uniform(cls, lo: float, hi: float, n_points: int = DEFAULT_GRID_POINTS) -> "QuadratureGrid":
        if n_points < MIN_GRID_POINTS or n_points % 2 == 0:
            raise DensityError(f"grid needs an odd number of points >= {MIN_GRID_POINTS}")
        if not hi > lo:
            raise DensityError("grid needs hi > lo")
        x = np.linspace(lo, hi, n_points)
        h = (hi - lo) / (n_points - 1)
        w = np.full(n_points, 2.0)
        w[1::2] = 4.0
        w[0] = w[-1] = 1.0
        w *= h / 3.0
        x.flags.writeable = False
        w.flags.writeable = False
        return cls(x, w)

    @property
    def n(self) -> int:
        return self.points.size

    @property
    def spacing(self) -> float:
        return float(self.points[1] - self.points[0])

    def integrate(self, values) -> float:
        return float(np.dot(np.asarray(values), self.weights))

    def trapezoid(self, values) -> float:
        return float(np.trapezoid(values, self.points))

    def covers(self, density, tol: float = 1e-4) -> bool:
        return self.trapezoid(density) >= 1.0 - tol

    def same_as(self, other: "QuadratureGrid") -> bool:
        return self is other or (
            self.n == other.n and np.array_equal(self.points, other.points)
        )

    def to_csv(self) -> str:
        lines = ["x,weight"]
        lines += [f"{x:.17g},{w:.17g}" for x, w in zip(self.points, self.weights)]
        return "\n".join(lines) + "\n"


def robust_scale(data) -> float:
    """``min(sd, IQR / 1.349)``, falling back to ``sd`` (or 1) when the IQR vanishes."""
    data = np.asarray(data, dtype=float)
    sd = float(np.std(data, ddof=1)) if data.size > 1 else 0.0
    q75, q25 = np.quantile(data, [0.75, 0.25])
    iqr = float(q75 - q25) / 1.349
    cands = [v for v in (sd, iqr) if v > 0]
    return min(cands) if cands else 1.0


def build_grid(data, scale_max: float, sigma_max: float, n_points: int = DEFAULT_GRID_POINTS,
               quantiles: tuple = (0.001, 0.999)) -> QuadratureGrid:
    """Uniform grid over the data quantile range padded by ``6 (scale_max + sigma_max)``.

    Quantiles rather than extremes bound the range, and the range is further
    clipped to ``GRID_IQR_REACH`` interquartile ranges beyond the quartiles:
    in small heavy-tailed samples the outer quantiles are the extremes, and
    one far outlier would otherwise make the spacing coarser than the
    component scale.  A degenerate sample is widened to a half-width of at
    least 1.
    """
    data = np.asarray(data, dtype=float).ravel()
    if data.size == 0:
        raise DensityError("cannot build a grid from an empty sample")
    lo, hi = (float(v) for v in np.quantile(data, quantiles))
    q1, q3 = (float(v) for v in np.quantile(data, (0.25, 0.75)))
    if q3 > q1:
        reach = GRID_IQR_REACH * (q3 - q1)
        lo, hi = max(lo, q1 - reach), min(hi, q3 + reach)
    if hi - lo < 2.0:
        mid = 0.5 * (lo + hi)
        lo, hi = min(lo, mid - 1.0), max(hi, mid + 1.0)
    pad = 6.0 * (scale_max + sigma_max)
    return QuadratureGrid.uniform(lo - pad, hi + pad, n_points)


# ---------------------------------------------------------------------------
# samples and kernel smoothing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    """Observed data and the seed that produced it (``None`` for external data)."""

    observations: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=float).ravel().copy()
        if obs.size < 1:
            raise DensityError("a sample needs at least one observation")
        if not np.all(np.isfinite(obs)):
            raise DensityError("observations must be finite")
        obs.flags.writeable = False
        object.__setattr__(self, "observations", obs)

    @property
    def n(self) -> int:
        return self.observations.size

    def __len__(self):
        return self.n


def as_sample(data) -> Sample:
    return data if isinstance(data, Sample) else Sample(np.asarray(data, dtype=float))


def read_sample(path) -> Sample:
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            try:
                values.append(float(text))
            except ValueError:
                raise DensityError(f"{path}:{lineno}: not a number: {text!r}") from None
    return Sample(np.array(values))


def write_sample(sample: Sample, path) -> None:
    with open(path, "w") as fh:
        for v in sample.observations:
            fh.write(f"{v:.17g}\n")


def smoothed_empirical(data, kernel: SmoothingKernel, grid: QuadratureGrid, chunk: int = 512) -> np.ndarray:
    """Fixed-bandwidth kernel density estimate ``(1/n) sum_i K_sigma(x - X_i)`` on the grid."""
    # summing in sorted order makes the estimate independent of data order
    obs = np.sort(as_sample(data).observations)
    if kernel.is_identity:
        raise DensityError("sigma0 must be positive")
    x = grid.points
    out = np.zeros(x.size)
    for start in range(0, obs.size, chunk):
        block = obs[start:start + chunk]
        out += kernel.pdf(x[None, :] - block[:, None]).sum(axis=0)
    return out / obs.size


def sample(G: MixingMeasure, fam: KernelFamily, n: int, seed: int) -> Sample:
    """Draw ``n`` i.i.d. observations from ``p_{G, f}``."""
    if n < 1:
        raise DensityError("n must be >= 1")
    if not fam.samplable:
        raise DensityError(f"family {fam.tag!r} has no sampler")
    rng = np.random.default_rng(seed)
    idx = rng.choice(G.k, size=n, p=G.weights)
    return Sample(fam.rvs(G.atoms[idx], rng), seed)


def mixture_density(G: MixingMeasure, fam: KernelFamily, grid) -> np.ndarray:
    """``sum_i p_i f(x_j | theta_i)`` on the grid points (or any array of points)."""
    x = grid.points if isinstance(grid, QuadratureGrid) else np.asarray(grid, dtype=float)
    if G.dim != fam.dim:
        raise DensityError(f"measure dimension {G.dim} does not match family dimension {fam.dim}")
    if G.box is not None and not G.box.contains(G.atoms):
        raise DensityError("atom outside parameter box")
    return G.weights @ fam.pdf(x, G.atoms)


def psi_integral(G0: MixingMeasure, fam0: KernelFamily, kernel: SmoothingKernel,
                 grid: QuadratureGrid, chunk: int = 256) -> float:
    """Numerical value of ``int g(x) / (p_{G0,f0} * K)(x) dx`` with ``g = K^2 * p_{G0,f0}``.

    Appears only in rate constants; exposed as a diagnostic.  Both
    convolutions are summed directly over positive terms, so the ratio keeps
    full relative precision far into the tails where an FFT would return
    round-off noise.
    """
    if kernel.is_identity:
        raise DensityError("psi needs a positive bandwidth")
    x = grid.points
    dx = grid.spacing
    M = int(math.ceil(kernel.support_halfwidth(x[-1] - x[0]) / dx))
    ext = x[0] + dx * np.arange(-M, x.size + M)
    p = mixture_density(G0, fam0, ext) * dx
    ratio = np.zeros(x.size)
    for start in range(0, x.size, chunk):
        xs = x[start:start + chunk]
        k1 = kernel.pdf(xs[:, None] - ext[None, :])
        num = (k1 * k1) @ p
        den = k1 @ p
        ok = den > 1e-300
        ratio[start:start + chunk][ok] = num[ok] / den[ok]
    return grid.integrate(ratio)


def default_scale_span(fam: KernelFamily, data) -> float:
    """Component spread used to pad grids: fixed scale for location families, data spread otherwise."""
    if fam.scale_index is None:
        return fam.typical_scale()
    return robust_scale(data)


def grid_for_fit(data, fam: KernelFamily, sigmas: Sequence[float],
                 n_points: int = DEFAULT_GRID_POINTS) -> QuadratureGrid:
    obs = as_sample(data).observations
    return build_grid(obs, default_scale_span(fam, obs), max(sigmas), n_points)
