"""Choosing the number of mixture components from a sweep of fixed-order fits.

Three stopping rules share one sweep driver:

* ``algorithm1``: smallest ``m`` with ``h_m <= h_{m+1} + C_n / sqrt(n)``;
* ``algorithm2``: smallest ``m`` with ``h_m < eps``;
* ``ws_algorithm``: ``algorithm1`` with the candidate left unsmoothed
  (``sigma1 = 0``), the WS baseline.

Orders are fitted lazily, ``m = 1, 2, ...``, and each order is warm-started
from a split of the previous winner, which also competes unchanged; the
criterion values along a sweep are therefore non-increasing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from sklearn.base import BaseEstimator, DensityMixin

from ._validation import check_observations, check_positive, check_seed
from .densities import DEFAULT_GRID_POINTS, KernelFamily, Sample, as_sample
from .estimator import (
    FitConfig,
    FitError,
    FitResult,
    HellingerProblem,
    MinimumHellingerMixture,
    fit_problem,
    resolve_family,
    warm_start_split,
)
from .measures import MixingMeasure, min_mass_separation

DEFAULT_M_MAX = 10


class SelectionError(RuntimeError):
    """A fit inside the sweep failed; ``partial`` holds the orders completed so far."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial or []


@dataclass
class SelectionResult:
    m_hat: int
    G_hat: MixingMeasure
    sweep: list
    trace: list
    cap_hit: bool
    rule: str
    threshold: float
    n: int

    @property
    def h_values(self) -> list:
        return [fit.h_value for fit in self.sweep]

    def fit_for(self, m: int) -> FitResult:
        return self.sweep[m - 1]

    def to_dict(self) -> dict:
        return {
            "m_hat": self.m_hat,
            "cap_hit": self.cap_hit,
            "rule": self.rule,
            "threshold": self.threshold,
            "n": self.n,
            "G_hat": self.G_hat.to_dict(),
            "sweep": [
                {"m": f.m, "h": f.h_value, "G": f.G_hat.to_dict(), "converged": f.converged}
                for f in self.sweep
            ],
            "trace": self.trace,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def bic_cn(n: int, d1: int) -> float:
    """BIC-style tuning constant ``sqrt((d1 + 1) log(n) / 2)``."""
    if n < 2:
        raise ValueError("n must be >= 2")
    return math.sqrt((d1 + 1) * math.log(n) / 2.0)


def aic_cn(n: int) -> float:
    """The ``3 / n`` constant used with the unsmoothed criterion on the SLC data."""
    return 3.0 / n


def resolve_cn(rule, n: int, d1: int) -> float:
    """Turn ``"bic"``, ``"aic"`` or a number into a tuning constant."""
    if isinstance(rule, str):
        key = rule.lower()
        if key == "bic":
            return bic_cn(n, d1)
        if key == "aic":
            return aic_cn(n)
        try:
            return float(rule)
        except ValueError:
            raise ValueError(f"unknown C_n rule {rule!r}") from None
    return float(rule)


def epsilon_feasibility(G0: MixingMeasure, ratio_lb: float, eps: float) -> bool:
    """Sufficient condition ``ratio_lb * min mass * min separation >= eps``.

    ``ratio_lb`` is a caller-supplied lower bound on the ratio of the
    smoothed Hellinger distance to ``W_1`` over order-``k0`` measures.
    """
    if not ratio_lb > 0:
        raise ValueError("ratio_lb must be positive")
    mass, sep = min_mass_separation(G0)
    if eps <= 0:
        return True
    return ratio_lb * mass * sep >= eps


class _Sweep:
    """Lazily fitted sequence of orders on one prepared problem."""

    def __init__(self, problem: HellingerProblem, cfg: FitConfig, m_max: int):
        self.problem = problem
        self.cfg = cfg
        self.m_max = m_max
        self.fits: list[FitResult] = []

    def get(self, m: int) -> FitResult:
        while len(self.fits) < m:
            k = len(self.fits) + 1
            cfg = self.cfg.with_m(k)
            extra, include = (), ()
            if self.fits:
                prev = self.fits[-1]
                extra = (warm_start_split(prev, self.problem.data_scale, self.problem.fam,
                                          self.problem.box),)
                include = (prev,)
            try:
                fit = fit_problem(self.problem, cfg, extra_starts=extra, include=include)
            except (FitError, ValueError, FloatingPointError) as exc:
                raise SelectionError(f"fit at m={k} failed: {exc}", list(self.fits)) from exc
            self.fits.append(fit)
        return self.fits[m - 1]


def _select(problem: HellingerProblem, cfg: FitConfig, m_max: int, stop: Callable,
            needs_next: bool, rule: str, threshold: float, full_sweep: bool) -> SelectionResult:
    if m_max < 1:
        raise ValueError("m_max must be >= 1")
    sweep = _Sweep(problem, cfg, m_max)
    trace = []
    m_hat, cap_hit = None, True
    last = m_max - 1 if needs_next else m_max
    for m in range(1, last + 1):
        h_m = sweep.get(m).h_value
        h_next = sweep.get(m + 1).h_value if needs_next else None
        ok = stop(h_m, h_next)
        trace.append({"m": m, "h_m": h_m, "h_next": h_next, "stop": bool(ok)})
        if ok:
            m_hat, cap_hit = m, False
            break
    if m_hat is None:
        m_hat = m_max
    if full_sweep:
        sweep.get(m_max)
    else:
        sweep.get(m_hat)
    return SelectionResult(m_hat, sweep.get(m_hat).G_hat, list(sweep.fits), trace, cap_hit,
                           rule, threshold, problem.sample.n)


def _config(cfg: Optional[FitConfig], sigma1: float, sigma0: float, kernel: Optional[str]) -> FitConfig:
    cfg = cfg or FitConfig()
    changes = {"sigma1": sigma1, "sigma0": sigma0}
    if kernel is not None:
        changes["kernel"] = kernel
    return replace(cfg, **changes)


def algorithm1(data, fam: KernelFamily, sigma1: float, sigma0: float, cn, m_max: int = DEFAULT_M_MAX,
               cfg: Optional[FitConfig] = None, kernel: Optional[str] = None,
               full_sweep: bool = False) -> SelectionResult:
    """Order selection by thresholded differences of the smoothed Hellinger criterion.

    ``cn`` is a number or one of ``"bic"`` / ``"aic"``; the threshold
    compared with ``h_m - h_{m+1}`` is ``cn / sqrt(n)``.  If no ``m < m_max``
    qualifies the result is ``m_max`` with ``cap_hit`` set.
    """
    check_positive(sigma0, "sigma0")
    sample = as_sample(data)
    cfg = _config(cfg, sigma1, sigma0, kernel)
    cn_value = resolve_cn(cn, sample.n, fam.dim)
    if cn_value < 0:
        raise ValueError("C_n must be nonnegative")
    threshold = cn_value / math.sqrt(sample.n)
    problem = HellingerProblem.from_config(sample, fam, cfg)
    return _select(problem, cfg, m_max, lambda h, h1: h <= h1 + threshold, True,
                   "algorithm1", threshold, full_sweep)


def algorithm2(data, fam: KernelFamily, sigma1: float, sigma0: float, eps: float,
               m_max: int = DEFAULT_M_MAX, cfg: Optional[FitConfig] = None,
               kernel: Optional[str] = None, full_sweep: bool = False) -> SelectionResult:
    """Smallest order whose fitted criterion falls below the fixed level ``eps``."""
    check_positive(sigma0, "sigma0")
    if not eps > 0:
        raise ValueError("eps must be positive")
    sample = as_sample(data)
    cfg = _config(cfg, sigma1, sigma0, kernel)
    problem = HellingerProblem.from_config(sample, fam, cfg)
    return _select(problem, cfg, m_max, lambda h, _: h < eps, False, "algorithm2", eps, full_sweep)


def ws_algorithm(data, fam: KernelFamily, sigma0: float, cn, m_max: int = DEFAULT_M_MAX,
                 cfg: Optional[FitConfig] = None, kernel: Optional[str] = None,
                 full_sweep: bool = False) -> SelectionResult:
    """WS baseline selection: ``algorithm1`` with an unsmoothed candidate."""
    res = algorithm1(data, fam, 0.0, sigma0, cn, m_max, cfg, kernel, full_sweep)
    res.rule = "ws"
    return res


class HellingerOrderSelector(DensityMixin, BaseEstimator):
    """Estimator wrapper choosing the order and the mixing measure together.

    Parameters
    ----------
    algorithm : {"algorithm1", "algorithm2", "ws"}
    family : str or KernelFamily
    sigma1, sigma0 : float
        ``sigma1`` is ignored by ``"ws"``.
    cn : {"bic", "aic"} or float
        Tuning constant for ``algorithm1`` / ``"ws"``.
    eps : float
        Level for ``algorithm2``.
    m_max : int
    Remaining parameters are passed to the per-order fits.
    """

    def __init__(self, algorithm="algorithm1", family="gaussian", sigma1=1.0, sigma0=1.0,
                 kernel="gaussian", cn="bic", eps=0.05, m_max=DEFAULT_M_MAX, n_starts=20,
                 max_iter=500, tol=1e-8, weight_floor=1e-6, grid_points=DEFAULT_GRID_POINTS,
                 random_state=0):
        self.algorithm = algorithm
        self.family = family
        self.sigma1 = sigma1
        self.sigma0 = sigma0
        self.kernel = kernel
        self.cn = cn
        self.eps = eps
        self.m_max = m_max
        self.n_starts = n_starts
        self.max_iter = max_iter
        self.tol = tol
        self.weight_floor = weight_floor
        self.grid_points = grid_points
        self.random_state = random_state

    def fit(self, X, y=None):
        x = check_observations(X)
        fam = resolve_family(self.family)
        cfg = FitConfig(m=1, sigma1=self.sigma1 if self.algorithm != "ws" else 0.0,
                        sigma0=self.sigma0, kernel=self.kernel, starts=self.n_starts,
                        max_iters=self.max_iter, tol=self.tol, weight_floor=self.weight_floor,
                        seed=check_seed(self.random_state), grid_points=self.grid_points)
        data = Sample(x)
        if self.algorithm == "algorithm1":
            res = algorithm1(data, fam, self.sigma1, self.sigma0, self.cn, self.m_max, cfg)
        elif self.algorithm == "algorithm2":
            res = algorithm2(data, fam, self.sigma1, self.sigma0, self.eps, self.m_max, cfg)
        elif self.algorithm == "ws":
            res = ws_algorithm(data, fam, self.sigma0, self.cn, self.m_max, cfg)
        else:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        self.selection_ = res
        self.n_components_ = res.m_hat
        self.cap_hit_ = res.cap_hit
        self.mixing_measure_ = res.G_hat
        self.weights_ = np.array(res.G_hat.weights)
        self.atoms_ = np.array(res.G_hat.atoms)
        self.hellinger_ = res.fit_for(res.m_hat).h_value
        self.family_ = fam
        return self

    # density-side methods reuse the fixed-order estimator's implementations
    score_samples = MinimumHellingerMixture.score_samples
    score = MinimumHellingerMixture.score
    predict_proba = MinimumHellingerMixture.predict_proba
    predict = MinimumHellingerMixture.predict
    _component_pdf = MinimumHellingerMixture._component_pdf
