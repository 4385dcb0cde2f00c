"""Minimum Hellinger distance fit of a finite mixture at a fixed order.

For a sample ``X_1..X_n`` the target is the kernel estimate
``q = P_n * K_{sigma0}`` tabulated on a quadrature grid.  A candidate
mixing measure ``G`` with at most ``m`` atoms is scored through the smoothed
candidate ``p_G = p_{G,f} * K_{sigma1}`` and the affinity
``A(G) = int sqrt(p_G q)``; maximizing ``A`` minimizes the Hellinger distance
``sqrt(1 - A)``.

The optimizer alternates two monotone moves, in the spirit of the HMIX
iteration for minimum Hellinger fits of mixtures:

* weights: multiplicative update ``w_i <- w_i c_i / A`` where ``c_i`` is twice
  the partial derivative of ``A`` in ``w_i``, projected onto the floored
  simplex and safeguarded by backtracking;
* atoms: a few L-BFGS-B iterations on the quadrature objective inside the
  parameter box, with weights held fixed.

A short compass-search polish runs on the winner of several starts.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator, DensityMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_nonnegative, check_observations, check_positive, check_seed
from .densities import (
    DEFAULT_GRID_POINTS,
    KernelFamily,
    QuadratureGrid,
    Sample,
    SmoothingKernel,
    as_sample,
    convolve,
    grid_for_fit,
    make_family,
    smoothed_empirical,
)
from .densities import sample as draw_sample
from .divergences import hellinger_from_affinity
from .measures import MixingMeasure, ParameterBox, canonicalize


class FitError(RuntimeError):
    """Raised when no start produced a usable fit."""


@dataclass(frozen=True)
class FitConfig:
    """Settings for one fixed-order fit.

    ``sigma1 = 0`` leaves the candidate mixture unsmoothed (the
    WS baseline criterion).  ``box = None`` picks the family default from the
    data.
    """

    m: int = 1
    sigma1: float = 1.0
    sigma0: float = 1.0
    kernel: str = "gaussian"
    box: Optional[ParameterBox] = None
    starts: int = 20
    max_iters: int = 500
    tol: float = 1e-8
    weight_floor: float = 1e-6
    seed: int = 0
    grid_points: int = DEFAULT_GRID_POINTS
    inner_iters: int = 15
    polish: bool = True
    n_jobs: int = 1

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be a positive integer, got {self.m!r}")
        check_nonnegative(self.sigma1, "sigma1")
        check_positive(self.sigma0, "sigma0")
        if self.starts < 1:
            raise ValueError("starts must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not (0 <= self.weight_floor < 1.0 / self.m):
            raise ValueError("weight_floor must lie in [0, 1/m)")
        if self.max_iters < 1 or self.inner_iters < 1:
            raise ValueError("iteration limits must be >= 1")

    def with_m(self, m: int) -> "FitConfig":
        return replace(self, m=m)


@dataclass
class FitResult:
    """Outcome of a fixed-order fit."""

    G_hat: MixingMeasure
    h_value: float
    affinity: float
    iterations: int
    converged: bool
    start_index: int
    m: int
    trace: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "G_hat": self.G_hat.to_dict(),
            "h_value": self.h_value,
            "affinity": self.affinity,
            "diagnostics": {
                "iterations": self.iterations,
                "converged": self.converged,
                "start_index": self.start_index,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


class HellingerProblem:
    """Grid, target density and smoothed candidate family shared by every fit on one sample.

    Parameters
    ----------
    data : array-like or Sample
    fam : KernelFamily
        Family fitted to the data (before smoothing).
    sigma1, sigma0 : float
        Bandwidths applied to the candidate and to the empirical measure.
    kernel : {"gaussian", "cauchy"}
    grid : QuadratureGrid, optional
        Defaults to :func:`grid_for_fit` on the data.
    box : ParameterBox, optional
        Defaults to ``fam.default_box(data)``.
    """

    def __init__(self, data, fam: KernelFamily, sigma1: float, sigma0: float,
                 kernel: str = "gaussian", grid: Optional[QuadratureGrid] = None,
                 box: Optional[ParameterBox] = None, grid_points: int = DEFAULT_GRID_POINTS):
        self.sample = as_sample(data)
        check_nonnegative(sigma1, "sigma1")
        check_positive(sigma0, "sigma0")
        self.fam = fam
        self.sigma1 = float(sigma1)
        self.sigma0 = float(sigma0)
        self.kernel = kernel
        self.grid = grid if grid is not None else grid_for_fit(
            self.sample.observations, fam, (sigma0, sigma1), grid_points)
        self.box = box if box is not None else fam.default_box(self.sample.observations)
        if self.box.dim != fam.dim:
            raise ValueError("parameter box dimension does not match the family")
        self.smoothed_fam = convolve(fam, SmoothingKernel(kernel, sigma1))
        k0 = SmoothingKernel(kernel, sigma0)
        self.target = smoothed_empirical(self.sample, k0, self.grid)
        self._wsq = self.grid.weights * np.sqrt(self.target)
        # Heavy tails leave visible mass outside any practical grid.  Each
        # side then contributes sqrt(mass_p * mass_q) to the affinity, exact
        # when both tails decay at the same polynomial rate.  The two side
        # masses ride along as extra columns of the component matrix.
        lo, hi = float(self.grid.points[0]), float(self.grid.points[-1])
        self._edges = (lo, hi)
        probe = np.atleast_2d(self.box.clip(0.5 * (self.box.lower + self.box.upper)))
        self.tail_corrected = self.smoothed_fam.tail_masses(lo, hi, probe) is not None
        if self.tail_corrected:
            obs = self.sample.observations
            mq = np.array([math.fsum(k0.cdf(lo - obs)), math.fsum(k0.cdf(obs - hi))]) / obs.size
            self.target_tails = mq
            self._wsq = np.concatenate([self._wsq, np.sqrt(mq)])

    @classmethod
    def from_config(cls, data, fam: KernelFamily, cfg: FitConfig) -> "HellingerProblem":
        return cls(data, fam, cfg.sigma1, cfg.sigma0, cfg.kernel, box=cfg.box,
                   grid_points=cfg.grid_points)

    @property
    def data_scale(self) -> float:
        obs = self.sample.observations
        return float(np.std(obs, ddof=1)) if obs.size > 1 else 1.0

    # -- objective ------------------------------------------------------------

    def components(self, atoms) -> np.ndarray:
        """Component densities on the grid, plus tail-mass columns when tails are corrected."""
        F = self.smoothed_fam.pdf(self.grid.points, atoms)
        if self.tail_corrected:
            M, _ = self.smoothed_fam.tail_masses(*self._edges, atoms)
            F = np.hstack([F, M])
        return F

    def components_and_grad(self, atoms):
        F, dF = self.smoothed_fam.pdf_and_grad(self.grid.points, atoms)
        if self.tail_corrected:
            M, dM = self.smoothed_fam.tail_masses(*self._edges, atoms)
            F = np.hstack([F, M])
            dF = np.concatenate([dF, dM], axis=2)
        return F, dF

    def candidate(self, atoms, weights) -> np.ndarray:
        """Smoothed candidate density on the grid points."""
        return np.asarray(weights) @ self.smoothed_fam.pdf(self.grid.points, atoms)

    def affinity_of(self, atoms, weights) -> float:
        return float(np.dot(self._wsq, np.sqrt(np.asarray(weights) @ self.components(atoms))))

    def _affinity_F(self, F, w) -> float:
        return float(np.dot(self._wsq, np.sqrt(w @ F)))

    def _ratio(self, p):
        return self._wsq / np.sqrt(np.maximum(p, 1e-280))

    def gradient(self, atoms, weights):
        """Gradient of the affinity in ``(atoms, weights)``."""
        atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
        w = np.asarray(weights, dtype=float)
        F, dF = self.components_and_grad(atoms)
        r = self._ratio(w @ F)
        g_w = 0.5 * F @ r
        g_atoms = 0.5 * w[:, None] * np.einsum("kdn,n->kd", dF, r)
        return g_atoms, g_w

    def evaluate(self, G: MixingMeasure) -> tuple[float, float]:
        aff = self.affinity_of(G.atoms, G.weights)
        return hellinger_from_affinity(aff), aff


def objective(G: MixingMeasure, data, fam: KernelFamily, cfg: FitConfig) -> tuple[float, float]:
    """``(h, affinity)`` between the smoothed candidate ``p_{G,f} * K_{sigma1}`` and ``P_n * K_{sigma0}``."""
    return HellingerProblem.from_config(data, fam, cfg).evaluate(G)


# ---------------------------------------------------------------------------
# starting points
# ---------------------------------------------------------------------------


def _complete_atoms(locs, scale, m, box, fam):
    cols = [np.asarray(locs, dtype=float)]
    if fam.dim >= 2:
        cols.append(np.full(m, scale))
    while len(cols) < fam.dim:
        cols.append(np.zeros(m))
    return box.clip(np.column_stack(cols)[:, : fam.dim])


def initial_starts(data, m: int, box: ParameterBox, starts: int, seed: int,
                   fam: Optional[KernelFamily] = None) -> list[MixingMeasure]:
    """Deterministic list of ``starts`` starting measures with uniform weights.

    Start 0 spreads locations over the data quantiles ``i / (m + 1)`` with
    scale ``sd / m``; later starts alternate k-means++ seeding on the
    observations and uniform draws from the box.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    obs = np.sort(as_sample(data).observations)
    if fam is None:
        fam = _family_for_box(box)
    rng = np.random.default_rng(seed)
    sd = float(np.std(obs, ddof=1)) if obs.size > 1 else 1.0
    weights = np.full(m, 1.0 / m)
    out = []

    if m == 1:
        locs = [float(np.median(obs))]
    else:
        locs = np.quantile(obs, np.arange(1, m + 1) / (m + 1))
    out.append(_complete_atoms(locs, sd / m, m, box, fam))

    i = 1
    while len(out) < starts:
        if i % 2 == 1:
            centers = [obs[rng.integers(obs.size)]]
            for _ in range(1, m):
                d2 = np.min((obs[:, None] - np.array(centers)[None, :]) ** 2, axis=1)
                tot = d2.sum()
                probs = d2 / tot if tot > 0 else None
                centers.append(obs[rng.choice(obs.size, p=probs)])
            atoms = _complete_atoms(np.sort(centers), sd / m, m, box, fam)
        else:
            atoms = box.lower + rng.random((m, box.dim)) * (box.upper - box.lower)
        out.append(atoms)
        i += 1
    return [MixingMeasure(a, weights, box) for a in out]


def _family_for_box(box: ParameterBox) -> KernelFamily:
    return {1: make_family("gaussian-loc"), 2: make_family("gaussian"), 3: make_family("skewnormal")}[box.dim]


def warm_start_split(prev: FitResult, data_sd: float = 1.0, fam: Optional[KernelFamily] = None,
                     box: Optional[ParameterBox] = None) -> MixingMeasure:
    """Split the heaviest atom of an order-``m`` fit into two, giving ``m + 1`` atoms.

    The copies move by ``+/- 0.5 * scale`` in location (``data_sd / 10``
    for location-only families) and share the original weight.
    """
    G = prev.G_hat
    box = box if box is not None else G.box
    i = int(np.argmax(G.weights))
    atom = G.atoms[i].copy()
    scale_idx = fam.scale_index if fam is not None else (1 if G.dim >= 2 else None)
    step = 0.5 * (atom[scale_idx] if scale_idx is not None else data_sd / 10.0)
    left, right = atom.copy(), atom.copy()
    left[0] -= step
    right[0] += step
    atoms = np.vstack([np.delete(G.atoms, i, axis=0), left, right])
    weights = np.concatenate([np.delete(G.weights, i), [G.weights[i] / 2, G.weights[i] / 2]])
    if box is not None:
        atoms = box.clip(atoms)
    weights = weights / math.fsum(weights)
    return MixingMeasure(atoms, weights, box)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


def project_floored_simplex(v, floor: float) -> np.ndarray:
    """Euclidean projection onto ``{w : w_i >= floor, sum w = 1}``."""
    v = np.asarray(v, dtype=float)
    m = v.size
    budget = 1.0 - m * floor
    y = v - floor
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - budget
    idx = np.arange(1, m + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    tau = css[rho] / (rho + 1)
    return np.maximum(y - tau, 0.0) + floor


@dataclass
class _Run:
    atoms: np.ndarray
    weights: np.ndarray
    affinity: float
    iterations: int
    converged: bool
    trace: list


def _weight_steps(F, w, aff, wsq, floor, n_steps=20, tol=1e-12):
    for _ in range(n_steps):
        p = w @ F
        r = wsq / np.sqrt(np.maximum(p, 1e-280))
        c = F @ r
        new = w * c
        s = new.sum()
        if not s > 0:
            break
        new = project_floored_simplex(new / s, floor)
        t = 1.0
        accepted = False
        for _ in range(30):
            trial = w + t * (new - w)
            a_trial = float(np.dot(wsq, np.sqrt(trial @ F)))
            if a_trial >= aff:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        gain = a_trial - aff
        w, aff = trial, a_trial
        if gain < tol:
            break
    return w, aff


def _atom_step(problem: HellingerProblem, atoms, w, aff, maxiter):
    shape = atoms.shape
    box = problem.box
    bounds = list(zip(np.repeat(box.lower[None, :], shape[0], 0).ravel(),
                      np.repeat(box.upper[None, :], shape[0], 0).ravel()))

    def fun(z):
        at = z.reshape(shape)
        F, dF = problem.components_and_grad(at)
        p = w @ F
        sp = np.sqrt(p)
        a = float(np.dot(problem._wsq, sp))
        r = problem._wsq / np.maximum(sp, 1e-140)
        g = 0.5 * w[:, None] * np.einsum("kdn,n->kd", dF, r)
        return -a, -g.ravel()

    res = minimize(fun, atoms.ravel(), jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": maxiter, "ftol": 1e-15, "gtol": 1e-12})
    new_aff = -float(res.fun)
    if new_aff >= aff:
        return box.clip(res.x.reshape(shape)), new_aff
    return atoms, aff


def _polish(problem: HellingerProblem, atoms, w, aff, floor, sweeps: int = 4):
    """Compass search over atom coordinates and pairwise weight transfers."""
    box = problem.box
    width = box.upper - box.lower
    step = 1e-3 * width
    atoms = atoms.copy()
    for _ in range(sweeps):
        improved = False
        for i in range(atoms.shape[0]):
            for d in range(atoms.shape[1]):
                for sgn in (1.0, -1.0):
                    trial = atoms.copy()
                    trial[i, d] = np.clip(trial[i, d] + sgn * step[d], box.lower[d], box.upper[d])
                    a = problem.affinity_of(trial, w)
                    if a > aff:
                        atoms, aff, improved = trial, a, True
                        break
        m = w.size
        wstep = 1e-3
        for i in range(m):
            for j in range(m):
                if i == j:
                    continue
                delta = min(wstep, w[j] - floor)
                if delta <= 0:
                    continue
                trial = w.copy()
                trial[i] += delta
                trial[j] -= delta
                a = problem.affinity_of(atoms, trial)
                if a > aff:
                    w, aff, improved = trial, a, True
        if not improved:
            step = step / 4.0
    return atoms, w, aff


def _run_start(problem: HellingerProblem, G0: MixingMeasure, cfg: FitConfig) -> _Run:
    atoms = problem.box.clip(np.array(G0.atoms, dtype=float))
    w = project_floored_simplex(np.array(G0.weights, dtype=float), cfg.weight_floor)
    aff = problem.affinity_of(atoms, w)
    trace = [aff]
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        prev = aff
        F = problem.components(atoms)
        w, aff = _weight_steps(F, w, aff, problem._wsq, cfg.weight_floor)
        atoms, aff = _atom_step(problem, atoms, w, aff, cfg.inner_iters)
        trace.append(aff)
        if aff - prev < cfg.tol:
            converged = True
            break
    return _Run(atoms, w, aff, it, converged, trace)


def _finish(problem: HellingerProblem, run: _Run, cfg: FitConfig, index: int) -> FitResult:
    w = np.where(run.weights <= cfg.weight_floor * (1 + 1e-9), 0.0, run.weights)
    if w.sum() <= 0:
        w = run.weights
    G = canonicalize(run.atoms, w / w.sum(), box=problem.box, sum_tol=1e-6)
    h, aff = problem.evaluate(G)
    return FitResult(G, h, aff, run.iterations, run.converged, index, cfg.m, run.trace)


def _rank_key(res: FitResult):
    return (res.h_value, res.G_hat.k, tuple(res.G_hat.atoms.ravel().tolist()))


def fit_problem(problem: HellingerProblem, cfg: FitConfig,
                extra_starts: Sequence[MixingMeasure] = (),
                include: Sequence[FitResult] = ()) -> FitResult:
    """Best-of-starts fit on a prepared problem.

    ``extra_starts`` are optimized in addition to the generated ones;
    ``include`` holds finished fits from a lower order that compete as-is,
    which makes the best criterion value non-increasing along an order sweep.
    """
    starts = initial_starts(problem.sample, cfg.m, problem.box, cfg.starts, cfg.seed, problem.fam)
    starts = list(extra_starts) + starts
    n_extra = len(extra_starts)

    def one(idx_start):
        idx, G0 = idx_start
        run = _run_start(problem, G0, cfg)
        return _finish(problem, run, cfg, idx - n_extra)

    jobs = list(enumerate(starts))
    if cfg.n_jobs > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(j) for j in jobs]
    results = [r for r in results if math.isfinite(r.h_value)]
    if not results:
        raise FitError("no start produced a finite criterion value")
    best = min(results, key=_rank_key)

    if cfg.polish:
        atoms = np.array(best.G_hat.atoms)
        w = project_floored_simplex(np.array(best.G_hat.weights), 0.0)
        a2, w2, aff2 = _polish(problem, atoms, w, best.affinity, 0.0)
        if aff2 > best.affinity:
            G = canonicalize(a2, w2 / w2.sum(), box=problem.box, sum_tol=1e-6)
            h, aff = problem.evaluate(G)
            if h < best.h_value:
                best = FitResult(G, h, aff, best.iterations, best.converged, best.start_index,
                                 cfg.m, best.trace)

    for prior in include:
        if prior.h_value < best.h_value:
            best = FitResult(prior.G_hat, prior.h_value, prior.affinity, prior.iterations,
                             prior.converged, -1, cfg.m, prior.trace)
    return best


def fit_fixed_order(data, fam: KernelFamily, cfg: FitConfig) -> FitResult:
    """Minimum Hellinger estimate over mixing measures with at most ``cfg.m`` atoms."""
    if cfg.m < 1:
        raise ValueError("m must be >= 1")
    problem = HellingerProblem.from_config(data, fam, cfg)
    return fit_problem(problem, cfg)


# ---------------------------------------------------------------------------
# estimator API
# ---------------------------------------------------------------------------


def resolve_family(family) -> KernelFamily:
    if isinstance(family, KernelFamily):
        return family
    return make_family(str(family))


class MinimumHellingerMixture(DensityMixin, BaseEstimator):
    """Fixed-order minimum Hellinger distance mixture estimator.

    Parameters
    ----------
    n_components : int, default=1
        Maximum number of atoms ``m``.
    family : str or KernelFamily, default="gaussian"
        Component family; see :data:`mixest.densities.FAMILY_NAMES`.
    sigma1, sigma0 : float, default=1.0
        Bandwidths of the candidate and empirical smoothing.
    kernel : {"gaussian", "cauchy"}, default="gaussian"
    n_starts : int, default=20
    max_iter : int, default=500
    tol : float, default=1e-8
    weight_floor : float, default=1e-6
    grid_points : int, default=4097
    random_state : int, default=0

    Attributes
    ----------
    mixing_measure_ : MixingMeasure
    weights_, atoms_ : ndarray
    hellinger_ : float
        Achieved criterion value.
    fit_result_ : FitResult
    """

    def __init__(self, n_components=1, family="gaussian", sigma1=1.0, sigma0=1.0,
                 kernel="gaussian", n_starts=20, max_iter=500, tol=1e-8,
                 weight_floor=1e-6, grid_points=DEFAULT_GRID_POINTS, random_state=0):
        self.n_components = n_components
        self.family = family
        self.sigma1 = sigma1
        self.sigma0 = sigma0
        self.kernel = kernel
        self.n_starts = n_starts
        self.max_iter = max_iter
        self.tol = tol
        self.weight_floor = weight_floor
        self.grid_points = grid_points
        self.random_state = random_state

    def _config(self, m=None) -> FitConfig:
        seed = check_seed(self.random_state)
        return FitConfig(m=m or self.n_components, sigma1=self.sigma1, sigma0=self.sigma0,
                         kernel=self.kernel, starts=self.n_starts, max_iters=self.max_iter,
                         tol=self.tol, weight_floor=self.weight_floor, seed=seed,
                         grid_points=self.grid_points)

    def fit(self, X, y=None):
        x = check_observations(X)
        fam = resolve_family(self.family)
        cfg = self._config()
        result = fit_fixed_order(Sample(x), fam, cfg)
        self._store(result, fam)
        return self

    def _store(self, result: FitResult, fam: KernelFamily):
        self.family_ = fam
        self.fit_result_ = result
        self.mixing_measure_ = result.G_hat
        self.weights_ = np.array(result.G_hat.weights)
        self.atoms_ = np.array(result.G_hat.atoms)
        self.hellinger_ = result.h_value
        self.n_iter_ = result.iterations
        self.converged_ = result.converged

    def _component_pdf(self, X):
        check_is_fitted(self, "mixing_measure_")
        x = check_observations(X)
        return self.family_.pdf(x, self.atoms_)

    def score_samples(self, X):
        """Log density of the fitted (unsmoothed) mixture at each observation."""
        check_is_fitted(self, "mixing_measure_")
        dens = self.weights_ @ self._component_pdf(X)
        with np.errstate(divide="ignore"):
            return np.log(dens)

    def score(self, X, y=None):
        return float(np.mean(self.score_samples(X)))

    def predict_proba(self, X):
        check_is_fitted(self, "mixing_measure_")
        comp = self.weights_[:, None] * self._component_pdf(X)
        tot = comp.sum(axis=0)
        tot[tot == 0] = 1.0
        return (comp / tot).T

    def predict(self, X):
        """Index of the most probable component for each observation."""
        return np.argmax(self.predict_proba(X), axis=1)

    def sample(self, n_samples=1, random_state=None):
        check_is_fitted(self, "mixing_measure_")
        seed = self.random_state if random_state is None else random_state
        return draw_sample(self.mixing_measure_, self.family_, n_samples, seed).observations
