"""Simulation cases, the replication harness, log-log rate fits and the SLC fit.

Each built-in case fixes a data-generating family and mixing measure, the
family that is fitted, the smoothing kernel and bandwidths, the tuning
constant rule and the measure the estimate is compared against.  A run draws
one sample per ``(n, replication)`` from a seed derived from
``(base_seed, n, replication)`` only, selects the order, and records the
``W_1`` error.  Per sample size, errors are averaged over the replications
whose selected order equals the most frequent one.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .densities import (
    CauchyLoc,
    CauchyLocScale,
    GaussianLoc,
    GaussianLocScale,
    KernelFamily,
    ShiftMixture,
    SkewNormal,
    read_sample,
    sample,
)
from .estimator import FitConfig
from .measures import MixingMeasure, wasserstein
from .selection import SelectionError, SelectionResult, algorithm1, ws_algorithm

FULL_SIZES = tuple(200 * i for i in range(1, 21))
DESK_SIZES = tuple(200 * i for i in range(1, 11))
SLC_N = 190


class ExperimentError(ValueError):
    pass


# ---------------------------------------------------------------------------
# cases
# ---------------------------------------------------------------------------

SQ10, SQ005 = math.sqrt(10.0), math.sqrt(0.05)
_FIXED_G0 = {
    "1": MixingMeasure([[0.0, SQ10], [-0.3, SQ005], [0.3, SQ005]], [0.5, 0.25, 0.25]),
    "1.3": MixingMeasure([[0.0, SQ10, 0.0], [-0.3, SQ005, 0.0], [0.3, SQ005, 0.0]], [0.5, 0.25, 0.25]),
    "3": MixingMeasure([[0.0, 2.0], [1.0, 3.0]], [1 / 3, 2 / 3]),
    "3*": MixingMeasure([[-2.0, 2.0], [-1.0, 3.0], [2.0, 2.0], [3.0, 3.0]], [1 / 6, 1 / 3, 1 / 6, 1 / 3]),
    "4": MixingMeasure([[-1.0], [2.0]], [1 / 3, 2 / 3]),
}


def varying_g0(case_id: str, n: int) -> MixingMeasure:
    """Sample-size dependent truth of the varying-measure cases."""
    if case_id == "2.1":
        return MixingMeasure([[1 - 1 / n], [1 + 1 / n], [2.0]], [0.25, 0.25, 0.5])
    if case_id == "2.2":
        r = 1 / math.sqrt(n)
        return MixingMeasure([[1 - r], [1 + r], [1 + 2 * r]], [0.25, 0.25, 0.5])
    raise ExperimentError(f"case {case_id} has a fixed mixing measure")


def limit_measure(case_id: str) -> MixingMeasure:
    """Limit of the varying truth as ``n`` grows."""
    if case_id == "2.1":
        return MixingMeasure([[1.0], [2.0]], [0.5, 0.5])
    if case_id == "2.2":
        return MixingMeasure([[1.0]], [1.0])
    raise ExperimentError(f"case {case_id} has no varying truth")


@dataclass(frozen=True)
class CaseSpec:
    """Everything needed to reproduce one simulation case.

    ``target`` is ``"G0"`` (compare with the truth), ``"G0n"`` (the
    sample-size dependent truth) or ``"G*"`` (the best smoothed fit under a
    misspecified family, given in ``target_measure``).
    """

    case_id: str
    gen_family: KernelFamily
    fit_family: KernelFamily
    kernel: str
    sigma1: float
    sigma0: float
    k_target: int
    target: str
    g0: Optional[MixingMeasure] = None
    target_measure: Optional[MixingMeasure] = None
    cn: object = "bic"
    sample_sizes: tuple = DESK_SIZES
    replications: int = 50
    base_seed: int = 0
    m_max: Optional[int] = None
    fit: FitConfig = field(default_factory=lambda: SIMULATION_FIT)
    algorithm: str = "algorithm1"

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.sample_sizes)
        if any(b <= a for a, b in zip(sizes, sizes[1:])) or not sizes:
            raise ExperimentError("sample sizes must be strictly increasing")
        if self.replications < 1:
            raise ExperimentError("replications must be >= 1")
        if self.algorithm not in ("algorithm1", "ws"):
            raise ExperimentError(f"unknown algorithm {self.algorithm!r}")
        object.__setattr__(self, "sample_sizes", sizes)

    @property
    def max_order(self) -> int:
        return self.m_max if self.m_max is not None else self.k_target + 2

    def generating_measure(self, n: int) -> MixingMeasure:
        return self.g0 if self.g0 is not None else varying_g0(self.case_id, n)

    def target_at(self, n: int) -> MixingMeasure:
        if self.target == "G*":
            return self.target_measure
        return self.generating_measure(n)

    def describe(self) -> dict:
        return {
            "case_id": self.case_id,
            "gen_family": repr(self.gen_family),
            "fit_family": repr(self.fit_family),
            "kernel": self.kernel,
            "sigma1": self.sigma1,
            "sigma0": self.sigma0,
            "k_target": self.k_target,
            "target": self.target,
            "g0": None if self.g0 is None else self.g0.to_dict(),
            "target_measure": None if self.target_measure is None else self.target_measure.to_dict(),
            "cn": self.cn,
            "sample_sizes": list(self.sample_sizes),
            "replications": self.replications,
            "base_seed": self.base_seed,
            "m_max": self.max_order,
            "algorithm": self.algorithm,
            "fit": {k: v for k, v in asdict(self.fit).items() if k != "box"},
        }


#: per-order fit settings used by the simulation presets
SIMULATION_FIT = FitConfig(starts=5, max_iters=200, inner_iters=10, grid_points=1025)

CASE_IDS = ("1.1", "1.2", "1.3", "2.1", "2.2", "3.1", "3.2", "4.1", "4.2")


def builtin_case(case_id) -> CaseSpec:
    """Constants of the published simulation cases (desk sizes by default)."""
    cid = str(case_id)
    if cid == "1.1":
        return CaseSpec(cid, GaussianLocScale(), GaussianLocScale(), "gaussian", 1.0, 1.0, 3, "G0", _FIXED_G0["1"])
    if cid == "1.2":
        return CaseSpec(cid, CauchyLocScale(), CauchyLocScale(), "cauchy", 1.0, 1.0, 3, "G0", _FIXED_G0["1"])
    if cid == "1.3":
        return CaseSpec(cid, SkewNormal(), SkewNormal(), "gaussian", 1.0, 1.0, 3, "G0", _FIXED_G0["1.3"])
    if cid == "2.1":
        return CaseSpec(cid, GaussianLoc(), GaussianLoc(), "gaussian", 1.0, 1.0, 3, "G0n")
    if cid == "2.2":
        return CaseSpec(cid, CauchyLoc(), CauchyLoc(), "cauchy", 1.0, 1.0, 3, "G0n")
    if cid == "3.1":
        return CaseSpec(cid, ShiftMixture(GaussianLocScale(), 2.0), GaussianLocScale(), "gaussian",
                        1.0, 1.0, 4, "G*", _FIXED_G0["3"], _FIXED_G0["3*"])
    if cid == "3.2":
        return CaseSpec(cid, ShiftMixture(CauchyLocScale(), 2.0), CauchyLocScale(), "cauchy",
                        1.0, 1.0, 4, "G*", _FIXED_G0["3"], _FIXED_G0["3*"])
    if cid == "4.1":
        return CaseSpec(cid, GaussianLoc(scale=2.0), GaussianLoc(scale=1.0), "gaussian",
                        2.0, 1.0, 2, "G0", _FIXED_G0["4"])
    if cid == "4.2":
        return CaseSpec(cid, CauchyLoc(scale=2.0), CauchyLoc(scale=1.0), "cauchy",
                        2.0, 1.0, 2, "G0", _FIXED_G0["4"])
    raise ExperimentError(f"unknown case {case_id!r}; choose from {', '.join(CASE_IDS)}")


def with_preset(spec: CaseSpec, preset: str) -> CaseSpec:
    """``"desk"``: n = 200..2000, 50 replications; ``"full"``: n = 200..4000, 100 replications."""
    if preset == "desk":
        return replace(spec, sample_sizes=DESK_SIZES, replications=50)
    if preset == "full":
        return replace(spec, sample_sizes=FULL_SIZES, replications=100)
    if preset == "smoke":
        return replace(spec, sample_sizes=(200, 400, 800), replications=3)
    raise ExperimentError(f"unknown preset {preset!r}")


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------


def replication_seed(base_seed: int, n: int, rep: int) -> int:
    """Seed depending only on ``(base_seed, n, rep)``."""
    return int(np.random.SeedSequence([int(base_seed), int(n), int(rep)]).generate_state(1, np.uint32)[0])


@dataclass
class ReplicationRow:
    n: int
    rep: int
    seed: int
    m_hat: Optional[int]
    w1: Optional[float]
    cap_hit: bool = False
    sweep_h: tuple = ()
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def sweep_monotone(self) -> bool:
        return all(b <= a + 1e-12 for a, b in zip(self.sweep_h, self.sweep_h[1:]))


def run_replication(spec: CaseSpec, n: int, rep: int) -> ReplicationRow:
    seed = replication_seed(spec.base_seed, n, rep)
    data = sample(spec.generating_measure(n), spec.gen_family, n, seed)
    cfg = replace(spec.fit, seed=seed)
    try:
        if spec.algorithm == "ws":
            res = ws_algorithm(data, spec.fit_family, spec.sigma0, spec.cn, spec.max_order, cfg,
                               kernel=spec.kernel)
        else:
            res = algorithm1(data, spec.fit_family, spec.sigma1, spec.sigma0, spec.cn, spec.max_order,
                             cfg, kernel=spec.kernel)
    except SelectionError as exc:
        return ReplicationRow(n, rep, seed, None, None, error=str(exc))
    w1 = wasserstein(res.G_hat.with_box(None), spec.target_at(n), 1)
    return ReplicationRow(n, rep, seed, res.m_hat, w1, res.cap_hit, tuple(res.h_values))


def _run_one(args):
    spec, n, rep = args
    return run_replication(spec, n, rep)


def default_parallelism() -> int:
    cap = os.environ.get("MIXEST_THREADS")
    cores = os.cpu_count() or 1
    if cap:
        try:
            return max(1, min(cores, int(cap)))
        except ValueError:
            pass
    return cores


@dataclass
class SizeSummary:
    n: int
    modal_m: Optional[int]
    frac_target: float
    frac_modal: float
    mean_w1: Optional[float]
    sd_w1: Optional[float]
    se_w1: Optional[float]
    n_modal: int
    mean_w1_all: Optional[float]
    failures: int


@dataclass
class ExperimentReport:
    spec: CaseSpec
    rows: list
    summaries: list
    slope: Optional[float]
    slope_se: Optional[float]
    slope_ci: Optional[tuple]

    def summary_for(self, n: int) -> SizeSummary:
        for s in self.summaries:
            if s.n == n:
                return s
        raise KeyError(n)

    @property
    def failures(self) -> int:
        return sum(not r.ok for r in self.rows)

    @property
    def sweeps_monotone(self) -> bool:
        return all(r.sweep_monotone for r in self.rows if r.ok)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["case", "n", "rep", "m_hat", "w1"])
        for r in self.rows:
            writer.writerow([self.spec.case_id, r.n, r.rep, "" if r.m_hat is None else r.m_hat,
                             "" if r.w1 is None else _fmt(r.w1)])
        return buf.getvalue()

    def plot_data_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["log_n", "log_mean_w1", "sd_lo", "sd_hi", "ci_lo", "ci_hi", "frac_target"])
        for s in self.summaries:
            if not s.mean_w1:
                continue
            sd = s.sd_w1 or 0.0
            half = 1.96 * (s.se_w1 or 0.0)
            writer.writerow([
                _fmt(math.log(s.n)), _fmt(math.log(s.mean_w1)),
                _fmt(_safe_log(s.mean_w1 - sd)), _fmt(math.log(s.mean_w1 + sd)),
                _fmt(_safe_log(s.mean_w1 - half)), _fmt(math.log(s.mean_w1 + half)),
                _fmt(s.frac_target),
            ])
        return buf.getvalue()

    def summary_dict(self) -> dict:
        return {
            "config": self.spec.describe(),
            "per_n": [asdict(s) for s in self.summaries],
            "slope": self.slope,
            "slope_se": self.slope_se,
            "slope_ci95": None if self.slope_ci is None else list(self.slope_ci),
            "failures": self.failures,
            "sweeps_monotone": self.sweeps_monotone,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary_dict(), sort_keys=True, indent=2, default=_json_default)


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _safe_log(v):
    return math.log(v) if v > 0 else float("nan")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return repr(obj)


def summarize(spec: CaseSpec, rows: Sequence[ReplicationRow]) -> list:
    out = []
    for n in spec.sample_sizes:
        at_n = [r for r in rows if r.n == n]
        good = [r for r in at_n if r.ok]
        if not good:
            out.append(SizeSummary(n, None, 0.0, 0.0, None, None, None, 0, None, len(at_n)))
            continue
        counts: dict = {}
        for r in good:
            counts[r.m_hat] = counts.get(r.m_hat, 0) + 1
        modal = min(counts, key=lambda m: (-counts[m], m))
        errs = np.array([r.w1 for r in good if r.m_hat == modal])
        all_errs = np.array([r.w1 for r in good])
        sd = float(np.std(errs, ddof=1)) if errs.size > 1 else 0.0
        out.append(SizeSummary(
            n=n,
            modal_m=modal,
            frac_target=counts.get(spec.k_target, 0) / len(good),
            frac_modal=counts[modal] / len(good),
            mean_w1=float(np.mean(errs)),
            sd_w1=sd,
            se_w1=sd / math.sqrt(errs.size),
            n_modal=int(errs.size),
            mean_w1_all=float(np.mean(all_errs)),
            failures=len(at_n) - len(good),
        ))
    return out


def rate_slope(rows: Sequence[tuple]) -> tuple[float, float]:
    """Least-squares slope of ``log(mean W1)`` on ``log(n)`` and its standard error."""
    if len(rows) < 3:
        raise ExperimentError("need at least three (n, mean W1) rows")
    n = np.array([r[0] for r in rows], dtype=float)
    w = np.array([r[1] for r in rows], dtype=float)
    if np.any(w <= 0) or np.any(n <= 0):
        raise ExperimentError("sample sizes and mean W1 values must be positive")
    x, y = np.log(n), np.log(w)
    xc = x - x.mean()
    sxx = float(np.dot(xc, xc))
    slope = float(np.dot(xc, y - y.mean()) / sxx)
    resid = y - y.mean() - slope * xc
    dof = len(rows) - 2
    s2 = float(np.dot(resid, resid)) / dof if dof > 0 else 0.0
    return slope, math.sqrt(s2 / sxx)


def run_case(spec: CaseSpec, parallelism: Optional[int] = None, progress=None) -> ExperimentReport:
    """Run every ``(n, replication)`` of a case and aggregate.

    Results are keyed by ``(n, rep)``, so the report does not depend on the
    degree of parallelism or completion order.
    """
    jobs = [(spec, n, rep) for n in spec.sample_sizes for rep in range(spec.replications)]
    workers = default_parallelism() if parallelism is None else max(1, int(parallelism))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = []
            for row in pool.map(_run_one, jobs, chunksize=1):
                rows.append(row)
                if progress:
                    progress(row)
    else:
        rows = []
        for job in jobs:
            row = _run_one(job)
            rows.append(row)
            if progress:
                progress(row)
    rows.sort(key=lambda r: (r.n, r.rep))
    summaries = summarize(spec, rows)
    pts = [(s.n, s.mean_w1) for s in summaries if s.mean_w1 is not None and s.mean_w1 > 0]
    slope = se = ci = None
    if len(pts) >= 3:
        slope, se = rate_slope(pts)
        tq = stats.t.ppf(0.975, len(pts) - 2)
        ci = (slope - tq * se, slope + tq * se)
    return ExperimentReport(spec, rows, summaries, slope, se, ci)


# ---------------------------------------------------------------------------
# SLC data
# ---------------------------------------------------------------------------


@dataclass
class SLCResult:
    selection: SelectionResult
    row: dict

    def table_row(self) -> str:
        k = len(self.row["p"])
        cells = [f"{v:.3f}" for key in ("p", "eta", "tau") for v in self.row[key]]
        head = " | ".join([f"p{i + 1}" for i in range(k)] + [f"eta{i + 1}" for i in range(k)]
                          + [f"tau{i + 1}" for i in range(k)])
        return f"m_hat={self.selection.m_hat}\n{head}\n" + " | ".join(cells)


def parameter_row(G: MixingMeasure) -> dict:
    """Weights, means and scales ordered by decreasing mean."""
    order = np.argsort(-G.atoms[:, 0], kind="stable")
    return {
        "p": [float(G.weights[i]) for i in order],
        "eta": [float(G.atoms[i, 0]) for i in order],
        "tau": [float(G.atoms[i, 1]) for i in order],
    }


def slc_pipeline(path, sigma1: float = 0.05, sigma0: float = 0.05, cn="bic",
                 m_max: int = 6, cfg: Optional[FitConfig] = None,
                 expected_n: Optional[int] = SLC_N) -> SLCResult:
    """Fit a normal location-scale mixture to the SLC activity data."""
    if not os.path.exists(path):
        raise ExperimentError(f"SLC data file not found: {path}")
    data = read_sample(path)
    if expected_n is not None and data.n != expected_n:
        raise ExperimentError(f"{path}: expected {expected_n} observations, found {data.n}")
    cfg = cfg or FitConfig()
    res = algorithm1(data, GaussianLocScale(), sigma1, sigma0, cn, m_max, cfg)
    return SLCResult(res, parameter_row(res.G_hat))
