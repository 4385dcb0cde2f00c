"""Command line entry point: ``mixest fit | simulate | slc | distance``.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
Options may also come from ``--config FILE`` holding ``key = value`` lines
named after the long options; explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from .densities import (
    FAMILY_NAMES,
    DensityError,
    QuadratureGrid,
    SmoothingKernel,
    convolve,
    make_family,
    mixture_density,
    read_sample,
)
from .divergences import hellinger, total_variation
from .estimator import FitConfig, FitError
from .experiments import (
    CASE_IDS,
    ExperimentError,
    builtin_case,
    default_parallelism,
    run_case,
    slc_pipeline,
    with_preset,
)
from .measures import MeasureError, MixingMeasure, wasserstein
from .selection import SelectionError, algorithm1, algorithm2, ws_algorithm

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def atomic_write(path, text: str) -> None:
    """Write via a temporary file in the same directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_config_file(path) -> dict:
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in text.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _cn_arg(text: str):
    if text.lower() in ("bic", "aic"):
        return text.lower()
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"C_n must be bic, aic or a number, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mixest", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key = value file providing defaults for the options")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    fit = sub.add_parser("fit", help="select the order and fit a mixing measure to a data file")
    fit.add_argument("data", help="one observation per line")
    fit.add_argument("--algo", choices=["1", "2", "ws"], default="1")
    fit.add_argument("--family", choices=sorted(FAMILY_NAMES), default="gaussian")
    fit.add_argument("--kernel", choices=["gaussian", "cauchy"], default="gaussian")
    fit.add_argument("--sigma1", type=float, default=1.0)
    fit.add_argument("--sigma0", type=float, default=1.0)
    fit.add_argument("--cn", type=_cn_arg, default="bic")
    fit.add_argument("--eps", type=float, default=0.05)
    fit.add_argument("--m-max", type=int, default=10)
    fit.add_argument("--starts", type=int, default=20)
    fit.add_argument("--grid-points", type=int, default=4097)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--out", default=".", help="output directory")
    fit.add_argument("--full-sweep", action="store_true")

    sim = sub.add_parser("simulate", help="run a built-in simulation case")
    sim.add_argument("--case", required=True, help="one of " + ", ".join(CASE_IDS))
    sim.add_argument("--preset", choices=["desk", "full", "smoke"], default="desk")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--reps", type=int, default=None, help="override the replication count")
    sim.add_argument("--algo", choices=["1", "ws"], default="1")
    sim.add_argument("--jobs", type=int, default=None)
    sim.add_argument("--out", default=".")

    slc = sub.add_parser("slc", help="fit the SLC activity data")
    slc.add_argument("data", nargs="?", default=None)
    slc.add_argument("--sigma1", type=float, default=0.05)
    slc.add_argument("--sigma0", type=float, default=0.05)
    slc.add_argument("--cn", type=_cn_arg, default="bic")
    slc.add_argument("--seed", type=int, default=0)
    slc.add_argument("--out", default=".")

    dist = sub.add_parser("distance", help="distance between two mixing measures (JSON files)")
    dist.add_argument("metric", choices=["wasserstein", "hellinger", "tv"])
    dist.add_argument("g1")
    dist.add_argument("g2")
    dist.add_argument("--r", type=int, default=1)
    dist.add_argument("--family", choices=sorted(FAMILY_NAMES), default="gaussian")
    dist.add_argument("--kernel", choices=["gaussian", "cauchy"], default="gaussian")
    dist.add_argument("--sigma", type=float, default=0.0)
    dist.add_argument("--grid-points", type=int, default=4097)
    return parser


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = read_config_file(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, raw in values.items():
            if key not in known:
                raise UsageError(f"unknown config key {key!r} for {args.command}")
            action = known[key]
            defaults[key] = action.type(raw) if action.type else raw
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _resolved(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items())}


def _load_measure(path) -> MixingMeasure:
    if not os.path.exists(path):
        raise UsageError(f"measure file not found: {path}")
    with open(path) as fh:
        return MixingMeasure.from_json(fh.read())


def cmd_fit(args) -> int:
    if not os.path.exists(args.data):
        raise UsageError(f"data file not found: {args.data}")
    if not args.sigma0 > 0:
        raise UsageError("sigma0 must be positive")
    if args.sigma1 < 0:
        raise UsageError("sigma1 must be nonnegative")
    data = read_sample(args.data)
    fam = make_family(args.family)
    cfg = FitConfig(starts=args.starts, seed=args.seed, grid_points=args.grid_points,
                    sigma1=args.sigma1, sigma0=args.sigma0, kernel=args.kernel)
    if args.algo == "1":
        res = algorithm1(data, fam, args.sigma1, args.sigma0, args.cn, args.m_max, cfg,
                         full_sweep=args.full_sweep)
    elif args.algo == "2":
        res = algorithm2(data, fam, args.sigma1, args.sigma0, args.eps, args.m_max, cfg,
                         full_sweep=args.full_sweep)
    else:
        res = ws_algorithm(data, fam, args.sigma0, args.cn, args.m_max, cfg, full_sweep=args.full_sweep)
    payload = res.to_dict()
    payload["config"] = _resolved(args)
    out = Path(args.out) / "fit_result.json"
    atomic_write(out, json.dumps(payload, indent=2, sort_keys=True))
    print(f"m_hat = {res.m_hat}{' (cap hit)' if res.cap_hit else ''}")
    for fit in res.sweep:
        print(f"  m={fit.m}  h={fit.h_value:.6f}")
    print(f"G_hat = {res.G_hat!r}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        spec = builtin_case(args.case)
    except ExperimentError as exc:
        raise UsageError(str(exc)) from None
    spec = with_preset(spec, args.preset)
    changes = {"base_seed": args.seed, "algorithm": "ws" if args.algo == "ws" else "algorithm1"}
    if args.reps is not None:
        if args.reps < 1:
            raise UsageError("--reps must be >= 1")
        changes["replications"] = args.reps
    spec = replace(spec, **changes)
    report = run_case(spec, parallelism=args.jobs if args.jobs else default_parallelism())
    stem = f"case_{spec.case_id}{'_ws' if spec.algorithm == 'ws' else ''}"
    out = Path(args.out)
    summary = report.summary_dict()
    summary["cli_config"] = _resolved(args)
    atomic_write(out / f"{stem}_rows.csv", report.to_csv())
    atomic_write(out / f"{stem}_summary.json",
                 json.dumps(summary, sort_keys=True, indent=2, default=repr))
    atomic_write(out / f"{stem}_plot.csv", report.plot_data_csv())
    if report.slope is None:
        print("slope: not enough sample sizes with positive mean error")
    else:
        print(f"slope = {report.slope:.4f} +/- {report.slope_se:.4f}")
    for s in report.summaries:
        print(f"  n={s.n:5d}  modal m={s.modal_m}  frac(m={spec.k_target})={s.frac_target:.2f}  "
              f"mean W1={s.mean_w1}")
    return EXIT_OK


def cmd_slc(args) -> int:
    if args.data is None:
        raise UsageError("slc needs the path of the SLC data file")
    if not os.path.exists(args.data):
        raise UsageError(f"data file not found: {args.data}")
    if not args.sigma0 > 0:
        raise UsageError("sigma0 must be positive")
    cfg = FitConfig(seed=args.seed)
    try:
        result = slc_pipeline(args.data, args.sigma1, args.sigma0, args.cn, cfg=cfg)
    except ExperimentError as exc:
        raise UsageError(str(exc)) from None
    payload = result.selection.to_dict()
    payload["table_row"] = result.row
    payload["config"] = _resolved(args)
    out = Path(args.out) / "slc_result.json"
    atomic_write(out, json.dumps(payload, indent=2, sort_keys=True))
    print(result.table_row())
    return EXIT_OK


def cmd_distance(args) -> int:
    G1, G2 = _load_measure(args.g1), _load_measure(args.g2)
    if args.metric == "wasserstein":
        print(f"{wasserstein(G1, G2, args.r):.17g}")
        return EXIT_OK
    fam = convolve(make_family(args.family), SmoothingKernel(args.kernel, args.sigma))
    atoms = np.vstack([G1.atoms, G2.atoms])
    spread = fam.typical_scale(atoms) if fam.scale_index is not None else fam.typical_scale()
    pad = (200.0 if "cauchy" in fam.tag else 12.0) * spread
    grid = QuadratureGrid.uniform(float(atoms[:, 0].min()) - pad, float(atoms[:, 0].max()) + pad,
                                  args.grid_points)
    p, q = mixture_density(G1, fam, grid), mixture_density(G2, fam, grid)
    value = hellinger(p, q, grid) if args.metric == "hellinger" else total_variation(p, q, grid)
    print(f"{value:.17g}")
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "slc": cmd_slc, "distance": cmd_distance}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"mixest: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MeasureError, DensityError, ExperimentError, ValueError, OSError) as exc:
        print(f"mixest: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SelectionError, FitError, FloatingPointError, ArithmeticError) as exc:
        print(f"mixest: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
