"""Command-line entry point: ``mudlab <command> [flags]``.

Every command writes CSV (stdout unless ``--output``). Flags may also come
from ``--config FILE`` holding ``key = value`` lines (``#`` starts a comment,
keys are flag names without the leading dashes); flags given on the command
line override the file. Exit status: 0 success, 2 invalid arguments or
specification, 1 runtime failure.
"""

import argparse
import math
import sys

from . import harness
from .detectors import DetectorConfig, Kind
from .harness import ExperimentSpec, write_csv

__all__ = ["main", "build_parser", "read_config"]


class SpecError(ValueError):
    pass


def _floats(text):
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        v = float(part)                    # accepts "-inf"
        if math.isnan(v):
            raise argparse.ArgumentTypeError("NaN is not allowed")
        out.append(v)
    if not out:
        raise argparse.ArgumentTypeError("expected a comma-separated list of numbers")
    return out


def _ints(text):
    try:
        return [int(p) for p in str(text).split(",") if p.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _kinds(text):
    try:
        return [Kind(p.strip().lower()) for p in str(text).split(",") if p.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def read_config(path):
    """Parse a ``key = value`` file into a dict of strings."""
    out = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise SpecError(f"cannot read config {path!r}: {exc}") from exc
    for no, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SpecError(f"{path}:{no}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


def _common(p, sim=True):
    p.add_argument("--config", help="key = value file; command-line flags take precedence")
    p.add_argument("--output", "-o", help="CSV path (default stdout)")
    if sim:
        p.add_argument("--seed", type=int, help="master seed (required)")
        p.add_argument("--threads", type=int, help="worker threads (default MUDLAB_THREADS or CPU count)")
        p.add_argument("--timing", type=_bool, nargs="?", const=True, default=False,
                       help="include wall_time (makes output non-deterministic)")


def _detector(p, default="sspda"):
    p.add_argument("--detector", type=_kinds, default=[Kind(default)], help="pda, pspda, sspda or mic")
    p.add_argument("--omega", type=float, help="damping (default 0.4 for pspda, else 0)")
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--init", default="zero", choices=["zero", "mf", "prior"])


def _sweep(p, k=64, alpha="1", ebn0="8"):
    p.add_argument("--k", type=_ints, default=[k], help="number of users (list)")
    p.add_argument("--alpha", type=_floats, default=_floats(alpha), help="load K/N (list)")
    p.add_argument("--ebn0", type=_floats, default=_floats(ebn0), help="Eb/N0 in dB (list; use --ebn0=-inf)")
    p.add_argument("--min-errors", type=int, default=100)
    p.add_argument("--max-trials", type=int, default=1000)
    p.add_argument("--symbols-per-trial", type=int, default=1)


def build_parser():
    ap = argparse.ArgumentParser(prog="mudlab", description="CDMA multiuser detection experiments")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="BER vs Eb/N0 after convergence")
    _common(p), _sweep(p), _detector(p)

    p = sub.add_parser("trajectory", help="per-stage BER over a fixed number of stages")
    _common(p), _sweep(p, 512, "0.1", "6,7,8,9"), _detector(p, "pspda")
    p.add_argument("--stages", type=int, default=10)

    p = sub.add_parser("predict", help="large-system BER predictions")
    _common(p, sim=False)
    p.add_argument("--alpha", type=_floats, default=[1.0])
    p.add_argument("--ebn0", type=_floats, default=[8.0])
    p.add_argument("--omega", type=float, default=0.0)
    p.add_argument("--method", default="both", choices=["ra", "sn", "both", "eq"])
    p.add_argument("--stages", type=int, default=10)

    p = sub.add_parser("converge-table", help="mean iterations to convergence")
    _common(p), _sweep(p, 512, "1", "2,3,4,5,6,7,8,9"), _detector(p)

    p = sub.add_parser("macro-stats", help="empirical E, F, M, Q, U per stage vs the SN recursion")
    _common(p), _sweep(p, 512, "0.1", "8")
    p.add_argument("--stages", type=int, default=10)

    p = sub.add_parser("oracle-compare", help="exact conditional means vs PDA and SSPDA")
    _common(p)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--ebn0", type=float, default=6.0)
    p.add_argument("--trial", type=int, default=0)

    p = sub.add_parser("pdf-export", help="histograms of exact vs approximate MAI covariance entries")
    _common(p)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--alpha", type=_floats, default=[0.25, 1.0])
    p.add_argument("--ebn0", type=float, default=2.0)
    p.add_argument("--seed-groups", type=int, default=10)
    p.add_argument("--trials-per-group", type=int, default=20)
    p.add_argument("--bins", type=int, default=40)

    p = sub.add_parser("coded-sim", help="iterative multiuser decoding with the (5,7) code")
    _common(p)
    p.add_argument("--k", type=_ints, default=[28])
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--ebn0", type=_floats, default=[5.0])
    p.add_argument("--detector", type=_kinds, default=[Kind.SSPDA])
    p.add_argument("--outer-iters", type=int, default=7)
    p.add_argument("--n-info", type=int, default=1000)
    p.add_argument("--min-errors", type=int, default=100)
    p.add_argument("--max-trials", type=int, default=50, help="frame cap")
    p.add_argument("--spreading-per-symbol", type=_bool, nargs="?", const=True, default=False)
    return ap


def _apply_config(ap, argv):
    """Install values from ``--config`` as subcommand defaults (flags still win)."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    conf = read_config(known.config)
    cmd = next((a for a in argv if not a.startswith("-")), None)
    sub = ap._subparsers._group_actions[0].choices.get(cmd)
    if sub is None:
        return
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, val in conf.items():
        if key == "config":
            continue
        act = actions.get(key)
        if act is None:
            raise SpecError(f"unknown config key {key!r} for {cmd}")
        try:
            defaults[key] = act.type(val) if act.type else val
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise SpecError(f"bad value for {key!r}: {exc}") from exc
        if act.choices is not None and defaults[key] not in act.choices:
            raise SpecError(f"bad value for {key!r}: choose from {', '.join(act.choices)}")
    sub.set_defaults(**defaults)


def _det_cfg(args, kind):
    return DetectorConfig(kind=kind, omega=args.omega, tol=args.tol, max_iter=args.max_iter, init=args.init)


def _need_seed(args):
    if args.seed is None:
        raise SpecError(f"{args.command} needs --seed")


def _run(args):
    out, timing = args.output, getattr(args, "timing", False)
    cmd = args.command
    if cmd == "predict":
        rows = harness.predict(args.alpha, args.ebn0, args.stages, args.method, args.omega)
        return write_csv(rows, out, columns=harness.PREDICT_COLUMNS)
    _need_seed(args)
    if cmd in ("simulate", "trajectory"):
        recs = []
        for kind in args.detector:
            spec = ExperimentSpec(
                mode="uncoded-ber" if cmd == "simulate" else "trajectory",
                num_users=args.k, alpha=args.alpha, ebn0_db=args.ebn0, detector=_det_cfg(args, kind),
                seed=args.seed, min_errors=args.min_errors, max_trials=args.max_trials,
                symbols_per_trial=args.symbols_per_trial, stages=getattr(args, "stages", 10),
                threads=args.threads)
            recs += harness.run_uncoded_sweep(spec)
        return write_csv(recs, out, timing=timing, meta=harness.run_metadata(spec))
    if cmd == "converge-table":
        dets = [_det_cfg(args, k) for k in args.detector]
        spec = ExperimentSpec(mode="convergence-table", num_users=args.k, alpha=args.alpha,
                              ebn0_db=args.ebn0, detector=dets[0], seed=args.seed,
                              max_trials=args.max_trials, symbols_per_trial=args.symbols_per_trial,
                              threads=args.threads)
        meta = harness.run_metadata(spec, dets[:1])
        del meta["min_errors"]
        return write_csv(harness.run_convergence_table(spec, dets), out, meta=meta)
    if cmd == "macro-stats":
        spec = ExperimentSpec(mode="macro-stats", num_users=args.k, alpha=args.alpha, ebn0_db=args.ebn0,
                              detector=DetectorConfig(kind=Kind.PSPDA, omega=0.0), seed=args.seed,
                              max_trials=args.max_trials, symbols_per_trial=args.symbols_per_trial,
                              stages=args.stages, threads=args.threads)
        meta = {k: v for k, v in harness.run_metadata(spec).items() if k not in ("min_errors", "tol", "max_iter")}
        return write_csv(harness.run_macro_stats(spec), out, meta=meta)
    if cmd == "oracle-compare":
        rows = harness.oracle_compare(args.k, args.n, args.ebn0, args.seed, args.trial)
        return write_csv(rows, out, columns=["user", "m_oracle", "m_pda", "m_sspda", "abs_gap"])
    if cmd == "pdf-export":
        spec = ExperimentSpec(mode="pdf-export", num_users=args.k, alpha=args.alpha, ebn0_db=args.ebn0,
                              seed=args.seed, seed_groups=args.seed_groups,
                              trials_per_group=args.trials_per_group, bins=args.bins)
        ex = harness.run_pdf_export(spec)
        for e in ex:
            tvs = ", ".join(f"{v:.4f}" for v in e.tv_groups)
            print(f"# alpha={e.alpha}: total variation {e.tv:.4f} (groups: {tvs})", file=sys.stderr)
        return write_csv(harness.pdf_rows(ex), out,
                         columns=["alpha", "bin_left", "bin_right", "density_exact", "density_approx"])
    if cmd == "coded-sim":
        if len(args.detector) != 1:
            raise SpecError("coded-sim takes a single detector")
        spec = ExperimentSpec(mode="coded-sim", num_users=args.k, alpha=(1.0,), ebn0_db=args.ebn0,
                              detector=DetectorConfig(kind=args.detector[0]), seed=args.seed,
                              min_errors=args.min_errors, max_trials=args.max_trials,
                              outer_iters=args.outer_iters, n_info=args.n_info, processing_gain=args.n,
                              spreading_per_symbol=args.spreading_per_symbol)
        meta = dict(seed=spec.seed, n_info=spec.n_info, outer_iters=spec.outer_iters,
                    min_errors=spec.min_errors, max_trials=spec.max_trials,
                    spreading_per_symbol=spec.spreading_per_symbol, schema=harness.CSV_SCHEMA)
        return write_csv(harness.run_coded(spec), out, meta=meta)
    raise SpecError(f"unknown command {cmd!r}")


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        _apply_config(ap, argv)
        args = ap.parse_args(argv)
    except SpecError as exc:
        ap.print_usage(sys.stderr)
        print(f"mudlab: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        text = _run(args)
    except (SpecError, ValueError) as exc:
        print(f"mudlab: invalid specification: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:                 # noqa: BLE001 - reported, non-zero exit
        print(f"mudlab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if args.output is None:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
