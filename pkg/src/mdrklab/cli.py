"""Command line entry point.

    mdrk-lab convergence  --scheme HB-I2DRK4-2s --strategy at --epsilon 1 ...
    mdrk-lab conditioning --scheme ImplTaylor-3 --strategy at --epsilon 1e-1,...
    mdrk-lab integrate    --scheme ImplTaylor-1 --problem dahlquist ...
    mdrk-lab plot RESULTS.csv [--out FIG.pdf]

Exit codes: 0 on success, 1 when any run diverged or failed to converge,
2 on usage errors (unknown schemes, problems or malformed values).
"""

from __future__ import annotations

import argparse
import sys

from . import lab
from .newton import NewtonConfig
from .odesys import PROBLEM_NAMES, UnknownProblemError
from .tableau import UnknownSchemeError

__all__ = ["main", "build_parser"]


def _floats(text: str) -> list:
    try:
        return [float(tok) for tok in text.split(",") if tok]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad float list {text!r}") from exc


def _ints(text: str) -> list:
    try:
        return [int(tok) for tok in text.split(",") if tok]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from exc


def _add_method_options(sub, *, tend_default, nsteps_default, maxiter_default):
    sub.add_argument("--scheme", required=True, help="tableau name, e.g. HB-I2DRK4-2s")
    sub.add_argument("--strategy", choices=("at", "ej", "rec"), default="at",
                     help="derivative strategy (default at)")
    sub.add_argument("--formulation", choices=("direct", "dersol"), default="direct")
    sub.add_argument("--coupling", choices=("dimdrk", "fsmdrk"), default="dimdrk")
    sub.add_argument("--problem", choices=PROBLEM_NAMES, default="pr")
    sub.add_argument("--epsilon", type=_floats, default=None,
                     help="stiffness value, or comma list for sweeps")
    sub.add_argument("--tend", type=float, default=tend_default)
    sub.add_argument("--nsteps", type=_ints, default=nsteps_default,
                     help="step count, or comma list for convergence sweeps")
    sub.add_argument("--ntol", type=int, default=12, help="absolute residual exponent")
    sub.add_argument("--ntol0", type=int, default=12, help="relative residual exponent")
    sub.add_argument("--maxiter", type=int, default=maxiter_default)
    sub.add_argument("--p", type=int, default=None, dest="halfwidth",
                     help="stencil half-width override for the at strategy")
    sub.add_argument("--out", default=None, help="CSV output path (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mdrk-lab",
        description="Multiderivative Runge-Kutta experiments on stiff ODE benchmarks",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    conv = subs.add_parser("convergence", help="error vs. timestep sweep")
    _add_method_options(conv, tend_default=5.0,
                        nsteps_default=[4, 8, 16, 32, 64, 128], maxiter_default=1000)
    conv.add_argument("--no-fine-reference", action="store_true",
                      help="fail instead of computing a fine-grid reference")

    cond = subs.add_parser("conditioning", help="Newton conditioning vs. epsilon sweep")
    _add_method_options(cond, tend_default=1.25, nsteps_default=[1], maxiter_default=1000)

    single = subs.add_parser("integrate", help="one integration, prints the final state")
    _add_method_options(single, tend_default=1.0, nsteps_default=[10], maxiter_default=1000)

    plot = subs.add_parser("plot", help="render a sweep CSV to a figure file")
    plot.add_argument("csv", help="CSV produced by convergence/conditioning/integrate")
    plot.add_argument("--out", default=None, help="figure path (default: CSV with new suffix)")
    plot.add_argument("--format", default="pdf", choices=("pdf", "svg", "png"))
    return parser


def _newton_cfg(args) -> NewtonConfig:
    return NewtonConfig(n_tol=args.ntol, n_tol0=args.ntol0, max_iter=args.maxiter)


def _emit(records, out):
    if out:
        lab.write_records(records, out)
    else:
        sys.stdout.write(lab.records_to_csv(records))


def _single_epsilon(args, default=1.0) -> float:
    if not args.epsilon:
        return default
    if len(args.epsilon) != 1:
        raise SystemExit2(f"expected one epsilon, got {args.epsilon}")
    return args.epsilon[0]


class SystemExit2(Exception):
    """Usage error carrying exit code 2."""


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "plot":
            from .plots import render_csv

            out = render_csv(args.csv, args.out, args.format)
            print(f"wrote {out}")
            return 0
        if args.command == "convergence":
            records = lab.run_convergence(
                args.scheme, args.strategy, args.formulation, args.coupling,
                args.problem, _single_epsilon(args), args.tend, args.nsteps,
                halfwidth=args.halfwidth, newton_cfg=_newton_cfg(args),
                allow_fine_reference=not args.no_fine_reference,
            )
        elif args.command == "conditioning":
            eps = args.epsilon or [1.0, 1e-1, 1e-2, 1e-3, 1e-4]
            if len(args.nsteps) != 1:
                raise SystemExit2(f"conditioning takes one step count, got {args.nsteps}")
            records = lab.run_conditioning(
                args.scheme, args.strategy, args.formulation, args.coupling,
                args.problem, eps, args.tend, args.nsteps[0],
                halfwidth=args.halfwidth, newton_cfg=_newton_cfg(args),
            )
        else:  # integrate
            if len(args.nsteps) != 1:
                raise SystemExit2(f"integrate takes one step count, got {args.nsteps}")
            record, state, iters = lab.run_integrate(
                args.scheme, args.strategy, args.formulation, args.coupling,
                args.problem, _single_epsilon(args), args.tend, args.nsteps[0],
                halfwidth=args.halfwidth, newton_cfg=_newton_cfg(args),
            )
            _emit([record], args.out)
            if state is not None:
                print("final state:", " ".join(repr(float(x)) for x in state))
            print("newton iterations per step:", " ".join(str(n) for n in iters))
            return 0 if record.converged else 1
    except (UnknownSchemeError, UnknownProblemError, SystemExit2) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, lab.ReferenceUnavailableError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _emit(records, args.out)
    return 0 if all(rec.converged for rec in records) else 1


if __name__ == "__main__":
    sys.exit(main())
