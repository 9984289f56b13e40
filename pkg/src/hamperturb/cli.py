"""Command line: ``hamperturb check|trivialize|extend|case run``.

Exit codes: 0 pass, 1 mathematical failure, 2 input error, 3 basis
insufficient, 4 internal consistency failure (an engine bug).  Reports are
JSON (``--format report``, keys sorted) or a short text summary
(``--format summary``).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .casebook import CASES, run_case
from .errors import (
    BasisInsufficientError,
    HamPerturbError,
    InternalConsistencyError,
    ManifestError,
    NonGenericDensityError,
    NotConservedError,
    ParseError,
)
from .manifest import load_manifest
from .pipeline import (
    EXIT_BASIS,
    EXIT_INPUT,
    EXIT_INTERNAL,
    STAGES,
    run_check,
    run_extend,
    run_trivialize,
)

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hamperturb",
        description="Integrability and quasi-triviality of Hamiltonian perturbations "
                    "of hydrodynamic-type systems, up to second order.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, help="write the report to this file instead of stdout")
    common.add_argument("--format", choices=("report", "summary"), default="report")
    common.add_argument("--seed", type=int, default=None,
                        help="seed for probabilistic zero tests (overrides the manifest)")
    common.add_argument("--timing", action="store_true",
                        help="include wall-clock timings (makes reports non-reproducible)")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", parents=[common], help="run analysis stages on a manifest")
    c.add_argument("manifest", type=Path)
    c.add_argument("--stage", choices=STAGES, default="all")

    t = sub.add_parser("trivialize", parents=[common], help="construct k0 and K1 generators")
    t.add_argument("manifest", type=Path)

    e = sub.add_parser("extend", parents=[common], help="extend conservation laws to order two")
    e.add_argument("manifest", type=Path)
    e.add_argument("--f0", required=True,
                   help="density in the expression grammar, or the name of a manifest basis "
                        "(its conserved census is extended)")
    e.add_argument("--require-generic", action="store_true",
                   help="reject densities whose Hessian eigenvalues coincide")

    k = sub.add_parser("case", help="scripted cases")
    ksub = k.add_subparsers(dest="case_command", required=True)
    kr = ksub.add_parser("run", parents=[common], help="run a built-in case")
    kr.add_argument("name", choices=CASES)
    return p


def _emit(text: str, out: Path | None):
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text, encoding="utf-8")


def _setup(args):
    m = load_manifest(args.manifest)
    if args.seed is not None:
        m = dataclasses.replace(m, seed=args.seed)
    return m.build()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "case":
            rep = run_case(args.name, args.seed)
            _emit(rep.to_json() if args.format == "report" else rep.summary(), args.out)
            return 0 if rep.ok else 1
        setup = _setup(args)
        if args.command == "check":
            rep = run_check(setup, args.stage)
        elif args.command == "trivialize":
            rep = run_trivialize(setup)
        else:
            rep = run_extend(setup, args.f0, args.require_generic)
    except BasisInsufficientError as exc:
        sys.stderr.write(f"hamperturb: basis insufficient: {exc}\n")
        return EXIT_BASIS
    except (ManifestError, ParseError, NotConservedError, NonGenericDensityError) as exc:
        kind = type(exc).__name__
        sys.stderr.write(f"hamperturb: input error ({kind}): {exc}\n")
        return EXIT_INPUT
    except InternalConsistencyError as exc:
        sys.stderr.write(f"hamperturb: internal consistency failure: {exc}\n")
        return EXIT_INTERNAL
    except HamPerturbError as exc:
        sys.stderr.write(f"hamperturb: {type(exc).__name__}: {exc}\n")
        return EXIT_INPUT
    text = rep.to_json(args.timing) if args.format == "report" else rep.summary()
    _emit(text, args.out)
    return rep.exit_code


if __name__ == "__main__":
    sys.exit(main())
