import argparse
import sys
from typing import List, Optional

from .config import config
from .derivation import derive, derive_jacobian
from .evaluator import verify
from .exceptions import ElemDiffError
from .syntax import format_deriv_spec, format_spec, parse_file
from .utils import logger

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_VERIFY_FAILED = 2


def build_argument_parser() -> argparse.ArgumentParser:
    argument_parser = argparse.ArgumentParser(
        prog="elemdiff",
        description="Derive per-element adjoint expressions of element-wise tensor functions and check them numerically",
    )
    commands = argument_parser.add_subparsers(dest="command", required=True)

    derive_parser = commands.add_parser("derive", help="Print the adjoint of every argument")
    derive_parser.add_argument("file", help="Path to a .tad source")

    jacobian_parser = commands.add_parser("jacobian", help="Print the Jacobian wrt. one argument as a spec")
    jacobian_parser.add_argument("file", help="Path to a .tad source")
    jacobian_parser.add_argument("--arg", required=True, help="Argument to differentiate by")

    verify_parser = commands.add_parser("verify", help="Check derived adjoints against numeric oracles")
    verify_parser.add_argument("file", help="Path to a .tad source")
    verify_parser.add_argument("--trials", type=int, default=config.get("verify_trials", 5))
    verify_parser.add_argument("--tol", type=float, default=config.get("verify_tolerance", 1e-5))
    verify_parser.add_argument("--seed", type=int, default=config.get("verify_seed", 42))
    verify_parser.add_argument("--json", action="store_true", help="Print the report as JSON")
    return argument_parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_argument_parser().parse_args(argv)
    try:
        spec = parse_file(args.file)
        if args.command == "derive":
            print(format_deriv_spec(derive(spec)))
            return EXIT_OK
        if args.command == "jacobian":
            print(format_spec(derive_jacobian(spec, args.arg)))
            return EXIT_OK
        report = verify(spec, trials=args.trials, tol=args.tol, rng_seed=args.seed)
    except (ElemDiffError, OSError, ValueError) as e:
        logger.error(f"{args.file}: {e}")
        return EXIT_INPUT_ERROR
    print(report.to_json() if args.json else report.to_text())
    return EXIT_OK if report.passed else EXIT_VERIFY_FAILED


if __name__ == "__main__":
    sys.exit(main())
