"""Command line entry point.

    isolandau run <config.cfg>       execute a run from t = 0
    isolandau resume <output_dir>    continue from the last snapshot
    isolandau verify [--size N] [--kernel-perturbation D]
    isolandau oracle <snapshot.bin>  direct-sum Coulomb reference
    isolandau report <output_dir>    render figures from diagnostics.csv

The ISOLANDAU_OUTPUT_DIR environment variable overrides [output] dir.
"""

import argparse
import json
import sys

from .errors import IsolandauError
from .runner import oracle, resume, run, verify


def _print_summary(summary):
    print(json.dumps(summary, indent=1))


def main(argv=None):
    parser = argparse.ArgumentParser(prog="isolandau")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a configured run")
    p.add_argument("config", help="path to a config file")

    p = sub.add_parser("resume", help="continue a run from its last snapshot")
    p.add_argument("output_dir")

    p = sub.add_parser("verify", help="run the built-in oracle checks")
    p.add_argument("--size", type=int, default=9, help="grid size for O(N^2) checks")
    p.add_argument(
        "--kernel-perturbation", type=float, default=0.0,
        help="scale the Coulomb kernel by (1 + D) to demonstrate failure detection",
    )

    p = sub.add_parser("oracle", help="write a direct-sum potential for a snapshot")
    p.add_argument("snapshot")
    p.add_argument("--out", default=None)

    p = sub.add_parser("report", help="render figures from a run directory")
    p.add_argument("output_dir")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            _print_summary(run(args.config))
        elif args.command == "resume":
            _print_summary(resume(args.output_dir))
        elif args.command == "verify":
            checks = verify(args.size, args.kernel_perturbation)
            ok = True
            for c in checks:
                status = "pass" if c["passed"] else "FAIL"
                print(f"{status}  {c['name']}: value={c['value']:.3e} tol={c['tol']:.1e}")
                ok = ok and c["passed"]
            if not ok:
                return 1
        elif args.command == "oracle":
            print(oracle(args.snapshot, args.out))
        elif args.command == "report":
            from .report import render_report

            for path in render_report(args.output_dir):
                print(path)
    except IsolandauError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
