"""
sketchbench CLI
Run the distributed sketching / Nyström kernels on the in-process fabric and
emit cost, timing and error CSVs.

Usage:
    python scripts/sketchbench.py sketch --n1 256 --n2 256 --r 32 --P 4 --grid 2,2,1
    python scripts/sketchbench.py nystrom --n 400 --r 40 --rank 20 --P 4
    python scripts/sketchbench.py bounds --n1 4 --n2 8 --r 2 --P 1:16:x2
    python scripts/sketchbench.py kernel --points points.csv --kernel rbf --sigma frob --out K.bin

Exit codes: 0 success, 2 configuration error, 3 verification failure, 4 fabric deadlock.
"""

import sys
import os
import argparse

# Add project root to path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

from pydantic import ValidationError

from config.settings import settings
from sketchcomm.bench import COMMANDS, BenchResult
from sketchcomm.errors import (
    ConfigError, DimensionError, FabricDeadlockError, FabricError, VerificationError,
)
from sketchcomm.fabric import root_cause
from sketchcomm.log import configure_logging
from sketchcomm.schemas import KernelSpec, RunConfig, parse_int_list

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VERIFICATION = 3
EXIT_FABRIC = 4


def _add_run_options(parser: argparse.ArgumentParser):
    parser.add_argument("--r", type=int, required=True, help="Sketch size")
    parser.add_argument("--P", type=int, default=1, help="Number of ranks (default: 1)")
    parser.add_argument("--seed", default=settings.DEFAULT_SEED, help="64-bit seed, decimal or 0x-hex")
    parser.add_argument("--distribution", choices=["uniform", "gaussian"], default=None,
                        help="Ω distribution (default: uniform for sketch, gaussian for nystrom)")
    parser.add_argument("--backend", choices=["lockstep", "threaded"], default=settings.DEFAULT_BACKEND)
    parser.add_argument("--grid", default=None, help="Explicit grid p1,p2,p3 (Π for nystrom)")
    parser.add_argument("--layout", choices=["selected", "1d"], default="selected",
                        help="Case-selected grids or the 1-D layouts")
    parser.add_argument("--input", dest="input_path", default=None, help="Matrix file (csv or binary)")
    parser.add_argument("--format", dest="input_format", choices=["csv", "binary"], default=None)
    parser.add_argument("--oracle-cutoff", type=int, default=settings.ORACLE_CUTOFF,
                        help="Verify against the serial oracle up to this many rows")
    parser.add_argument("--out", dest="output", default=None, help="CSV output path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Communication-cost benchmarks for distributed sketching and Nyström",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python scripts/sketchbench.py sketch --n1 256 --n2 256 --r 32 --P 4 --grid 4,1,1
  python scripts/sketchbench.py nystrom --n 400 --r 40 --rank 20 --P 4 --variant noredist
  python scripts/sketchbench.py nystrom --points cifar.csv --kernel rbf --sigma frob --r 200 --P 8
  python scripts/sketchbench.py bounds --problem nystrom --n 4096 --r 64 --P 1:1024:x2 --layout 1d
  python scripts/sketchbench.py kernel --points points.csv --kernel linear --out K.bin
        """
    )
    parser.add_argument("--log-level", default=settings.LOG_LEVEL, help="Logging level")

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    # Sketch command
    sketch_parser = subparsers.add_parser("sketch", help="B = A·Ω on a processor grid")
    sketch_parser.add_argument("--n1", type=int, default=None, help="Rows of the synthetic A")
    sketch_parser.add_argument("--n2", type=int, default=None, help="Columns of the synthetic A")
    sketch_parser.add_argument("--omega", choices=["generate", "communicate"], default="generate",
                               help="Regenerate Ω on every rank, or generate it once and all-gather it "
                                    "(also reports the redundant-generation run)")
    _add_run_options(sketch_parser)

    # Nystrom command
    nystrom_parser = subparsers.add_parser("nystrom", help="B = A·Ω and C = Ωᵀ·A·Ω, with error of B·C†·Bᵀ")
    nystrom_parser.add_argument("--n", type=int, default=None, help="Order of the synthetic A")
    nystrom_parser.add_argument("--rank", type=int, default=None, help="Rank of the synthetic SPSD A (default: r/2)")
    nystrom_parser.add_argument("--points", dest="points_path", default=None, help="Point file for a kernel matrix")
    nystrom_parser.add_argument("--kernel", default=None, help="linear, rbf, rbf:<sigma> or rbf:frob")
    nystrom_parser.add_argument("--sigma", default=None, help="RBF sigma: a value or 'frob'")
    nystrom_parser.add_argument("--dim", type=int, default=8, help="Dimension of synthetic kernel points")
    nystrom_parser.add_argument("--variant", choices=["redist", "noredist"], default="redist")
    nystrom_parser.add_argument("--grid-q", dest="grid_q", default=None, help="Explicit Ψ grid q1,q2,q3")
    nystrom_parser.add_argument("--pinv-tol", type=float, default=settings.PINV_TOLERANCE)
    nystrom_parser.add_argument("--reuse-omega", action="store_true", help="Reuse Ω between the two multiplies")
    nystrom_parser.add_argument("--skip-check", action="store_true", help="Skip the symmetry check of A")
    _add_run_options(nystrom_parser)

    # Bounds command
    bounds_parser = subparsers.add_parser("bounds", help="Lower bound vs predicted cost over a sweep")
    bounds_parser.add_argument("--problem", choices=["randmatmul", "nystrom"], default="randmatmul")
    bounds_parser.add_argument("--n1", default="", help="n1 values, e.g. 64 or 16:256:x2")
    bounds_parser.add_argument("--n2", default="", help="n2 values")
    bounds_parser.add_argument("--n", default="", help="n values (nystrom)")
    bounds_parser.add_argument("--r", default="", help="r values")
    bounds_parser.add_argument("--P", default="", help="P values, e.g. 1:64 or 1:1024:x2")
    bounds_parser.add_argument("--variant", choices=["redist", "noredist", "both"], default="both")
    bounds_parser.add_argument("--layout", choices=["selected", "1d"], default="selected")
    bounds_parser.add_argument("--out", dest="output", default=None, help="CSV output path (default: stdout)")

    # Kernel command
    kernel_parser = subparsers.add_parser("kernel", help="Kernel matrix of a point file")
    kernel_parser.add_argument("--points", dest="points_path", required=True, help="Point file, one point per row")
    kernel_parser.add_argument("--kernel", required=True, help="linear, rbf, rbf:<sigma> or rbf:frob")
    kernel_parser.add_argument("--sigma", default=None, help="RBF sigma: a value or 'frob'")
    kernel_parser.add_argument("--format", dest="input_format", choices=["csv", "binary"], default=None)
    kernel_parser.add_argument("--out", dest="output", required=True, help="Binary matrix output path")

    return parser


def build_config(args: argparse.Namespace) -> RunConfig:
    """Namespace -> validated RunConfig (pydantic errors become ConfigError)."""
    values = {k: v for k, v in vars(args).items() if k not in ("command", "log_level", "sigma") and v is not None}
    values["subcommand"] = args.command

    kernel = values.pop("kernel", None)
    if kernel is not None:
        values["kernel"] = KernelSpec.parse(kernel, getattr(args, "sigma", None))

    if args.command == "bounds":
        values.pop("layout", None)
        for name in ("n1", "n2", "n", "r", "P"):
            values[f"{name}_values"] = parse_int_list(values.pop(name, ""))
        variant = values.pop("variant")
        values["variants"] = ["redist", "noredist"] if variant == "both" else [variant]
        values["layout"] = args.layout

    try:
        return RunConfig(**values)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(problems)


def _print_summary(config: RunConfig, result: BenchResult):
    print(f"\n{'='*60}")
    print(f"  {config.subcommand.value.upper()}")
    print(f"{'='*60}")
    for key, value in result.metadata:
        if key not in ("config", "git"):
            print(f"  {key}: {value}")
    print(f"\n{'='*60}")
    print(f"  Rows: {len(result.rows)}  ->  {config.output}")
    print(f"{'='*60}\n")


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return EXIT_CONFIG

    # CSV on stdout must stay clean
    to_stdout = getattr(args, "output", None) is None
    configure_logging(args.log_level, sys.stderr if to_stdout else sys.stdout)

    try:
        config = build_config(args)
        outcome = COMMANDS[args.command](config)
        if isinstance(outcome, BenchResult):
            outcome.write(config.output or sys.stdout)
            if config.output is not None:
                _print_summary(config, outcome)
            outcome.check()
        else:
            print(f"\n✅ Wrote {outcome}\n")
    except Exception as e:
        cause = root_cause(e)
        if isinstance(cause, VerificationError):
            code = EXIT_VERIFICATION
        elif isinstance(cause, FabricDeadlockError):
            code = EXIT_FABRIC
        elif isinstance(cause, (ConfigError, DimensionError, FileNotFoundError, IsADirectoryError)):
            code = EXIT_CONFIG
        elif isinstance(cause, FabricError):
            code = EXIT_FABRIC
        else:
            raise
        print(f"\n❌ {type(cause).__name__}: {cause}\n", file=sys.stderr)
        return code
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
