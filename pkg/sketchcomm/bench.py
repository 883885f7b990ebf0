"""
Benchmark Commands
The four sketchbench sub-commands as plain functions over a RunConfig:

    cmd_sketch   B = A·Ω on a grid, per-phase words/time, residual vs the serial oracle
    cmd_nystrom  B and C on (Π, Ψ), per-phase breakdown, Nyström error
    cmd_bounds   lower bound vs predicted cost over a sweep of (dims, P)
    cmd_kernel   linear / RBF kernel matrix of a point file

Each returns a BenchResult (CSV rows + '#' metadata lines); the CLI decides
where it is written.
"""

import csv
import io
import itertools
import logging
import subprocess
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

import sketchcomm
from config.settings import settings
from sketchcomm.algorithms import (
    NYSTROM_LABEL_PHASES, NYSTROM_PHASES, OMEGA_COMMUNICATE, SKETCH_LABEL_PHASES,
    SKETCH_OMEGA_COMM_PHASES, SKETCH_PHASES, AlgorithmRun, omega_comm_cost, run_nystrom,
    run_rand_matmul, serial_nystrom, serial_sketch,
)
from sketchcomm.bounds import NYSTROM, RANDMATMUL, lb_nystrom, lb_randmatmul
from sketchcomm.cost_meter import CostReport, format_fraction
from sketchcomm.distribution import BlockLayout, BlockRole
from sketchcomm.errors import ConfigError, DimensionError, DivisibilityError, VerificationError
from sketchcomm.grids import (
    GATHER_OMEGA, GridSpec, nystrom_runnable, predicted_cost_nystrom, predicted_cost_randmatmul,
    randmatmul_runnable, select_grid_randmatmul, select_grids_nystrom, variant_grids_1d,
)
from sketchcomm.linalg import (
    DenseMatrix, frobenius_sigma, is_symmetric, kernel_linear, kernel_rbf, nystrom_error,
    relative_frobenius,
)
from sketchcomm.matrix_io import read_matrix, write_matrix
from sketchcomm.schemas import (
    BOUNDS_COLUMNS, PHASE_COLUMNS, BoundsRow, KernelKind, KernelSpec, PhaseRow, RunConfig,
    format_number,
)

logger = logging.getLogger(__name__)

PROJECT_ROOT = Path(__file__).resolve().parent.parent


@dataclass
class BenchResult:
    """CSV body, metadata and the verification outcome of one command."""
    columns: List[str]
    rows: List[List[str]]
    metadata: List[Tuple[str, str]] = field(default_factory=list)
    quality: Optional[float] = None
    failure: Optional[str] = None
    run: Optional[AlgorithmRun] = None

    def to_csv(self) -> str:
        buffer = io.StringIO()
        for key, value in self.metadata:
            buffer.write(f"# {key}: {value}\n")
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(self.columns)
        writer.writerows(self.rows)
        return buffer.getvalue()

    def write(self, target: Union[str, Path, TextIO, None] = None) -> str:
        text = self.to_csv()
        if isinstance(target, (str, Path)):
            path = Path(target)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8")
        elif target is not None:
            target.write(text)
        return text

    def check(self) -> "BenchResult":
        """Raise VerificationError when the run disagreed with its oracle."""
        if self.failure:
            raise VerificationError(self.failure)
        return self

    def column(self, name: str) -> List[str]:
        index = self.columns.index(name)
        return [row[index] for row in self.rows]

    def meta(self, key: str) -> Optional[str]:
        return dict(self.metadata).get(key)


def git_describe() -> str:
    try:
        completed = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=PROJECT_ROOT, capture_output=True, text=True, timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return completed.stdout.strip() if completed.returncode == 0 and completed.stdout.strip() else "unknown"


def _base_metadata(config: RunConfig) -> List[Tuple[str, str]]:
    seed = config.seed_spec()
    return [
        ("sketchcomm", sketchcomm.__version__),
        ("git", git_describe()),
        ("config", config.echo()),
        ("seed", f"{seed.key:#x} ({seed.distribution.value})"),
    ]


# ---------------------------------------------------------------------------
# Inputs
# ---------------------------------------------------------------------------

def build_kernel(points: DenseMatrix, spec: KernelSpec) -> DenseMatrix:
    if spec.kind is KernelKind.LINEAR:
        return kernel_linear(points)
    sigma = frobenius_sigma(points) if spec.sigma == "frob" else float(spec.sigma)
    logger.info("[BENCH] RBF kernel on %d points, sigma=%.6g", points.shape[0], sigma)
    return kernel_rbf(points, sigma)


def synthetic_gaussian(rows: int, cols: int, seed: int) -> DenseMatrix:
    return np.asfortranarray(np.random.default_rng(seed).standard_normal((rows, cols)))


def synthetic_spsd(n: int, rank: int, seed: int) -> DenseMatrix:
    """G·Gᵀ for a Gaussian n x rank G: symmetric PSD of rank min(n, rank)."""
    return kernel_linear(synthetic_gaussian(n, rank, seed))


def load_sketch_input(config: RunConfig) -> DenseMatrix:
    if config.input_path is not None:
        a = read_matrix(config.input_path, config.input_format)
        if (config.n1 and config.n1 != a.shape[0]) or (config.n2 and config.n2 != a.shape[1]):
            raise ConfigError(
                f"{config.input_path} is {a.shape[0]}x{a.shape[1]} but --n1/--n2 say {config.n1}x{config.n2}"
            )
        return a
    return synthetic_gaussian(config.n1, config.n2, config.seed)


def load_nystrom_input(config: RunConfig) -> Tuple[DenseMatrix, str]:
    """(A, description of the source)."""
    if config.input_path is not None:
        return read_matrix(config.input_path, config.input_format), str(config.input_path)
    if config.points_path is not None:
        points = read_matrix(config.points_path, config.input_format)
        return build_kernel(points, config.kernel), f"{config.kernel.label()} kernel of {config.points_path}"
    if config.kernel is not None:
        points = synthetic_gaussian(config.n, config.dim, config.seed)
        return build_kernel(points, config.kernel), f"{config.kernel.label()} kernel of {config.n}x{config.dim} gaussian points"
    rank = config.rank or max(1, config.r // 2)
    return synthetic_spsd(config.n, rank, config.seed), f"rank-{rank} synthetic SPSD"


# ---------------------------------------------------------------------------
# Phase tables
# ---------------------------------------------------------------------------

def phase_rows(
    run: AlgorithmRun,
    phase_names: Sequence[str],
    label_phases: Dict[str, str],
    quality: Optional[float],
) -> List[PhaseRow]:
    """One row per phase (maxima over ranks) and a closing 'total' row."""
    rows = []
    for name in phase_names:
        labels = [label for label, phase in label_phases.items() if phase == name]
        totals = run.report.filter(labels).rank_totals().values()
        rows.append(PhaseRow(
            phase=name,
            wall_time_s=max((log.times.get(name, 0.0) for log in run.phases), default=0.0),
            words_sent=max((t.words_sent for t in totals), default=0),
            words_received=max((t.words_received for t in totals), default=0),
            model_words=format_fraction(max((t.model_bandwidth for t in totals), default=Fraction(0))),
        ))

    totals = run.report.rank_totals().values()
    rows.append(PhaseRow(
        phase="total",
        wall_time_s=run.elapsed_s,
        words_sent=max((t.words_sent for t in totals), default=0),
        words_received=max((t.words_received for t in totals), default=0),
        model_words=format_fraction(run.report.max_model_bandwidth),
        quality=quality,
    ))
    return rows


def _counter_max(run: AlgorithmRun, name: str) -> int:
    return max((log.counters.get(name, 0) for log in run.phases), default=0)


def _cost_metadata(report: CostReport, predicted) -> List[Tuple[str, str]]:
    return [
        ("predicted_words", format_fraction(predicted.bandwidth)),
        ("predicted_latency", str(predicted.latency)),
        ("model_words", format_fraction(report.max_model_bandwidth)),
        ("model_latency", str(report.max_model_latency)),
        ("critical_path_words", str(report.critical_path_words)),
    ]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _sketch_grid(config: RunConfig, n1: int, n2: int, r: int) -> GridSpec:
    if config.grid is not None:
        return GridSpec(config.grid)
    if config.layout == "1d":
        return GridSpec.of(config.P, 1, 1)
    return select_grid_randmatmul(n1, n2, r, config.P)


def _label_words(report: CostReport, label: str) -> int:
    return max((t.words_sent for t in report.filter([label]).rank_totals().values()), default=0)


def _phase_time(run: AlgorithmRun, name: str) -> float:
    return max((log.times.get(name, 0.0) for log in run.phases), default=0.0)


def _omega_comparison(config: RunConfig, a: DenseMatrix, r: int, grid: GridSpec, run: AlgorithmRun):
    """Metadata pitting the all-gathered Ω run against a redundant-generation run of the same sketch."""
    redundant = run_rand_matmul(a, config.seed_spec(), r, grid, config.backend, gather=False)
    logger.info(
        "[BENCH] omega all-gather moved %d words in %.6fs; redundant generation took %.6fs",
        _label_words(run.report, GATHER_OMEGA), _phase_time(run, "omega_comm"),
        _phase_time(redundant, "generate_omega"),
    )
    totals = redundant.report.rank_totals().values()
    return [
        ("omega_comm_words", str(_label_words(run.report, GATHER_OMEGA))),
        ("omega_comm_wall_time_s", f"{_phase_time(run, 'omega_comm'):.6f}"),
        ("redundant_words_sent", str(max((t.words_sent for t in totals), default=0))),
        ("redundant_generate_omega_s", f"{_phase_time(redundant, 'generate_omega'):.6f}"),
        ("redundant_wall_time_s", f"{redundant.elapsed_s:.6f}"),
        ("redundant_omega_words_generated", str(_counter_max(redundant, "omega_words"))),
    ]


def cmd_sketch(config: RunConfig) -> BenchResult:
    """
    Run rand_matmul and tabulate per-phase costs; verify against serial_sketch
    below the oracle cutoff. With omega=communicate Ω is all-gathered instead
    of regenerated, and a redundant-generation run is reported alongside.
    """
    a = load_sketch_input(config)
    n1, n2 = a.shape
    r = config.r
    if r >= n2:
        raise ConfigError(f"r={r} must be smaller than n2={n2}")

    grid = _sketch_grid(config, n1, n2, r)
    predicted = predicted_cost_randmatmul(n1, n2, r, grid)
    BlockLayout(n1, n2, grid, BlockRole.A).validate()
    BlockLayout(n1, r, grid, BlockRole.B).validate()
    communicate = config.omega == OMEGA_COMMUNICATE
    if communicate and (n2 * r) % config.P:
        raise DivisibilityError(f"Ω has n2*r={n2 * r} entries, which do not split evenly over P={config.P} ranks")

    seed = config.seed_spec()
    verify = n1 <= config.oracle_cutoff
    logger.info(
        "[BENCH] sketch n1=%d n2=%d r=%d P=%d grid=%s omega=%s verify=%s",
        n1, n2, r, config.P, grid, config.omega, verify,
    )
    run = run_rand_matmul(a, seed, r, grid, config.backend, gather=verify, omega_mode=config.omega)

    residual, failure = None, None
    if verify:
        residual = relative_frobenius(serial_sketch(a, seed, r), run.b)
        if residual > settings.SKETCH_RESIDUAL_LIMIT:
            failure = f"sketch residual {residual:.3e} exceeds {settings.SKETCH_RESIDUAL_LIMIT:.0e}"
    else:
        logger.info("[BENCH] n1=%d above oracle cutoff %d; residual skipped", n1, config.oracle_cutoff)

    phase_names = SKETCH_OMEGA_COMM_PHASES if communicate else SKETCH_PHASES
    rows = phase_rows(run, phase_names, SKETCH_LABEL_PHASES, residual)
    metadata = _base_metadata(config) + [
        ("dims", f"n1={n1} n2={n2} r={r} P={config.P}"),
        ("backend", config.backend.value),
        ("grid", str(grid)),
        *_cost_metadata(run.report, predicted),
        ("omega_allgather_words", format_fraction(omega_comm_cost(n2, r, config.P))),
        ("omega", config.omega),
        ("omega_words_generated", str(_counter_max(run, "omega_words"))),
    ]
    if communicate:
        metadata += _omega_comparison(config, a, r, grid, run)
    return BenchResult(
        columns=PHASE_COLUMNS + ["residual"],
        rows=[row.to_csv_row() for row in rows],
        metadata=metadata,
        quality=residual,
        failure=failure,
        run=run,
    )


def _nystrom_grids(config: RunConfig, n: int, r: int) -> Tuple[GridSpec, GridSpec]:
    if config.grid is not None:
        p = GridSpec(config.grid)
        q = GridSpec(config.grid_q) if config.grid_q is not None else p
        return p, q
    if config.layout == "1d":
        return variant_grids_1d(config.P, config.variant)
    return select_grids_nystrom(n, r, config.P, config.variant)


def cmd_nystrom(config: RunConfig) -> BenchResult:
    """Run the Nyström pipeline; report the phase breakdown and the relative error of B·C†·Bᵀ."""
    a, source = load_nystrom_input(config)
    n = a.shape[0]
    r = config.r
    if a.shape != (n, n):
        raise DimensionError(f"nystrom needs a square matrix, got {a.shape[0]}x{a.shape[1]}")
    if r >= n:
        raise ConfigError(f"r={r} must be smaller than n={n}")
    if not config.skip_check and not is_symmetric(a):
        raise ConfigError(f"{source} is not symmetric to {settings.SYMMETRY_TOLERANCE:g}; pass --skip-check to run anyway")

    p, q = _nystrom_grids(config, n, r)
    predicted = predicted_cost_nystrom(n, r, p, q, config.variant)
    if not nystrom_runnable(n, r, p, q):
        for layout in (
            BlockLayout(n, n, p, BlockRole.A), BlockLayout(n, r, p, BlockRole.B),
            BlockLayout(n, r, q, BlockRole.B), BlockLayout(r, r, q, BlockRole.C),
        ):
            layout.validate()

    seed = config.seed_spec()
    verify = n <= config.oracle_cutoff
    logger.info(
        "[BENCH] nystrom n=%d r=%d P=%d Π=%s Ψ=%s variant=%s source=%s",
        n, r, config.P, p, q, config.variant, source,
    )
    run = run_nystrom(a, seed, r, p, q, config.variant, config.backend, config.reuse_omega, gather=verify)

    error, failure = None, None
    if verify:
        b_ref, c_ref = serial_nystrom(a, seed, r)
        mismatch = max(relative_frobenius(b_ref, run.b), relative_frobenius(c_ref, run.c))
        if mismatch > settings.SKETCH_RESIDUAL_LIMIT:
            failure = f"nystrom B/C differ from the serial oracle by {mismatch:.3e}"
        error = nystrom_error(a, run.b, run.c, config.pinv_tol)
        if not np.isfinite(error):
            failure = failure or "nystrom error is not finite"
            error = None
    else:
        logger.info("[BENCH] n=%d above oracle cutoff %d; error skipped", n, config.oracle_cutoff)

    rows = phase_rows(run, NYSTROM_PHASES, NYSTROM_LABEL_PHASES, error)
    metadata = _base_metadata(config) + [
        ("dims", f"n={n} r={r} P={config.P}"),
        ("source", source),
        ("backend", config.backend.value),
        ("variant", config.variant),
        ("grid_p", str(p)),
        ("grid_q", str(q)),
        *_cost_metadata(run.report, predicted),
        ("omega_words_generated", str(_counter_max(run, "omega_words"))),
        ("omega_reused", str(_counter_max(run, "omega_reused"))),
    ]
    return BenchResult(
        columns=PHASE_COLUMNS + ["error"],
        rows=[row.to_csv_row() for row in rows],
        metadata=metadata,
        quality=error,
        failure=failure,
        run=run,
    )


def _randmatmul_bounds_row(config: RunConfig, n1: int, n2: int, r: int, P: int) -> BoundsRow:
    bound = lb_randmatmul(n1, n2, r, P)
    grid = GridSpec.of(P, 1, 1) if config.layout == "1d" else select_grid_randmatmul(n1, n2, r, P)
    predicted = predicted_cost_randmatmul(n1, n2, r, grid, strict=False).bandwidth
    return BoundsRow(
        n1=n1, n2=n2, r=r, P=P, case=bound.case_id,
        W=format_number(bound.words), predicted=format_number(predicted),
        gap=format_number(predicted - bound.words), problem=RANDMATMUL,
        grid_p=grid.label() + ("" if randmatmul_runnable(n1, n2, r, grid) else "*"),
    )


def _nystrom_bounds_row(config: RunConfig, n: int, r: int, P: int, variant: str) -> BoundsRow:
    bound = lb_nystrom(n, r, P)
    if config.layout == "1d":
        p, q = variant_grids_1d(P, variant)
    else:
        p, q = select_grids_nystrom(n, r, P, variant)
    predicted = predicted_cost_nystrom(n, r, p, q, variant, strict=False).bandwidth
    marker = "" if nystrom_runnable(n, r, p, q) else "*"
    return BoundsRow(
        n1=n, n2=n, r=r, P=P, case=bound.case_id,
        W=format_number(bound.words), predicted=format_number(predicted),
        gap=format_number(predicted - bound.words), problem=NYSTROM, variant=variant,
        grid_p=p.label() + marker, grid_q=q.label() + marker,
    )


def cmd_bounds(config: RunConfig) -> BenchResult:
    """
    One row per (dims, P) [and variant]: lower bound W, predicted cost of the
    chosen grid(s) and their gap. Grids marked '*' are not runnable on those
    dimensions; their prediction is the rational formula. Points with r not
    below n (or n2) are skipped.
    """
    rows: List[BoundsRow] = []
    skipped = 0
    if config.problem == RANDMATMUL:
        for n1, n2, r, P in itertools.product(config.n1_values, config.n2_values, config.r_values, config.P_values):
            if r >= n2:
                skipped += 1
                continue
            rows.append(_randmatmul_bounds_row(config, n1, n2, r, P))
    else:
        for n, r, P, variant in itertools.product(config.n_values, config.r_values, config.P_values, config.variants):
            if r >= n:
                skipped += 1
                continue
            rows.append(_nystrom_bounds_row(config, n, r, P, variant))

    if not rows:
        raise ConfigError("bounds sweep produced no valid (dims, P) points")
    if skipped:
        logger.warning("[BENCH] bounds skipped %d points with r not below the sketched dimension", skipped)

    metadata = _base_metadata(config) + [("problem", config.problem), ("layout", config.layout)]
    return BenchResult(
        columns=list(BOUNDS_COLUMNS),
        rows=[row.to_csv_row() for row in rows],
        metadata=metadata,
    )


def cmd_kernel(config: RunConfig) -> Path:
    """Kernel matrix of a point file (one point per row), written in the binary matrix format."""
    points = read_matrix(config.points_path, config.input_format)
    matrix = build_kernel(points, config.kernel)
    path = write_matrix(config.output, matrix, "binary")
    logger.info("[BENCH] wrote %dx%d %s kernel to %s", matrix.shape[0], matrix.shape[1], config.kernel.label(), path)
    return path


COMMANDS = {
    "sketch": cmd_sketch,
    "nystrom": cmd_nystrom,
    "bounds": cmd_bounds,
    "kernel": cmd_kernel,
}
