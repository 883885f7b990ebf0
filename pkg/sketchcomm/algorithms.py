"""
Parallel Sketching Algorithms
rand_matmul:  B = A·Ω on a p1 x p2 x p3 grid (gather A over k, local GEMM
              against a redundantly generated Ω block, reduce-scatter over j).
              omega_mode="communicate" all-gathers a once-generated Ω instead.
nystrom:      B = A·Ω on Π, optional redistribution of B to Ψ, then
              C = Ωᵀ·B on Ψ (gather B over j', local GEMM, reduce-scatter over i').
redistribute: B-role layout on one grid -> B-role layout on another through a
              single world All-to-All with destination-major packing.

All three are coroutines run per rank under run_spmd; run_rand_matmul and
run_nystrom wrap them with scatter, SPMD execution and gather.
"""

import logging
import time
from collections import OrderedDict
from contextlib import contextmanager
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from sketchcomm.cost_meter import CostReport
from sketchcomm.errors import ConfigError, DimensionError
from sketchcomm.fabric import Backend, Communicator, run_spmd
from sketchcomm.grids import (
    GATHER_A, GATHER_B, GATHER_OMEGA, NOREDIST, REDIST, REDISTRIBUTE_B, REDUCE_SCATTER_B,
    REDUCE_SCATTER_C, GridLike, as_grid,
)
from sketchcomm.distribution import BlockLayout, BlockRole, DistMatrix, gather_matrix, scatter_matrix
from sketchcomm.linalg import DenseMatrix, as_dense, gemm
from sketchcomm.rng import SketchSeed, gen_block, gen_counters, gen_full

logger = logging.getLogger(__name__)

SKETCH_PHASES = ("generate_omega", "local_multiply", "collectives")
SKETCH_OMEGA_COMM_PHASES = ("generate_omega", "omega_comm", "local_multiply", "collectives")
NYSTROM_PHASES = (
    "generate_omega", "first_matmul", "reduce_scatter_b", "all_to_all", "unpack", "second_matmul",
    "reduce_scatter_c",
)

# How each rank obtains its Ω block in rand_matmul
OMEGA_GENERATE = "generate"
OMEGA_COMMUNICATE = "communicate"
OMEGA_MODES = (OMEGA_GENERATE, OMEGA_COMMUNICATE)

# Which phase each collective call site is accounted to
SKETCH_LABEL_PHASES = {GATHER_A: "collectives", REDUCE_SCATTER_B: "collectives", GATHER_OMEGA: "omega_comm"}
NYSTROM_LABEL_PHASES = {
    GATHER_A: "first_matmul",
    REDUCE_SCATTER_B: "reduce_scatter_b",
    REDISTRIBUTE_B: "all_to_all",
    GATHER_B: "second_matmul",
    REDUCE_SCATTER_C: "reduce_scatter_c",
}

_SKETCH_STAGES = {"gather": "collectives", "generate": "generate_omega",
                  "multiply": "local_multiply", "reduce": "collectives"}
_NYSTROM_STAGES = {"gather": "first_matmul", "generate": "generate_omega",
                   "multiply": "first_matmul", "reduce": "reduce_scatter_b"}


class PhaseLog:
    """Per-rank wall time and counters, keyed by phase name."""

    def __init__(self, phases: Tuple[str, ...] = ()):
        self.times: "OrderedDict[str, float]" = OrderedDict((name, 0.0) for name in phases)
        self.counters: Dict[str, int] = {}

    @contextmanager
    def phase(self, name: str):
        started = time.perf_counter()
        try:
            yield
        finally:
            self.times[name] = self.times.get(name, 0.0) + time.perf_counter() - started

    def count(self, name: str, value: int):
        self.counters[name] = self.counters.get(name, 0) + int(value)


def omega_comm_cost(n2: int, r: int, P: int) -> Fraction:
    """Words per rank an All-Gather of a distributed Ω would move, instead of regenerating it."""
    return (1 - Fraction(1, P)) * n2 * r


def _phases(phases: Optional[PhaseLog]) -> PhaseLog:
    return phases if phases is not None else PhaseLog()


@dataclass(frozen=True)
class OmegaBlock:
    """A generated sub-block of Ω and the global extent it covers."""
    row_start: int
    row_count: int
    col_start: int
    col_count: int
    values: DenseMatrix

    def covers(self, row_start: int, row_count: int, col_start: int, col_count: int) -> bool:
        return (self.row_start, self.row_count, self.col_start, self.col_count) == (
            row_start, row_count, col_start, col_count
        )


async def _communicated_omega(
    comm: Communicator, seed: SketchSeed, n2: int, r: int, phases: PhaseLog, generate_phase: str,
) -> DenseMatrix:
    """Each rank generates an equal column-major slice of Ω once; one world All-Gather assembles it."""
    share = n2 * r // comm.world_size
    with phases.phase(generate_phase):
        mine = gen_counters(seed, comm.rank * share, share)
        phases.count("omega_words", mine.size)
    with phases.phase("omega_comm"):
        full = await comm.all_gather(mine, comm.world, GATHER_OMEGA)
    return full.reshape((n2, r), order="F")


async def _rand_matmul(
    comm: Communicator, a: DistMatrix, seed: SketchSeed, r: int,
    phases: PhaseLog, stages: Dict[str, str], omega_mode: str = OMEGA_GENERATE,
) -> Tuple[DistMatrix, OmegaBlock]:
    if a.role is not BlockRole.A:
        raise ConfigError(f"rand_matmul needs A in A-role, got {a.role.value}-role")
    if omega_mode not in OMEGA_MODES:
        raise ConfigError(f"unknown omega mode '{omega_mode}' (use generate or communicate)")
    grid = a.grid
    if grid.size != comm.world_size:
        raise ConfigError(f"grid {grid} has {grid.size} ranks but the run has {comm.world_size}")
    n1, n2 = a.shape
    if r % grid.p3:
        raise DimensionError(f"r={r} is not divisible by p3={grid.p3}")
    if omega_mode == OMEGA_COMMUNICATE and (n2 * r) % comm.world_size:
        raise DimensionError(f"Ω has {n2 * r} entries, which do not split evenly over {comm.world_size} ranks")
    b_layout = BlockLayout(n1, r, grid, BlockRole.B).validate()

    i, j, k = grid.coords(comm.rank)
    block_rows, block_cols = n1 // grid.p1, n2 // grid.p2
    omega_rows, omega_cols = n2 // grid.p2, r // grid.p3

    with phases.phase(stages["gather"]):
        gathered = await comm.all_gather(a.local, grid.fiber(comm.rank, 2), GATHER_A)
        a_block = gathered.reshape((block_rows, block_cols), order="F")

    if omega_mode == OMEGA_COMMUNICATE:
        full = await _communicated_omega(comm, seed, n2, r, phases, stages["generate"])
        omega = np.asfortranarray(
            full[j * omega_rows:(j + 1) * omega_rows, k * omega_cols:(k + 1) * omega_cols]
        )
    else:
        with phases.phase(stages["generate"]):
            omega = gen_block(seed, j * omega_rows, omega_rows, k * omega_cols, omega_cols,
                              total_rows=n2, total_cols=r)
            phases.count("omega_words", omega.size)

    with phases.phase(stages["multiply"]):
        partial = gemm(a_block, omega)

    with phases.phase(stages["reduce"]):
        segment = await comm.reduce_scatter(partial, grid.fiber(comm.rank, 1), REDUCE_SCATTER_B)

    block = OmegaBlock(j * omega_rows, omega_rows, k * omega_cols, omega_cols, omega)
    return DistMatrix(b_layout, comm.rank, segment), block


async def rand_matmul(
    comm: Communicator,
    a: DistMatrix,
    seed: SketchSeed,
    r: int,
    phases: Optional[PhaseLog] = None,
    omega_mode: str = OMEGA_GENERATE,
) -> DistMatrix:
    """
    B = A·Ω(seed) for A (n1 x n2) in A-role on its grid; B (n1 x r) returned in B-role.

    Model cost per rank: (1 - 1/p3)·n1·n2/(p1·p2) + (1 - 1/p2)·n1·r/(p1·p3) words.
    With omega_mode="communicate" Ω is generated once across the ranks and
    all-gathered, adding omega_comm_cost(n2, r, P) words.
    """
    b, _ = await _rand_matmul(comm, a, seed, r, _phases(phases), _SKETCH_STAGES, omega_mode)
    return b


async def redistribute(
    comm: Communicator, b: DistMatrix, target: GridLike, phases: Optional[PhaseLog] = None
) -> DistMatrix:
    """
    Move a B-role matrix onto `target`. Each rank packs its entries per
    destination (ordered by destination offset), one world All-to-All moves
    them, and each rank unpacks source by source. Returns `b` itself when the
    grids already agree.
    """
    target = as_grid(target)
    phases = _phases(phases)
    if b.grid == target:
        return b
    if b.role is not BlockRole.B:
        raise ConfigError(f"redistribute moves B-role matrices, got {b.role.value}-role")

    source_layout = b.layout
    target_layout = BlockLayout(b.layout.rows, b.layout.cols, target, BlockRole.B).validate()
    if target_layout.segment_len != source_layout.segment_len or target.size != comm.world_size:
        raise DimensionError(
            f"cannot redistribute: {source_layout.segment_len} words per rank on {b.grid} "
            f"vs {target_layout.segment_len} on {target}"
        )
    P = comm.world_size

    with phases.phase("all_to_all"):
        rows, cols = source_layout.element_coords(comm.rank)
        dest, offset = target_layout.owner_of(rows, cols)
        order = np.lexsort((offset, dest))
        counts = np.bincount(dest, minlength=P)
        chunks = np.split(b.local[order], np.cumsum(counts)[:-1])
        received = await comm.all_to_all(chunks, comm.world, REDISTRIBUTE_B)

    with phases.phase("unpack"):
        rows, cols = target_layout.element_coords(comm.rank)
        source, _ = source_layout.owner_of(rows, cols)
        local = np.empty(target_layout.segment_len, dtype=np.float64)
        for src in range(P):
            positions = np.flatnonzero(source == src)
            if positions.size != received[src].size:
                raise DimensionError(
                    f"rank {comm.rank} expected {positions.size} words from rank {src}, got {received[src].size}"
                )
            local[positions] = received[src]

    return DistMatrix(target_layout, comm.rank, local)


async def nystrom(
    comm: Communicator,
    a: DistMatrix,
    seed: SketchSeed,
    r: int,
    p: GridLike,
    q: GridLike,
    variant: Optional[str] = None,
    reuse_omega: bool = False,
    phases: Optional[PhaseLog] = None,
) -> Tuple[DistMatrix, DistMatrix]:
    """
    B = A·Ω on Π and C = Ωᵀ·B on Ψ for a symmetric n x n A in A-role on Π.

    Returns (B in B-role on Ψ, C in C-role on Ψ). B is redistributed only when
    Π != Ψ. With reuse_omega the first multiply's Ω block is reused when it
    covers the same global extent as the second's.
    """
    p, q = as_grid(p), as_grid(q)
    phases = _phases(phases)
    n = a.shape[0]
    if a.shape != (n, n):
        raise DimensionError(f"nystrom needs a square A, got {a.shape[0]}x{a.shape[1]}")
    if a.grid != p:
        raise ConfigError(f"A is laid out on {a.grid} but Π is {p}")
    if p.size != q.size:
        raise ConfigError(f"Π {p} and Ψ {q} have different sizes")
    if variant == NOREDIST and p != q:
        raise ConfigError(f"the noredist variant needs Π == Ψ, got {p} and {q}")
    if variant not in (None, REDIST, NOREDIST):
        raise ConfigError(f"unknown variant '{variant}'")
    for name, value, divisor in (("n", n, q.p1), ("r", r, q.p2), ("r", r, q.p3)):
        if value % divisor:
            raise DimensionError(f"{name}={value} is not divisible by Ψ dimension {divisor}")
    BlockLayout(n, r, q, BlockRole.B).validate()
    c_layout = BlockLayout(r, r, q, BlockRole.C).validate()

    b_hat, first_omega = await _rand_matmul(comm, a, seed, r, phases, _NYSTROM_STAGES)
    b = await redistribute(comm, b_hat, q, phases)

    i2, j2, _ = q.coords(comm.rank)
    omega_rows, omega_cols = n // q.p1, r // q.p2
    extent = (i2 * omega_rows, omega_rows, j2 * omega_cols, omega_cols)
    with phases.phase("generate_omega"):
        if reuse_omega and first_omega.covers(*extent):
            omega = first_omega.values
            phases.count("omega_reused", 1)
        else:
            omega = gen_block(seed, *extent, total_rows=n, total_cols=r)
            phases.count("omega_words", omega.size)

    with phases.phase("second_matmul"):
        gathered = await comm.all_gather(b.local, q.fiber(comm.rank, 1), GATHER_B)
        b_block = gathered.reshape((n // q.p1, r // q.p3), order="F")
        partial = gemm(omega, b_block, transpose_a=True)

    with phases.phase("reduce_scatter_c"):
        segment = await comm.reduce_scatter(partial, q.fiber(comm.rank, 0), REDUCE_SCATTER_C)

    return b, DistMatrix(c_layout, comm.rank, segment)


# ---------------------------------------------------------------------------
# Serial oracles
# ---------------------------------------------------------------------------

def serial_sketch(a: DenseMatrix, seed: SketchSeed, r: int) -> DenseMatrix:
    a = as_dense(a, "A")
    return gemm(a, gen_full(seed, a.shape[1], r))


def serial_nystrom(a: DenseMatrix, seed: SketchSeed, r: int) -> Tuple[DenseMatrix, DenseMatrix]:
    """(A·Ω, Ωᵀ·A·Ω) computed densely on one process."""
    a = as_dense(a, "A")
    omega = gen_full(seed, a.shape[0], r)
    b = gemm(a, omega)
    return b, gemm(omega, b, transpose_a=True)


# ---------------------------------------------------------------------------
# Drivers
# ---------------------------------------------------------------------------

@dataclass
class AlgorithmRun:
    """Gathered outputs, costs and per-rank phase logs of one SPMD run."""
    report: CostReport
    phases: List[PhaseLog]
    b: Optional[DenseMatrix] = None
    c: Optional[DenseMatrix] = None
    b_pieces: List[DistMatrix] = field(default_factory=list)
    c_pieces: List[DistMatrix] = field(default_factory=list)
    elapsed_s: float = 0.0


def run_rand_matmul(
    a: DenseMatrix,
    seed: SketchSeed,
    r: int,
    grid: GridLike,
    backend: Union[str, Backend, None] = None,
    gather: bool = True,
    omega_mode: str = OMEGA_GENERATE,
) -> AlgorithmRun:
    """Scatter A on `grid`, run rand_matmul on every rank, optionally gather B."""
    a = as_dense(a, "A")
    grid = as_grid(grid)
    phase_names = SKETCH_OMEGA_COMM_PHASES if omega_mode == OMEGA_COMMUNICATE else SKETCH_PHASES

    async def program(comm: Communicator):
        phases = PhaseLog(phase_names)
        local_a = scatter_matrix(a, grid, BlockRole.A, comm.rank)
        b = await rand_matmul(comm, local_a, seed, r, phases, omega_mode)
        full = await gather_matrix(b, comm) if gather else None
        return b, (full if comm.rank == 0 else None), phases

    logger.info(
        "[SKETCH] rand_matmul n1=%d n2=%d r=%d grid=%s omega=%s", a.shape[0], a.shape[1], r, grid, omega_mode
    )
    spmd = run_spmd(grid.size, program, backend)
    return AlgorithmRun(
        report=spmd.report,
        phases=[res[2] for res in spmd.results],
        b=spmd.results[0][1],
        b_pieces=[res[0] for res in spmd.results],
        elapsed_s=spmd.elapsed_s,
    )


def run_nystrom(
    a: DenseMatrix,
    seed: SketchSeed,
    r: int,
    p: GridLike,
    q: GridLike,
    variant: Optional[str] = None,
    backend: Union[str, Backend, None] = None,
    reuse_omega: bool = False,
    gather: bool = True,
) -> AlgorithmRun:
    """Scatter A on Π, run nystrom on every rank, optionally gather B and C."""
    a = as_dense(a, "A")
    p, q = as_grid(p), as_grid(q)

    async def program(comm: Communicator):
        phases = PhaseLog(NYSTROM_PHASES)
        local_a = scatter_matrix(a, p, BlockRole.A, comm.rank)
        b, c = await nystrom(comm, local_a, seed, r, p, q, variant, reuse_omega, phases)
        full_b = await gather_matrix(b, comm) if gather else None
        full_c = await gather_matrix(c, comm) if gather else None
        if comm.rank != 0:
            full_b = full_c = None
        return b, c, full_b, full_c, phases

    logger.info("[NYSTROM] n=%d r=%d Π=%s Ψ=%s variant=%s", a.shape[0], r, p, q, variant or "-")
    spmd = run_spmd(p.size, program, backend)
    return AlgorithmRun(
        report=spmd.report,
        phases=[res[4] for res in spmd.results],
        b=spmd.results[0][2],
        c=spmd.results[0][3],
        b_pieces=[res[0] for res in spmd.results],
        c_pieces=[res[1] for res in spmd.results],
        elapsed_s=spmd.elapsed_s,
    )
