"""
Message-Passing Fabric
SPMD programs are coroutines `async def program(comm)`; every collective is
awaited:

    async def program(comm):
        gathered = await comm.all_gather(local, group, label="gather_A")

run_spmd(P, program, backend) runs one coroutine per rank on the chosen
transport and returns the per-rank results with the merged CostReport.
"""

import inspect
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Awaitable, Callable, Iterable, List, Sequence, Tuple, Union

import numpy as np

from config.settings import settings
from sketchcomm.cost_meter import ALL_GATHER, ALL_TO_ALL, REDUCE_SCATTER, CostMeter, CostReport
from sketchcomm.errors import ConfigError, FabricDeadlockError, FabricError, RankFailureError
from sketchcomm.transports import LockstepTransport, Post, ThreadedTransport

logger = logging.getLogger(__name__)


class Backend(str, Enum):
    THREADED = "threaded"
    LOCKSTEP = "lockstep"


@dataclass(frozen=True)
class Group:
    """Ordered, duplicate-free list of ranks a collective runs over."""
    members: Tuple[int, ...]

    def __post_init__(self):
        members = tuple(int(m) for m in self.members)
        if not members:
            raise FabricError("a group needs at least one member")
        if len(set(members)) != len(members):
            raise FabricError(f"group members must be distinct, got {list(members)}")
        if min(members) < 0:
            raise FabricError(f"group members must be non-negative ranks, got {list(members)}")
        object.__setattr__(self, "members", members)

    @classmethod
    def of(cls, members: Iterable[int]) -> "Group":
        return cls(tuple(members))

    @classmethod
    def world(cls, size: int) -> "Group":
        return cls(tuple(range(size)))

    @property
    def size(self) -> int:
        return len(self.members)

    def index(self, rank: int) -> int:
        return self.members.index(rank)

    def __contains__(self, rank: int) -> bool:
        return rank in self.members

    def __len__(self) -> int:
        return len(self.members)


GroupLike = Union[Group, Sequence[int]]


def _flat(values) -> np.ndarray:
    """Contiguous 1-D float64 copy, column-major for 2-D input."""
    return np.array(np.asarray(values, dtype=np.float64).ravel(order="F"), copy=True)


class Communicator:
    """One rank's handle on the fabric."""

    def __init__(self, rank: int, world_size: int, backend: Backend):
        self.rank = rank
        self.world_size = world_size
        self.backend = backend
        self._metered = True

    @property
    def world(self) -> Group:
        return Group.world(self.world_size)

    @property
    def metered(self) -> bool:
        return self._metered

    @contextmanager
    def meter_paused(self):
        """Collectives issued inside this block are not charged to the CostReport."""
        previous = self._metered
        self._metered = False
        try:
            yield self
        finally:
            self._metered = previous

    def _group(self, group: GroupLike) -> Group:
        group = group if isinstance(group, Group) else Group.of(group)
        if self.rank not in group:
            raise FabricError(f"rank {self.rank} is not a member of group {list(group.members)}")
        if max(group.members) >= self.world_size:
            raise FabricError(f"group {list(group.members)} names ranks outside 0..{self.world_size - 1}")
        return group

    async def all_gather(self, local, group: GroupLike, label: str = ALL_GATHER) -> np.ndarray:
        """Concatenation of every member's block (flattened column-major) in group order."""
        group = self._group(group)
        block = _flat(local)
        if group.size == 1:
            return block
        return await Post(ALL_GATHER, group.members, label, block, self._metered)

    async def reduce_scatter(self, buffer, group: GroupLike, label: str = REDUCE_SCATTER) -> np.ndarray:
        """Member q receives the sum of every member's q-th contiguous segment."""
        group = self._group(group)
        flat = _flat(buffer)
        if flat.size % group.size:
            raise FabricError(
                f"reduce_scatter buffer of {flat.size} words does not split into {group.size} equal segments"
            )
        if group.size == 1:
            return flat
        return await Post(REDUCE_SCATTER, group.members, label, flat, self._metered)

    async def all_to_all(self, chunks: Sequence, group: GroupLike, label: str = ALL_TO_ALL) -> List[np.ndarray]:
        """Send chunks[d] to member d; returns the chunks received from each member in group order."""
        group = self._group(group)
        if len(chunks) != group.size:
            raise FabricError(f"all_to_all needs {group.size} chunks (one per member), got {len(chunks)}")
        flat = [_flat(chunk) for chunk in chunks]
        if group.size == 1:
            return flat
        return await Post(ALL_TO_ALL, group.members, label, flat, self._metered)


@dataclass
class SpmdResult:
    """Per-rank return values plus the merged cost report."""
    results: List[Any]
    report: CostReport
    backend: Backend
    elapsed_s: float = 0.0
    meta: dict = field(default_factory=dict)


def _transport(backend: Backend):
    return ThreadedTransport() if backend is Backend.THREADED else LockstepTransport()


async def _invoke(program, comm: Communicator):
    outcome = program(comm)
    if inspect.isawaitable(outcome):
        return await outcome
    return outcome


def run_spmd(
    P: int,
    program: Callable[[Communicator], Union[Awaitable[Any], Any]],
    backend: Union[str, Backend, None] = None,
) -> SpmdResult:
    """
    Run `program(comm)` on ranks 0..P-1.

    Raises:
        ConfigError: P < 1 or unknown backend
        FabricDeadlockError: collectives that can never complete (lockstep)
        RankFailureError: one or more ranks raised; `failures` maps rank -> exception
    """
    if P < 1:
        raise ConfigError(f"P must be at least 1, got {P}")
    try:
        backend = Backend(backend or settings.DEFAULT_BACKEND)
    except ValueError:
        raise ConfigError(f"unknown backend '{backend}' (use threaded or lockstep)")

    logger.info("[FABRIC] run_spmd P=%d backend=%s", P, backend.value)
    started = time.perf_counter()
    meter = CostMeter(P)

    coroutines = {rank: _invoke(program, Communicator(rank, P, backend)) for rank in range(P)}

    results, failures = _transport(backend).run(coroutines, meter)
    elapsed = time.perf_counter() - started

    if failures:
        logger.error("[FABRIC] run_spmd failed on ranks %s", sorted(failures))
        raise RankFailureError(failures)

    report = meter.report()
    logger.info(
        "[FABRIC] run_spmd done P=%d critical_path_words=%d in %.3fs",
        P, report.critical_path_words, elapsed,
    )
    return SpmdResult([results[rank] for rank in range(P)], report, backend, elapsed)


def root_cause(exc: BaseException) -> BaseException:
    """The first underlying rank failure of a RankFailureError (else exc itself)."""
    if isinstance(exc, RankFailureError) and exc.failures:
        deadlocks = [e for e in exc.failures.values() if isinstance(e, FabricDeadlockError)]
        return deadlocks[0] if deadlocks else next(iter(exc.failures.values()))
    return exc
