"""
Execution Engines
Two interchangeable ways of running the per-rank coroutines of an SPMD program:

- ThreadedTransport: one thread per rank; collectives are point-to-point
  schedules over bounded (src, dst) mailboxes.
- LockstepTransport: a single-threaded scheduler that steps every rank until
  it posts a collective, completes a collective once all members of its group
  have posted, and reports a deadlock when nothing can move.

Both run the same schedules (ring All-Gather, pairwise Reduce-Scatter with an
ascending-order sum, pairwise All-to-All), so results are bit-identical and
the measured word counts agree.
"""

import logging
import queue
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Any, Coroutine, Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config.settings import settings
from sketchcomm.cost_meter import ALL_GATHER, ALL_TO_ALL, REDUCE_SCATTER, CostMeter
from sketchcomm.errors import FabricDeadlockError, FabricError

logger = logging.getLogger(__name__)

_POLL_SECONDS = 0.05


@dataclass
class Post:
    """A collective call one rank is waiting on. Awaiting it suspends the rank's coroutine."""
    op: str
    members: Tuple[int, ...]
    label: str
    payload: Any
    metered: bool = True

    def __await__(self):
        result = yield self
        return result

    def describe(self) -> str:
        return f"{self.op}('{self.label}', group={list(self.members)})"


@dataclass
class Transfer:
    """Words and messages one rank actually moved in one collective."""
    words_sent: int = 0
    words_received: int = 0
    messages: int = 0

    def send(self, words: int):
        self.words_sent += int(words)
        self.messages += 1

    def receive(self, words: int):
        self.words_received += int(words)


class PeerAbortedError(FabricError):
    """Raised in a blocked rank after another rank of the same run failed."""


def model_words(post: Post) -> int:
    """W of the collective cost model for the posting rank."""
    if post.op == ALL_GATHER:
        return len(post.members) * post.payload.size
    if post.op == REDUCE_SCATTER:
        return post.payload.size
    return sum(chunk.size for chunk in post.payload)


def record_cost(meter: CostMeter, rank: int, post: Post, transfer: Transfer):
    if post.metered:
        meter.record(
            rank, post.label, post.op, len(post.members), model_words(post),
            transfer.words_sent, transfer.words_received, transfer.messages,
        )


def _advance(coro: Coroutine, value: Any, error: Optional[BaseException]):
    """Resume a rank; returns the next Post or raises StopIteration / the rank's error."""
    if error is not None:
        return coro.throw(error)
    return coro.send(value)


def _sum_ascending(contributions: Sequence[np.ndarray]) -> np.ndarray:
    total = contributions[0].copy()
    for part in contributions[1:]:
        total += part
    return total


# ---------------------------------------------------------------------------
# Lockstep: whole-group schedule simulation on one thread
# ---------------------------------------------------------------------------

def simulate_all_gather(blocks: List[np.ndarray]) -> List[Tuple[np.ndarray, Transfer]]:
    """Ring all-gather: at step s member q forwards block (q - s) mod Q to member q + 1."""
    size = blocks[0].size
    if any(block.size != size for block in blocks):
        raise FabricError(f"all_gather block sizes differ across members: {[b.size for b in blocks]}")

    Q = len(blocks)
    held = [{q: blocks[q]} for q in range(Q)]
    transfers = [Transfer() for _ in range(Q)]
    for step in range(Q - 1):
        in_flight = []
        for q in range(Q):
            index = (q - step) % Q
            in_flight.append(((q + 1) % Q, index, held[q][index]))
            transfers[q].send(size)
        for dst, index, block in in_flight:
            held[dst][index] = block.copy()
            transfers[dst].receive(size)

    return [
        (np.concatenate([held[q][i] for i in range(Q)]), transfers[q]) for q in range(Q)
    ]


def simulate_reduce_scatter(buffers: List[np.ndarray]) -> List[Tuple[np.ndarray, Transfer]]:
    """Pairwise exchange of segments; member q sums the q-th segments in ascending member order."""
    size = buffers[0].size
    if any(buf.size != size for buf in buffers):
        raise FabricError(f"reduce_scatter buffer sizes differ across members: {[b.size for b in buffers]}")

    Q = len(buffers)
    seg = size // Q
    contributions: List[Dict[int, np.ndarray]] = [{q: buffers[q][q * seg:(q + 1) * seg]} for q in range(Q)]
    transfers = [Transfer() for _ in range(Q)]
    for step in range(1, Q):
        for q in range(Q):
            dst = (q + step) % Q
            contributions[dst][q] = buffers[q][dst * seg:(dst + 1) * seg].copy()
            transfers[q].send(seg)
            transfers[dst].receive(seg)

    return [
        (_sum_ascending([contributions[q][m] for m in range(Q)]), transfers[q]) for q in range(Q)
    ]


def simulate_all_to_all(chunk_lists: List[List[np.ndarray]]) -> List[Tuple[List[np.ndarray], Transfer]]:
    """Pairwise exchange: at step s member q sends its chunk for member q + s."""
    Q = len(chunk_lists)
    received: List[Dict[int, np.ndarray]] = [{q: chunk_lists[q][q].copy()} for q in range(Q)]
    transfers = [Transfer() for _ in range(Q)]
    for step in range(1, Q):
        for q in range(Q):
            dst = (q + step) % Q
            chunk = chunk_lists[q][dst]
            received[dst][q] = chunk.copy()
            transfers[q].send(chunk.size)
            transfers[dst].receive(chunk.size)

    return [([received[q][src] for src in range(Q)], transfers[q]) for q in range(Q)]


_SIMULATORS = {
    ALL_GATHER: simulate_all_gather,
    REDUCE_SCATTER: simulate_reduce_scatter,
    ALL_TO_ALL: simulate_all_to_all,
}


class LockstepTransport:
    """Deterministic single-threaded executor with deadlock detection."""

    name = "lockstep"

    def run(
        self, coroutines: Dict[int, Coroutine], meter: CostMeter
    ) -> Tuple[Dict[int, Any], Dict[int, BaseException]]:
        results: Dict[int, Any] = {}
        failures: Dict[int, BaseException] = {}
        ready: Deque[Tuple[int, Any, Optional[BaseException]]] = deque(
            (rank, None, None) for rank in sorted(coroutines)
        )
        waiting: Dict[Tuple[int, ...], Dict[int, Post]] = {}
        blocked: Dict[int, Post] = {}

        while ready:
            rank, value, error = ready.popleft()
            coro = coroutines[rank]
            try:
                post = _advance(coro, value, error)
            except StopIteration as stop:
                results[rank] = stop.value
                continue
            except Exception as exc:
                failures[rank] = exc
                continue

            if not isinstance(post, Post):
                coro.close()
                failures[rank] = FabricError(f"rank {rank} awaited {post!r}, not a collective")
                continue

            blocked[rank] = post
            bucket = waiting.setdefault(post.members, {})
            bucket[rank] = post
            if len(bucket) < len(post.members):
                continue

            del waiting[post.members]
            for member in post.members:
                del blocked[member]
            self._complete(post.members, bucket, meter, ready)

        if blocked:
            for rank in blocked:
                coroutines[rank].close()
            if failures:
                logger.warning(
                    "[LOCKSTEP] ranks %s stranded after failures on ranks %s",
                    sorted(blocked), sorted(failures),
                )
                return results, failures
            details = "; ".join(f"rank {rank} in {post.describe()}" for rank, post in sorted(blocked.items()))
            logger.error("[LOCKSTEP] deadlock: %s", details)
            raise FabricDeadlockError(f"collectives can never complete: {details}")

        return results, failures

    def _complete(self, members: Tuple[int, ...], bucket: Dict[int, Post], meter: CostMeter, ready: Deque):
        posts = [bucket[m] for m in members]
        first = posts[0]
        try:
            mismatched = [
                f"rank {m}: {p.describe()}" for m, p in zip(members, posts)
                if (p.op, p.label) != (first.op, first.label)
            ]
            if mismatched:
                raise FabricError(
                    f"group {list(members)} posted different collectives: "
                    f"rank {members[0]}: {first.describe()}; " + "; ".join(mismatched)
                )
            outcomes = _SIMULATORS[first.op]([p.payload for p in posts])
        except FabricError as exc:
            for member in members:
                ready.append((member, None, exc))
            return

        for member, post, (result, transfer) in zip(members, posts, outcomes):
            record_cost(meter, member, post, transfer)
            ready.append((member, result, None))


# ---------------------------------------------------------------------------
# Threaded: one thread per rank, point-to-point mailboxes
# ---------------------------------------------------------------------------

class _Mailboxes:
    """Bounded FIFO per ordered (src, dst) pair."""

    def __init__(self, capacity: int, timeout: float, abort: threading.Event):
        self.capacity = capacity
        self.timeout = timeout
        self.abort = abort
        self._queues: Dict[Tuple[int, int], queue.Queue] = {}
        self._lock = threading.Lock()

    def _queue(self, src: int, dst: int) -> queue.Queue:
        with self._lock:
            box = self._queues.get((src, dst))
            if box is None:
                box = self._queues[(src, dst)] = queue.Queue(maxsize=self.capacity)
            return box

    def send(self, src: int, dst: int, tag: Tuple, data: np.ndarray):
        box = self._queue(src, dst)
        deadline = time.monotonic() + self.timeout
        while True:
            if self.abort.is_set():
                raise PeerAbortedError(f"rank {src} stopped sending: another rank failed")
            try:
                box.put((tag, np.array(data, copy=True)), timeout=_POLL_SECONDS)
                return
            except queue.Full:
                if time.monotonic() > deadline:
                    raise FabricDeadlockError(f"rank {src} could not deliver {tag[:2]} to rank {dst} within {self.timeout}s")

    def recv(self, src: int, dst: int, tag: Tuple) -> np.ndarray:
        box = self._queue(src, dst)
        deadline = time.monotonic() + self.timeout
        while True:
            if self.abort.is_set():
                raise PeerAbortedError(f"rank {dst} stopped waiting on rank {src}: another rank failed")
            try:
                got_tag, data = box.get(timeout=_POLL_SECONDS)
            except queue.Empty:
                if time.monotonic() > deadline:
                    raise FabricDeadlockError(
                        f"rank {dst} waited {self.timeout}s for {tag[0]}('{tag[1]}') from rank {src}"
                    )
                continue
            if got_tag != tag:
                raise FabricError(f"rank {dst} expected {tag} from rank {src} but received {got_tag}")
            return data


class ThreadedTransport:
    """One worker thread per rank; collectives block on mailbox receives."""

    name = "threaded"

    def __init__(self, capacity: Optional[int] = None, timeout: Optional[float] = None):
        self.capacity = capacity or settings.MAILBOX_CAPACITY
        self.timeout = timeout or settings.DEADLOCK_TIMEOUT

    def run(
        self, coroutines: Dict[int, Coroutine], meter: CostMeter
    ) -> Tuple[Dict[int, Any], Dict[int, BaseException]]:
        results: Dict[int, Any] = {}
        failures: Dict[int, BaseException] = {}
        abort = threading.Event()
        mail = _Mailboxes(self.capacity, self.timeout, abort)

        def worker(rank: int, coro: Coroutine):
            value, error = None, None
            try:
                while True:
                    try:
                        post = _advance(coro, value, error)
                    except StopIteration as stop:
                        results[rank] = stop.value
                        return
                    value, error = None, None
                    if not isinstance(post, Post):
                        raise FabricError(f"rank {rank} awaited {post!r}, not a collective")
                    try:
                        value = self._execute(rank, post, mail, meter)
                    except PeerAbortedError:
                        raise
                    except FabricError as exc:
                        error = exc
            except BaseException as exc:
                failures[rank] = exc
                abort.set()

        threads = [
            threading.Thread(target=worker, args=(rank, coro), name=f"rank-{rank}", daemon=True)
            for rank, coro in sorted(coroutines.items())
        ]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()

        primary = {r: e for r, e in failures.items() if not isinstance(e, PeerAbortedError)}
        return results, (primary or failures)

    def _execute(self, rank: int, post: Post, mail: _Mailboxes, meter: CostMeter):
        members = post.members
        Q = len(members)
        q = members.index(rank)
        left, right = members[(q - 1) % Q], members[(q + 1) % Q]
        transfer = Transfer()

        def tag(step: int) -> Tuple:
            return (post.op, post.label, members, step)

        if post.op == ALL_GATHER:
            own = post.payload
            blocks: List[Optional[np.ndarray]] = [None] * Q
            blocks[q] = own
            for step in range(Q - 1):
                mail.send(rank, right, tag(step), blocks[(q - step) % Q])
                transfer.send(own.size)
                incoming = mail.recv(left, rank, tag(step))
                if incoming.size != own.size:
                    raise FabricError(
                        f"all_gather block sizes differ: rank {rank} holds {own.size} words, "
                        f"rank {left} forwarded {incoming.size}"
                    )
                transfer.receive(incoming.size)
                blocks[(q - 1 - step) % Q] = incoming
            result = np.concatenate(blocks)

        elif post.op == REDUCE_SCATTER:
            buffer = post.payload
            seg = buffer.size // Q
            contributions: List[Optional[np.ndarray]] = [None] * Q
            contributions[q] = buffer[q * seg:(q + 1) * seg]
            for step in range(1, Q):
                dst = (q + step) % Q
                src = (q - step) % Q
                mail.send(rank, members[dst], tag(step), buffer[dst * seg:(dst + 1) * seg])
                transfer.send(seg)
                incoming = mail.recv(members[src], rank, tag(step))
                if incoming.size != seg:
                    raise FabricError(
                        f"reduce_scatter segment sizes differ: rank {rank} expects {seg} words, "
                        f"rank {members[src]} sent {incoming.size}"
                    )
                transfer.receive(incoming.size)
                contributions[src] = incoming
            result = _sum_ascending(contributions)

        else:
            chunks = post.payload
            received: List[Optional[np.ndarray]] = [None] * Q
            received[q] = chunks[q].copy()
            for step in range(1, Q):
                dst = (q + step) % Q
                src = (q - step) % Q
                mail.send(rank, members[dst], tag(step), chunks[dst])
                transfer.send(chunks[dst].size)
                incoming = mail.recv(members[src], rank, tag(step))
                transfer.receive(incoming.size)
                received[src] = incoming
            result = received

        record_cost(meter, rank, post, transfer)
        return result
