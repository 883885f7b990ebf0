"""
Tests for the message-passing fabric: collectives, metering, failures, deadlocks
"""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings, strategies as st

from config.settings import settings
from sketchcomm.errors import (
    ConfigError, FabricDeadlockError, FabricError, RankFailureError,
)
from sketchcomm.fabric import Backend, Group, run_spmd, root_cause
from sketchcomm.transports import simulate_all_gather, simulate_reduce_scatter


def test_group_validation():
    assert Group.of([2, 0, 1]).members == (2, 0, 1)
    assert Group.world(3).members == (0, 1, 2)
    assert Group.of([4, 7]).index(7) == 1
    with pytest.raises(FabricError):
        Group.of([0, 0])
    with pytest.raises(FabricError):
        Group.of([])


def test_all_gather_concatenates_in_group_order(backend):
    async def program(comm):
        local = np.full(3, float(comm.rank))
        return await comm.all_gather(local, [3, 1, 0, 2], label="ring")

    result = run_spmd(4, program, backend)
    expected = np.repeat([3.0, 1.0, 0.0, 2.0], 3)
    for out in result.results:
        assert np.array_equal(out, expected)

    for rank in range(4):
        totals = result.report.for_rank(rank)
        assert totals.words_sent == totals.words_received == 9
        assert totals.messages == 3
        assert totals.model_bandwidth == Fraction(9)
        assert totals.model_latency == 2


def test_reduce_scatter_sums_segments(backend):
    async def program(comm):
        buffer = np.arange(6, dtype=np.float64) * (comm.rank + 1)
        return await comm.reduce_scatter(buffer, comm.world, label="rs")

    result = run_spmd(3, program, backend)
    total = np.arange(6, dtype=np.float64) * 6
    for rank, out in enumerate(result.results):
        assert np.array_equal(out, total[2 * rank:2 * rank + 2])
        assert result.report.for_rank(rank).model_bandwidth == Fraction(4)
        assert result.report.for_rank(rank).words_sent == 4


def test_reduce_scatter_sums_in_ascending_member_order():
    buffers = [np.array([1e16, 0.0]), np.array([1.0, 0.0]), np.array([-1e16, 0.0])]
    buffers = [np.concatenate([b, b, b]) for b in buffers]
    outcomes = simulate_reduce_scatter(buffers)
    # ((1e16 + 1) - 1e16) in floating point
    expected = (np.float64(1e16) + 1.0) - 1e16
    for result, _ in outcomes:
        assert result[0] == expected


def test_all_to_all_variable_chunks(backend):
    async def program(comm):
        chunks = [np.full(dst + comm.rank, float(10 * comm.rank + dst)) for dst in range(3)]
        return await comm.all_to_all(chunks, comm.world, label="a2a")

    result = run_spmd(3, program, backend)
    for rank, received in enumerate(result.results):
        for src in range(3):
            assert np.array_equal(received[src], np.full(rank + src, float(10 * src + rank)))
        totals = result.report.for_rank(rank)
        own = sum(dst + rank for dst in range(3))
        assert totals.model_bandwidth == Fraction(own)
        assert totals.words_sent == own - 2 * rank
        assert totals.model_latency == 2


def test_single_member_groups_are_free(backend):
    async def program(comm):
        a = await comm.all_gather(np.ones(4), [comm.rank])
        b = await comm.reduce_scatter(np.ones(4), [comm.rank])
        c = await comm.all_to_all([np.ones(2)], [comm.rank])
        return a.size + b.size + c[0].size

    result = run_spmd(3, program, backend)
    assert result.results == [10, 10, 10]
    assert result.report.records == []


def test_sub_groups_run_concurrently(backend):
    async def program(comm):
        group = [0, 1] if comm.rank < 2 else [2, 3]
        return await comm.all_gather(np.array([comm.rank], dtype=float), group)

    result = run_spmd(4, program, backend)
    assert [r.tolist() for r in result.results] == [[0, 1], [0, 1], [2, 3], [2, 3]]


def test_meter_paused_collectives_are_not_recorded(backend):
    async def program(comm):
        await comm.all_gather(np.ones(2), comm.world, label="counted")
        with comm.meter_paused():
            await comm.all_gather(np.ones(2), comm.world, label="hidden")
        return comm.metered

    result = run_spmd(2, program, backend)
    assert result.results == [True, True]
    assert result.report.labels() == ["counted"]


def test_backends_bit_identical():
    async def program(comm):
        local = np.random.default_rng(comm.rank).standard_normal(12)
        gathered = await comm.all_gather(local, comm.world)
        return await comm.reduce_scatter(gathered * (comm.rank + 0.5), comm.world)

    lock = run_spmd(4, program, Backend.LOCKSTEP)
    threaded = run_spmd(4, program, Backend.THREADED)
    for a, b in zip(lock.results, threaded.results):
        assert a.tobytes() == b.tobytes()
    assert lock.report.rows() == threaded.report.rows()


def test_plain_function_programs_run():
    result = run_spmd(3, lambda comm: comm.rank * 2)
    assert result.results == [0, 2, 4]


def test_bad_world_size_and_backend():
    with pytest.raises(ConfigError):
        run_spmd(0, lambda comm: None)
    with pytest.raises(ConfigError):
        run_spmd(2, lambda comm: None, backend="mpi")


def test_non_member_call_fails(backend):
    async def program(comm):
        return await comm.all_gather(np.ones(1), [0])

    with pytest.raises(RankFailureError) as excinfo:
        run_spmd(2, program, backend)
    assert isinstance(excinfo.value.failures[1], FabricError)


def test_reduce_scatter_indivisible_buffer(backend):
    async def program(comm):
        return await comm.reduce_scatter(np.ones(5), comm.world)

    with pytest.raises(RankFailureError) as excinfo:
        run_spmd(2, program, backend)
    assert "equal segments" in str(root_cause(excinfo.value))


def test_all_gather_size_mismatch(backend):
    async def program(comm):
        return await comm.all_gather(np.ones(comm.rank + 1), comm.world)

    with pytest.raises(RankFailureError) as excinfo:
        run_spmd(2, program, backend)
    assert isinstance(root_cause(excinfo.value), FabricError)


def test_rank_failure_is_reported_with_rank():
    async def program(comm):
        if comm.rank == 1:
            raise ValueError("boom")
        return await comm.all_gather(np.ones(1), comm.world)

    with pytest.raises(RankFailureError) as excinfo:
        run_spmd(3, program, Backend.LOCKSTEP)
    assert list(excinfo.value.failures) == [1]
    assert "rank 1: ValueError: boom" in str(excinfo.value)


def test_threaded_peer_failure_does_not_hang(monkeypatch):
    monkeypatch.setattr(settings, "DEADLOCK_TIMEOUT", 5.0)

    async def program(comm):
        if comm.rank == 0:
            raise ValueError("boom")
        return await comm.all_gather(np.ones(1), comm.world)

    with pytest.raises(RankFailureError) as excinfo:
        run_spmd(3, program, Backend.THREADED)
    assert list(excinfo.value.failures) == [0]


def test_lockstep_detects_deadlock():
    async def program(comm):
        if comm.rank == 0:
            return None
        return await comm.all_gather(np.ones(1), comm.world, label="stuck")

    with pytest.raises(FabricDeadlockError, match="rank 1"):
        run_spmd(2, program, Backend.LOCKSTEP)


def test_threaded_detects_deadlock(monkeypatch):
    monkeypatch.setattr(settings, "DEADLOCK_TIMEOUT", 0.5)

    async def program(comm):
        if comm.rank == 0:
            return None
        return await comm.all_gather(np.ones(1), comm.world, label="stuck")

    with pytest.raises(RankFailureError) as excinfo:
        run_spmd(2, program, Backend.THREADED)
    assert isinstance(root_cause(excinfo.value), FabricDeadlockError)


def test_lockstep_mismatched_labels():
    async def program(comm):
        return await comm.all_gather(np.ones(1), comm.world, label=f"site{comm.rank}")

    with pytest.raises(RankFailureError) as excinfo:
        run_spmd(2, program, Backend.LOCKSTEP)
    assert "different collectives" in str(root_cause(excinfo.value))


def test_collective_errors_can_be_caught_by_the_program(backend):
    async def program(comm):
        try:
            await comm.all_gather(np.ones(comm.rank + 1), comm.world)
        except FabricError:
            return "recovered"

    result = run_spmd(2, program, backend)
    assert result.results == ["recovered", "recovered"]


@hyp_settings(max_examples=40, deadline=None)
@given(
    st.integers(min_value=1, max_value=6),
    st.integers(min_value=0, max_value=4),
)
def test_ring_all_gather_moves_exact_model_words(q, block):
    """(1 - 1/Q)·W words each way, Q - 1 messages."""
    blocks = [np.full(block, float(i)) for i in range(q)]
    for result, transfer in simulate_all_gather(blocks):
        assert np.array_equal(result, np.repeat(np.arange(q, dtype=float), block))
        assert transfer.words_sent == transfer.words_received == (q - 1) * block
        assert transfer.messages == q - 1
