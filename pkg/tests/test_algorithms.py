"""
Tests for the parallel sketching algorithms against their serial oracles
"""

import itertools
from fractions import Fraction

import numpy as np
import pytest

from sketchcomm.algorithms import (
    NYSTROM_PHASES, OMEGA_COMMUNICATE, SKETCH_OMEGA_COMM_PHASES, SKETCH_PHASES, omega_comm_cost,
    redistribute, run_nystrom, run_rand_matmul, serial_nystrom, serial_sketch,
)
from sketchcomm.bounds import lb_randmatmul, randmatmul_case
from sketchcomm.distribution import BlockRole, assemble, scatter_matrix
from sketchcomm.errors import ConfigError, RankFailureError
from sketchcomm.fabric import Backend, run_spmd
from sketchcomm.grids import (
    GATHER_OMEGA, REDISTRIBUTE_B, REDUCE_SCATTER_C, GridSpec, nystrom_runnable, predicted_cost_nystrom,
    predicted_cost_randmatmul, randmatmul_case_grid, randmatmul_runnable, select_grids_nystrom,
    variant_grids_1d,
)
from sketchcomm.linalg import frobenius_sigma, kernel_rbf, nystrom_error
from sketchcomm.rng import Distribution, SketchSeed
from tests.conftest import random_matrix, random_spsd


def _close(actual, expected, rel=1e-12):
    scale = max(float(np.max(np.abs(expected))), 1.0)
    return float(np.max(np.abs(actual - expected))) <= rel * scale


# ---------------------------------------------------------------------------
# rand_matmul
# ---------------------------------------------------------------------------

def test_rand_matmul_two_by_two(seed, backend):
    a = random_matrix(4, 4)
    run = run_rand_matmul(a, seed, 2, (2, 2, 1), backend)
    assert _close(run.b, serial_sketch(a, seed, 2))
    assert run.report.max_model_bandwidth == predicted_cost_randmatmul(4, 4, 2, (2, 2, 1)).bandwidth
    assert len(run.b_pieces) == 4
    assert all(piece.role is BlockRole.B for piece in run.b_pieces)


def test_rand_matmul_one_dimensional_grid_moves_nothing(seed):
    a = random_matrix(16, 8)
    run = run_rand_matmul(a, seed, 2, (8, 1, 1))
    assert run.report.critical_path_words == 0
    assert run.b.tobytes() == serial_sketch(a, seed, 2).tobytes()


@pytest.mark.parametrize("dims", [(1, 1, 1), (2, 1, 2), (1, 4, 2), (2, 2, 2), (4, 2, 1)])
def test_rand_matmul_matches_serial(seed, dims):
    a = random_matrix(8, 8, seed=3)
    run = run_rand_matmul(a, seed, 4, dims)
    assert _close(run.b, serial_sketch(a, seed, 4))
    assert run.report.max_model_bandwidth == predicted_cost_randmatmul(8, 8, 4, dims).bandwidth


def test_rand_matmul_phase_log(seed):
    run = run_rand_matmul(random_matrix(4, 4), seed, 2, (2, 1, 1))
    for log in run.phases:
        assert tuple(log.times) == SKETCH_PHASES
        assert log.counters["omega_words"] == 4 * 2


def test_rand_matmul_without_gather(seed):
    run = run_rand_matmul(random_matrix(4, 4), seed, 2, (2, 1, 1), gather=False)
    assert run.b is None
    assert _close(assemble(run.b_pieces), serial_sketch(random_matrix(4, 4), seed, 2))


def test_rand_matmul_uniform_distribution():
    seed = SketchSeed(42, Distribution.UNIFORM)
    a = random_matrix(8, 4)
    run = run_rand_matmul(a, seed, 2, (2, 2, 1))
    assert _close(run.b, serial_sketch(a, seed, 2))


def test_rand_matmul_rejects_indivisible_r(seed):
    with pytest.raises(RankFailureError):
        run_rand_matmul(random_matrix(4, 4), seed, 3, (1, 1, 2))


def test_omega_comm_cost():
    assert omega_comm_cost(8, 4, 4) == Fraction(24)
    assert omega_comm_cost(8, 4, 1) == 0


@pytest.mark.parametrize("dims", [(4, 1, 1), (2, 2, 1), (1, 2, 2), (8, 1, 1)])
def test_communicated_omega_moves_the_modelled_words(seed, backend, dims):
    n1, n2, r = 8, 16, 4
    P = dims[0] * dims[1] * dims[2]
    a = random_matrix(n1, n2, seed=9)
    generated = run_rand_matmul(a, seed, r, dims, backend)
    communicated = run_rand_matmul(a, seed, r, dims, backend, omega_mode=OMEGA_COMMUNICATE)

    assert communicated.b.tobytes() == generated.b.tobytes()
    omega_totals = communicated.report.filter([GATHER_OMEGA]).rank_totals().values()
    for totals in omega_totals:
        assert totals.words_sent == totals.words_received == omega_comm_cost(n2, r, P)
        assert totals.model_bandwidth == omega_comm_cost(n2, r, P)
    assert communicated.report.max_model_bandwidth == (
        generated.report.max_model_bandwidth + omega_comm_cost(n2, r, P)
    )
    for log in communicated.phases:
        assert tuple(log.times) == SKETCH_OMEGA_COMM_PHASES
        assert log.counters["omega_words"] == n2 * r // P


def test_communicated_omega_single_rank_is_free(seed):
    a = random_matrix(4, 8)
    run = run_rand_matmul(a, seed, 2, (1, 1, 1), omega_mode=OMEGA_COMMUNICATE)
    assert run.report.records == []
    assert run.b.tobytes() == serial_sketch(a, seed, 2).tobytes()


def test_communicated_omega_needs_even_split(seed):
    with pytest.raises(RankFailureError):
        run_rand_matmul(random_matrix(4, 3), seed, 1, (4, 1, 1), omega_mode=OMEGA_COMMUNICATE)


def test_unknown_omega_mode(seed):
    with pytest.raises(RankFailureError) as excinfo:
        run_rand_matmul(random_matrix(4, 4), seed, 2, (2, 1, 1), omega_mode="broadcast")
    assert isinstance(excinfo.value.failures[0], ConfigError)


@pytest.mark.parametrize("n", [64, 256])
@pytest.mark.parametrize("dims", [(2, 2, 2), (2, 4, 2), (4, 2, 2)])
def test_rand_matmul_three_dimensional_grids_agree_across_backends(seed, n, dims):
    r = 32
    a = random_matrix(n, n, seed=n)
    lock = run_rand_matmul(a, seed, r, dims, Backend.LOCKSTEP)
    threaded = run_rand_matmul(a, seed, r, dims, Backend.THREADED)
    assert _close(lock.b, serial_sketch(a, seed, r))
    assert np.array_equal(lock.b, threaded.b)
    assert lock.report.rows() == threaded.report.rows()
    assert lock.report.max_model_bandwidth == predicted_cost_randmatmul(n, n, r, dims).bandwidth


# ---------------------------------------------------------------------------
# redistribute
# ---------------------------------------------------------------------------

def _redistribute(matrix, source, target, backend=None):
    source, target = GridSpec.of(*source), GridSpec.of(*target)

    async def program(comm):
        piece = scatter_matrix(matrix, source, BlockRole.B, comm.rank)
        return await redistribute(comm, piece, target)

    return run_spmd(source.size, program, backend)


def test_redistribute_one_dimensional_grids(backend):
    m = np.arange(16, dtype=np.float64).reshape(4, 4)
    result = _redistribute(m, (4, 1, 1), (1, 1, 4), backend)
    assert np.array_equal(assemble(result.results), m)
    for piece in result.results:
        assert piece.grid == GridSpec.of(1, 1, 4)
    assert result.report.labels() == [REDISTRIBUTE_B]
    assert result.report.max_model_bandwidth == Fraction(4)


def test_redistribute_there_and_back():
    m = random_matrix(8, 4)
    first = _redistribute(m, (2, 1, 2), (1, 2, 2))
    assert np.array_equal(assemble(first.results), m)
    back = _redistribute(assemble(first.results), (1, 2, 2), (2, 1, 2))
    assert assemble(back.results).tobytes() == np.asfortranarray(m).tobytes()


def test_redistribute_same_grid_is_free():
    m = random_matrix(8, 4)
    result = _redistribute(m, (2, 2, 1), (2, 2, 1))
    assert result.report.records == []
    assert np.array_equal(assemble(result.results), m)


def test_redistribute_rejects_other_roles():
    grid = GridSpec.of(2, 1, 1)

    async def program(comm):
        piece = scatter_matrix(random_matrix(4, 4), grid, BlockRole.A, comm.rank)
        return await redistribute(comm, piece, (1, 1, 2))

    with pytest.raises(RankFailureError) as excinfo:
        run_spmd(2, program)
    assert isinstance(excinfo.value.failures[0], ConfigError)


# ---------------------------------------------------------------------------
# nystrom
# ---------------------------------------------------------------------------

def test_nystrom_single_rank_is_bit_exact(seed):
    a = random_spsd(8, 3)
    run = run_nystrom(a, seed, 2, (1, 1, 1), (1, 1, 1))
    b, c = serial_nystrom(a, seed, 2)
    assert run.b.tobytes() == b.tobytes()
    assert run.c.tobytes() == c.tobytes()
    assert run.report.records == []


def test_nystrom_noredist_cost(seed, backend):
    a = random_spsd(8, 4)
    run = run_nystrom(a, seed, 2, (4, 1, 1), (4, 1, 1), "noredist", backend)
    b, c = serial_nystrom(a, seed, 2)
    assert _close(run.b, b) and _close(run.c, c)
    assert run.report.max_model_bandwidth == Fraction(3)
    assert run.report.labels() == [REDUCE_SCATTER_C]
    for log in run.phases:
        assert tuple(log.times) == NYSTROM_PHASES
        assert log.times["all_to_all"] == 0.0
        assert log.times["unpack"] == 0.0


def test_nystrom_redist_cost(seed, backend):
    a = random_spsd(8, 4)
    run = run_nystrom(a, seed, 4, (4, 1, 1), (1, 1, 4), "redist", backend)
    b, c = serial_nystrom(a, seed, 4)
    assert _close(run.b, b) and _close(run.c, c)
    assert run.report.max_model_bandwidth == Fraction(8)
    assert run.report.labels() == [REDISTRIBUTE_B]


def test_nystrom_case_three_grids(seed):
    n, r, P = 8, 4, 16
    p, q = select_grids_nystrom(n, r, P, "redist")
    assert (p, q) == (GridSpec.of(8, 2, 1), GridSpec.of(2, 2, 4))
    a = random_spsd(n, 5)
    run = run_nystrom(a, seed, r, p, q, "redist")
    b, c = serial_nystrom(a, seed, r)
    assert _close(run.b, b) and _close(run.c, c)
    assert run.report.max_model_bandwidth == predicted_cost_nystrom(n, r, p, q).bandwidth


@pytest.mark.parametrize("P", [1, 2, 4, 8, 16])
@pytest.mark.parametrize("variant", ["redist", "noredist"])
def test_nystrom_matches_serial_on_one_dimensional_grids(seed, P, variant):
    n, r = 32, 16
    a = random_spsd(n, 6, seed=P)
    p, q = variant_grids_1d(P, variant)
    lock = run_nystrom(a, seed, r, p, q, variant, Backend.LOCKSTEP)
    threaded = run_nystrom(a, seed, r, p, q, variant, Backend.THREADED)
    b, c = serial_nystrom(a, seed, r)
    assert _close(lock.b, b) and _close(lock.c, c)
    assert lock.b.tobytes() == threaded.b.tobytes()
    assert lock.c.tobytes() == threaded.c.tobytes()
    assert lock.report.rows() == threaded.report.rows()
    assert lock.report.max_model_bandwidth == predicted_cost_nystrom(n, r, p, q, variant).bandwidth


@pytest.mark.parametrize("n, r", [(64, 16), (128, 32)])
@pytest.mark.parametrize("P", [8, 16])
@pytest.mark.parametrize("variant", ["redist", "noredist"])
def test_nystrom_on_selected_grids_agrees_across_backends(seed, n, r, P, variant):
    p, q = select_grids_nystrom(n, r, P, variant)
    assert nystrom_runnable(n, r, p, q)
    a = random_spsd(n, 8, seed=P + r)
    lock = run_nystrom(a, seed, r, p, q, variant, Backend.LOCKSTEP)
    threaded = run_nystrom(a, seed, r, p, q, variant, Backend.THREADED)
    b, c = serial_nystrom(a, seed, r)
    assert _close(lock.b, b) and _close(lock.c, c)
    assert np.array_equal(lock.b, threaded.b)
    assert np.array_equal(lock.c, threaded.c)
    assert lock.report.max_model_bandwidth == predicted_cost_nystrom(n, r, p, q, variant).bandwidth


def test_nystrom_rejects_noredist_with_different_grids(seed):
    with pytest.raises(RankFailureError):
        run_nystrom(random_spsd(8, 2), seed, 4, (4, 1, 1), (1, 1, 4), "noredist")


def test_nystrom_reuse_omega(seed):
    a = random_spsd(8, 3)
    plain = run_nystrom(a, seed, 2, (1, 1, 1), (1, 1, 1))
    reused = run_nystrom(a, seed, 2, (1, 1, 1), (1, 1, 1), reuse_omega=True)
    assert reused.c.tobytes() == plain.c.tobytes()
    assert reused.phases[0].counters["omega_reused"] == 1
    assert reused.phases[0].counters["omega_words"] == plain.phases[0].counters["omega_words"] // 2


def test_nystrom_reuse_omega_needs_matching_extent(seed):
    run = run_nystrom(random_spsd(8, 3), seed, 2, (4, 1, 1), (4, 1, 1), reuse_omega=True)
    assert all("omega_reused" not in log.counters for log in run.phases)


@pytest.mark.parametrize("key", [1, 2, 3, 4, 5])
def test_nystrom_recovers_exact_low_rank(key):
    a = random_spsd(400, 20, seed=key)
    seed = SketchSeed(key, Distribution.GAUSSIAN)
    b, c = serial_nystrom(a, seed, 40)
    assert nystrom_error(a, b, c) <= 1e-8


def test_nystrom_rbf_error_shrinks_with_r(seed):
    points = np.random.default_rng(5).standard_normal((1000, 4))
    a = kernel_rbf(points, frobenius_sigma(points))
    errors = []
    for r in (50, 200, 400):
        b, c = serial_nystrom(a, seed, r)
        errors.append(nystrom_error(a, b, c))
    assert errors[0] > errors[1] > errors[2]


@pytest.mark.parametrize("P", [2, 4, 8])
def test_measured_words_track_model(seed, P):
    """Ring collectives move exactly the modelled words; the All-to-All never more than W."""
    n, r = 64, 8
    a = random_spsd(n, 4)
    for variant in ("redist", "noredist"):
        p, q = variant_grids_1d(P, variant)
        run = run_nystrom(a, seed, r, p, q, variant, gather=False)
        model = predicted_cost_nystrom(n, r, p, q, variant).bandwidth
        assert run.report.max_model_bandwidth == model
        for totals in run.report.rank_totals().values():
            assert totals.words_sent <= model
        if variant == "noredist":
            assert max(t.words_sent for t in run.report.rank_totals().values()) == model


@pytest.mark.parametrize("P", range(1, 21))
def test_zero_communication_when_P_divides_n1(seed, P):
    n1 = 2 * P
    run = run_rand_matmul(random_matrix(n1, 6, seed=P), seed, 2, (P, 1, 1), gather=False)
    assert run.report.critical_path_words == 0
    assert lb_randmatmul(n1, 6, 2, P).words == 0


def test_model_total_equals_prediction_on_case_grids(seed):
    """rand_matmul's metered model cost equals the bound on every runnable case grid."""
    checked = set()
    for n1, n2, r, P in itertools.product((2, 4, 8), (8, 16), (2, 4), (1, 2, 4, 8, 16, 32, 64)):
        if r >= n2:
            continue
        grid = randmatmul_case_grid(n1, n2, r, P)
        if grid is None or grid.size != P or not randmatmul_runnable(n1, n2, r, grid):
            continue
        run = run_rand_matmul(random_matrix(n1, n2), seed, r, grid, gather=False)
        assert run.report.max_model_bandwidth == lb_randmatmul(n1, n2, r, P).words
        checked.add(randmatmul_case(n1, n2, r, P))
    assert checked == {1, 2, 3}
