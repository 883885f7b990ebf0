"""
Tests for communication lower bounds, analytic optimisers and their oracles
"""

import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings as hyp_settings, strategies as st

from sketchcomm.bounds import (
    NYSTROM, RANDMATMUL, box, check_kkt, exact_sqrt, is_feasible, lb_nystrom, lb_randmatmul,
    nystrom_case, oracle_nystrom, oracle_randmatmul, projection_inequality_oracle,
    solve_opt_nystrom, solve_opt_randmatmul,
)
from sketchcomm.errors import DimensionError
from sketchcomm.grids import (
    GridSpec, nystrom_runnable, predicted_cost_nystrom, select_grids_nystrom,
)


def test_exact_sqrt():
    assert exact_sqrt(Fraction(9, 4)) == Fraction(3, 2)
    assert isinstance(exact_sqrt(16), Fraction)
    assert exact_sqrt(2) == pytest.approx(math.sqrt(2))
    assert isinstance(exact_sqrt(2), float)
    with pytest.raises(ValueError):
        exact_sqrt(-1)


# ---------------------------------------------------------------------------
# B = A·Ω
# ---------------------------------------------------------------------------

def test_randmatmul_case_one_is_free():
    bound = lb_randmatmul(16, 8, 2, 8)
    assert bound.case_id == 1
    assert bound.words == 0


def test_randmatmul_case_two_value():
    bound = lb_randmatmul(4, 8, 2, 8)
    assert bound.case_id == 2
    assert bound.words == Fraction(1)


def test_randmatmul_case_three_value_is_exact():
    bound = lb_randmatmul(2, 4, 2, 16)
    assert bound.case_id == 3
    assert bound.words == Fraction(5, 4)


def test_randmatmul_requires_r_below_n2():
    with pytest.raises(DimensionError):
        lb_randmatmul(8, 4, 4, 2)
    with pytest.raises(DimensionError):
        lb_randmatmul(8, 4, 2, 0)


def test_randmatmul_optimisers_by_case():
    assert solve_opt_randmatmul(16, 8, 2, 8) == (Fraction(16), Fraction(4))
    assert solve_opt_randmatmul(4, 8, 2, 8) == (Fraction(4), Fraction(2))


@pytest.mark.parametrize("P", range(1, 17))
def test_zero_communication_up_to_n1(P):
    """No processor needs to communicate while P <= n1."""
    assert lb_randmatmul(16, 12, 3, P).words == 0


def test_randmatmul_bound_nonincreasing_access_in_P():
    accesses = [lb_randmatmul(8, 32, 4, P).access for P in (1, 2, 4, 8, 16, 32, 64, 128)]
    assert all(a >= b for a, b in zip(accesses, accesses[1:]))


# ---------------------------------------------------------------------------
# Nyström
# ---------------------------------------------------------------------------

def test_nystrom_case_one_is_free():
    bound = lb_nystrom(16, 8, 4)
    assert bound.case_id == 1
    assert bound.words == 0
    assert bound.access == bound.owned


def test_nystrom_case_two_value():
    bound = lb_nystrom(8, 2, 4)
    assert bound.case_id == 2
    assert bound.access == Fraction(22)
    assert bound.words == Fraction(1)


def test_nystrom_case_four_value():
    bound = lb_nystrom(4, 2, 16)
    assert bound.case_id == 4
    assert bound.words == pytest.approx(2 * math.sqrt(3) - Fraction(28, 16), rel=1e-12)


def test_nystrom_optimisers_by_case():
    assert solve_opt_nystrom(16, 8, 4) == (Fraction(64), Fraction(32), Fraction(16))
    t = math.sqrt(4 * 2 / (6 * 16))
    x = solve_opt_nystrom(4, 2, 16)
    assert [float(v) for v in x] == pytest.approx([4 * t, 6 * t, 2 * t], rel=1e-12)


def test_nystrom_requires_r_below_n():
    with pytest.raises(DimensionError):
        lb_nystrom(4, 4, 2)


@pytest.mark.parametrize("n, r, P, case", [(16, 8, 4, 1), (16, 4, 8, 2), (8, 4, 16, 3), (4, 2, 16, 4)])
def test_nystrom_case_boundaries(n, r, P, case):
    assert nystrom_case(n, r, P) == case


# ---------------------------------------------------------------------------
# Optimality: dual certificates and search oracle
# ---------------------------------------------------------------------------

randmatmul_dims = st.tuples(
    st.integers(min_value=1, max_value=64),
    st.integers(min_value=2, max_value=64),
    st.integers(min_value=1, max_value=63),
    st.integers(min_value=1, max_value=4096),
).filter(lambda d: d[2] < d[1])

nystrom_dims = st.tuples(
    st.integers(min_value=2, max_value=128),
    st.integers(min_value=1, max_value=127),
    st.integers(min_value=1, max_value=1 << 16),
).filter(lambda d: d[1] < d[0])


@hyp_settings(max_examples=50, deadline=None)
@given(randmatmul_dims)
def test_randmatmul_optimiser_matches_search_oracle(dims):
    x = solve_opt_randmatmul(*dims)
    analytic = float(x[0] + x[1])
    oracle, _ = oracle_randmatmul(*dims)
    assert abs(oracle - analytic) <= 1e-9 * analytic
    assert is_feasible(RANDMATMUL, dims, x)


@hyp_settings(max_examples=50, deadline=None)
@given(nystrom_dims)
def test_nystrom_optimiser_matches_search_oracle(dims):
    x = solve_opt_nystrom(*dims)
    analytic = float(x[0] + x[1] + x[2])
    oracle, _ = oracle_nystrom(*dims)
    assert abs(oracle - analytic) <= 1e-9 * analytic
    assert is_feasible(NYSTROM, dims, x)


@hyp_settings(max_examples=100, deadline=None)
@given(randmatmul_dims)
def test_randmatmul_kkt_certificate(dims):
    assert check_kkt(RANDMATMUL, dims).ok(1e-9)


@hyp_settings(max_examples=100, deadline=None)
@given(nystrom_dims)
def test_nystrom_kkt_certificate(dims):
    assert check_kkt(NYSTROM, dims).ok(1e-9)


def test_oracle_points_are_feasible():
    _, x = oracle_randmatmul(4, 8, 2, 32)
    assert is_feasible(RANDMATMUL, (4, 8, 2, 32), x, rel=1e-9)
    _, y = oracle_nystrom(8, 4, 64)
    assert is_feasible(NYSTROM, (8, 4, 64), y, rel=1e-9)


def test_infeasible_point_is_detected():
    assert not is_feasible(RANDMATMUL, (4, 8, 2, 8), (Fraction(1), Fraction(1)))


# ---------------------------------------------------------------------------
# Gap between the case grids and the bound
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("n, r, P, case", [(16, 8, 4, 1), (16, 4, 8, 2), (8, 4, 16, 3)])
def test_redist_case_grids_gap(n, r, P, case):
    """Cases 1-3: the selected grids exceed the bound by at most nr/P, nr/P and r."""
    p, q = select_grids_nystrom(n, r, P, "redist")
    gap = predicted_cost_nystrom(n, r, p, q, "redist").bandwidth - lb_nystrom(n, r, P).words
    limit = {1: Fraction(n * r, P), 2: Fraction(n * r, P), 3: Fraction(r)}[case]
    assert 0 <= gap <= limit


def test_redist_case_grid_choices():
    assert select_grids_nystrom(16, 8, 4, "redist") == (GridSpec.of(4, 1, 1), GridSpec.of(1, 1, 4))
    assert select_grids_nystrom(16, 4, 8, "redist") == (GridSpec.of(8, 1, 1), GridSpec.of(2, 1, 4))
    assert select_grids_nystrom(8, 4, 16, "redist") == (GridSpec.of(8, 2, 1), GridSpec.of(2, 2, 4))


@pytest.mark.parametrize("n, r, P", [(4, 2, 16), (8, 4, 64)])
def test_case_four_selected_grids_gap(n, r, P):
    """Case 4: the selected grid pair is runnable and within (nr(n+r)/P)^½ of the bound."""
    assert nystrom_case(n, r, P) == 4
    p, q = select_grids_nystrom(n, r, P, "redist")
    assert p.size == q.size == P
    assert nystrom_runnable(n, r, p, q)
    gap = float(predicted_cost_nystrom(n, r, p, q).bandwidth) - float(lb_nystrom(n, r, P).words)
    assert 0 <= gap <= math.sqrt(n * r * (n + r) / P)


# ---------------------------------------------------------------------------
# Projection inequality
# ---------------------------------------------------------------------------

def test_projection_single_point():
    verdict = projection_inequality_oracle([(1, 2, 3)])
    assert verdict.size == 1
    assert verdict.products == (1, 1, 1)
    assert verdict.holds


@pytest.mark.parametrize("a, b, c", [(1, 1, 1), (2, 3, 4), (6, 1, 6), (5, 5, 5), (1, 6, 2)])
def test_projection_box_cases(a, b, c):
    verdict = projection_inequality_oracle(box(a, b, c))
    assert verdict.size == a * b * c
    assert (verdict.ij, verdict.jk, verdict.ki) == (a * b, b * c, c * a)
    assert verdict.holds


def test_projection_random_subsets():
    rng = random.Random(20240601)
    cube = box(6, 6, 6)
    for _ in range(200):
        subset = rng.sample(cube, rng.randint(1, len(cube)))
        assert projection_inequality_oracle(subset).holds


def test_projection_rejects_non_triples():
    with pytest.raises(DimensionError):
        projection_inequality_oracle([(1, 2)])
