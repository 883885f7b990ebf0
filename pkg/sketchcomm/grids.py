"""
Processor Grids
GridSpec (p1, p2, p3) with a row-major rank mapping, fiber groups, predicted
costs of the two algorithms on given grids, and grid selection: the analytic
case grids where they are integral, factor-triple enumeration otherwise.
"""

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from config.settings import settings
from sketchcomm.bounds import Number, exact_sqrt, nystrom_case, randmatmul_case
from sketchcomm.cost_meter import log2_ceil
from sketchcomm.errors import ConfigError, DimensionError, DivisibilityError
from sketchcomm.fabric import Group

logger = logging.getLogger(__name__)

REDIST = "redist"
NOREDIST = "noredist"
VARIANTS = (REDIST, NOREDIST)

# Call-site labels shared by the algorithms and the predictions
GATHER_A = "gather_A"
REDUCE_SCATTER_B = "reduce_scatter_B"
REDISTRIBUTE_B = "redistribute_B"
GATHER_B = "gather_B"
REDUCE_SCATTER_C = "reduce_scatter_C"
GATHER_OMEGA = "gather_Omega"


@dataclass(frozen=True)
class GridSpec:
    """A p1 x p2 x p3 processor grid; rank = (i·p2 + j)·p3 + k."""
    dims: Tuple[int, int, int]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ConfigError(f"a grid needs three positive dimensions, got {self.dims}")
        object.__setattr__(self, "dims", dims)

    @classmethod
    def of(cls, p1: int, p2: int, p3: int) -> "GridSpec":
        return cls((p1, p2, p3))

    @classmethod
    def parse(cls, text: str) -> "GridSpec":
        """Accepts '4,2,1', '4x2x1' or '(4, 2, 1)'."""
        cleaned = text.strip().strip("()").replace("x", ",").replace("X", ",")
        try:
            parts = [int(p) for p in cleaned.split(",") if p.strip()]
        except ValueError:
            raise ConfigError(f"cannot parse grid '{text}' (expected p1,p2,p3)")
        if len(parts) != 3:
            raise ConfigError(f"grid '{text}' must have exactly three dimensions")
        return cls(tuple(parts))

    @property
    def p1(self) -> int:
        return self.dims[0]

    @property
    def p2(self) -> int:
        return self.dims[1]

    @property
    def p3(self) -> int:
        return self.dims[2]

    @property
    def size(self) -> int:
        return self.p1 * self.p2 * self.p3

    def coords(self, rank: int) -> Tuple[int, int, int]:
        if not 0 <= rank < self.size:
            raise ConfigError(f"rank {rank} outside grid {self} of {self.size} ranks")
        return rank // (self.p2 * self.p3), (rank // self.p3) % self.p2, rank % self.p3

    def rank_of(self, i: int, j: int, k: int) -> int:
        return (i * self.p2 + j) * self.p3 + k

    def fiber(self, rank: int, axis: int) -> Group:
        """Ranks sharing `rank`'s coordinates on the other two axes, ordered by coordinate on `axis`."""
        coords = list(self.coords(rank))
        members = []
        for value in range(self.dims[axis]):
            coords[axis] = value
            members.append(self.rank_of(*coords))
        return Group(tuple(members))

    def label(self) -> str:
        return "x".join(str(d) for d in self.dims)

    def __str__(self) -> str:
        return f"({self.p1},{self.p2},{self.p3})"


GridLike = Union[GridSpec, Sequence[int]]


def as_grid(grid: GridLike) -> GridSpec:
    return grid if isinstance(grid, GridSpec) else GridSpec(tuple(grid))


@dataclass(frozen=True)
class CostPrediction:
    """Model bandwidth and latency of one algorithm run, per collective call site."""
    bandwidth: Number
    latency: int
    breakdown: Dict[str, Number] = field(default_factory=dict)
    latency_breakdown: Dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "bandwidth": str(self.bandwidth),
            "latency": self.latency,
            "breakdown": {k: str(v) for k, v in self.breakdown.items()},
            "latency_breakdown": dict(self.latency_breakdown),
        }


def _prediction(terms: List[Tuple[str, Number, int]]) -> CostPrediction:
    breakdown = {label: words for label, words, _ in terms}
    latencies = {label: messages for label, _, messages in terms}
    return CostPrediction(sum(breakdown.values(), Fraction(0)), sum(latencies.values()), breakdown, latencies)


def nearest_multiples(value: int, divisor: int) -> List[int]:
    """Nearest positive multiples of `divisor` around `value` (one if value is below divisor)."""
    lower = (value // divisor) * divisor
    upper = lower + divisor
    return [m for m in (lower, upper) if m > 0]


def divisibility_message(name: str, value: int, divisor_name: str, divisor: int) -> Tuple[str, str]:
    options = " or ".join(str(m) for m in nearest_multiples(value, divisor))
    return (
        f"{name}={value} is not divisible by {divisor_name}={divisor}",
        f"nearest valid {name}: {options}",
    )


def require_divides(pairs: Iterable[Tuple[str, int, str, int]]):
    """Raise DivisibilityError for the first (name, value, divisor_name, divisor) that does not divide."""
    for name, value, divisor_name, divisor in pairs:
        if value % divisor:
            raise DivisibilityError(*divisibility_message(name, value, divisor_name, divisor))


def _randmatmul_divides(n1: int, n2: int, r: int, grid: GridSpec) -> List[Tuple[str, int, str, int]]:
    return [("n1", n1, "p1", grid.p1), ("n2", n2, "p2", grid.p2), ("r", r, "p3", grid.p3)]


def _nystrom_divides(n: int, r: int, p: GridSpec, q: GridSpec) -> List[Tuple[str, int, str, int]]:
    return [
        ("n", n, "p1", p.p1), ("n", n, "p2", p.p2), ("r", r, "p3", p.p3),
        ("n", n, "q1", q.p1), ("r", r, "q2", q.p2), ("r", r, "q3", q.p3),
    ]


def _divides(pairs) -> bool:
    return all(value % divisor == 0 for _, value, _, divisor in pairs)


def randmatmul_runnable(n1: int, n2: int, r: int, grid: GridSpec) -> bool:
    """Dims divide and both role blocks split evenly into segments."""
    if not _divides(_randmatmul_divides(n1, n2, r, grid)):
        return False
    a_block = (n1 // grid.p1) * (n2 // grid.p2)
    b_block = (n1 // grid.p1) * (r // grid.p3)
    return a_block % grid.p3 == 0 and b_block % grid.p2 == 0


def nystrom_runnable(n: int, r: int, p: GridSpec, q: GridSpec) -> bool:
    if not _divides(_nystrom_divides(n, r, p, q)):
        return False
    return (
        ((n // p.p1) * (n // p.p2)) % p.p3 == 0
        and ((n // p.p1) * (r // p.p3)) % p.p2 == 0
        and ((n // q.p1) * (r // q.p3)) % q.p2 == 0
        and ((r // q.p2) * (r // q.p3)) % q.p1 == 0
    )


# ---------------------------------------------------------------------------
# Predicted costs
# ---------------------------------------------------------------------------

def predicted_cost_randmatmul(n1: int, n2: int, r: int, grid: GridLike, strict: bool = True) -> CostPrediction:
    """
    (1 - 1/p3)·n1·n2/(p1·p2) for the A gather plus (1 - 1/p2)·n1·r/(p1·p3) for the
    B reduce-scatter; latency ⌈log₂p3⌉ + ⌈log₂p2⌉. With strict=False the
    rational formula is evaluated on non-dividing grids too.
    """
    grid = as_grid(grid)
    if strict:
        require_divides(_randmatmul_divides(n1, n2, r, grid))
    p1, p2, p3 = grid.dims
    return _prediction([
        (GATHER_A, (1 - Fraction(1, p3)) * Fraction(n1 * n2, p1 * p2), log2_ceil(p3)),
        (REDUCE_SCATTER_B, (1 - Fraction(1, p2)) * Fraction(n1 * r, p1 * p3), log2_ceil(p2)),
    ])


def predicted_cost_nystrom(
    n: int, r: int, p: GridLike, q: GridLike, variant: Optional[str] = None, strict: bool = True
) -> CostPrediction:
    """
    Four collective terms plus n·r/P for the redistribution of B when the
    grids differ (latency P - 1 for the pairwise all-to-all).
    """
    p, q = as_grid(p), as_grid(q)
    if p.size != q.size:
        raise ConfigError(f"grids {p} and {q} have different sizes")
    if variant == NOREDIST and p != q:
        raise ConfigError(f"the noredist variant needs identical grids, got {p} and {q}")
    if strict:
        require_divides(_nystrom_divides(n, r, p, q))

    P = p.size
    p1, p2, p3 = p.dims
    q1, q2, q3 = q.dims
    redistributed = p != q
    return _prediction([
        (GATHER_A, (1 - Fraction(1, p3)) * Fraction(n * n, p1 * p2), log2_ceil(p3)),
        (REDUCE_SCATTER_B, (1 - Fraction(1, p2)) * Fraction(n * r, p1 * p3), log2_ceil(p2)),
        (REDISTRIBUTE_B, Fraction(n * r, P) if redistributed else Fraction(0), P - 1 if redistributed else 0),
        (GATHER_B, (1 - Fraction(1, q2)) * Fraction(n * r, q1 * q3), log2_ceil(q2)),
        (REDUCE_SCATTER_C, (1 - Fraction(1, q1)) * Fraction(r * r, q2 * q3), log2_ceil(q1)),
    ])


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------

@lru_cache(maxsize=256)
def factor_triples(P: int) -> Tuple[Tuple[int, int, int], ...]:
    """All ordered (p1, p2, p3) with p1·p2·p3 = P."""
    if P < 1:
        raise DimensionError(f"P must be positive, got {P}")
    if P > settings.MAX_ENUMERATION_P:
        raise ConfigError(f"P={P} exceeds the enumeration limit {settings.MAX_ENUMERATION_P}")
    triples = []
    for p1 in range(1, P + 1):
        if P % p1:
            continue
        rest = P // p1
        for p2 in range(1, rest + 1):
            if rest % p2 == 0:
                triples.append((p1, p2, rest // p2))
    return tuple(triples)


def _integral(value: Number) -> Optional[int]:
    if isinstance(value, int):
        value = Fraction(value)
    if isinstance(value, Fraction) and value.denominator == 1 and value > 0:
        return int(value)
    return None


def _integral_grid(values: Sequence[Number]) -> Optional[GridSpec]:
    dims = [_integral(v) for v in values]
    if any(d is None for d in dims):
        return None
    return GridSpec(tuple(dims))


def _check_P(P: int):
    if not isinstance(P, int) or P < 1:
        raise DimensionError(f"P must be a positive integer, got {P!r}")


def randmatmul_case_grid(n1: int, n2: int, r: int, P: int) -> Optional[GridSpec]:
    """The analytic grid of the active case, or None if it is not integral."""
    case = randmatmul_case(n1, n2, r, P)
    if case == 1:
        return GridSpec.of(P, 1, 1)
    if case == 2:
        return _integral_grid([n1, Fraction(P, n1), 1])
    return _integral_grid([
        n1,
        exact_sqrt(Fraction(P * n2, r * n1)),
        exact_sqrt(Fraction(P * r, n1 * n2)),
    ])


def _best_randmatmul(n1: int, n2: int, r: int, P: int, pool: Iterable[Tuple[int, int, int]]) -> GridSpec:
    triples = list(pool)
    runnable = [t for t in triples if randmatmul_runnable(n1, n2, r, GridSpec(t))]
    dividing = [t for t in triples if _divides(_randmatmul_divides(n1, n2, r, GridSpec(t)))]
    candidates = runnable or dividing or triples

    def key(t):
        cost = predicted_cost_randmatmul(n1, n2, r, t, strict=False)
        return cost.bandwidth, cost.latency, t

    return GridSpec(min(candidates, key=key))


def select_grid_randmatmul(n1: int, n2: int, r: int, P: int) -> GridSpec:
    """
    Case 1 (P <= n1): (P, 1, 1); case 2: (n1, P/n1, 1); case 3:
    (n1, (P·n2/(r·n1))^½, (P·r/(n1·n2))^½). Falls back to the factor triple of P
    with the lowest predicted bandwidth (then latency) when the case grid is
    non-integral or does not divide (n1, n2, r).
    """
    _check_P(P)
    try:
        case = randmatmul_case(n1, n2, r, P)
        grid = randmatmul_case_grid(n1, n2, r, P)
    except DimensionError:
        case, grid = None, None

    if grid is not None and grid.size == P and _divides(_randmatmul_divides(n1, n2, r, grid)):
        return grid

    logger.info(
        "[GRIDS] randmatmul case %s grid %s unusable for n1=%d n2=%d r=%d P=%d; enumerating factor triples",
        case, grid, n1, n2, r, P,
    )
    return _best_randmatmul(n1, n2, r, P, factor_triples(P))


def nystrom_case_grids(n: int, r: int, P: int) -> Tuple[Optional[GridSpec], Optional[GridSpec]]:
    """Analytic (Π, Ψ) of the active redist case; None for a grid that is not integral."""
    case = nystrom_case(n, r, P)
    if case == 1:
        return GridSpec.of(P, 1, 1), GridSpec.of(1, 1, P)
    if case == 2:
        return GridSpec.of(P, 1, 1), _integral_grid([Fraction(P, r), 1, r])
    if case == 3:
        return (
            _integral_grid([n, Fraction(P, n), 1]),
            _integral_grid([Fraction(n, r), Fraction(P, n), r]),
        )

    p_dims, q_dims = case4_dims(n, r, P)
    return _integral_grid(p_dims), _integral_grid(q_dims)


def case4_dims(n: int, r: int, P: int) -> Tuple[Tuple[Number, ...], Tuple[Number, ...]]:
    """Raw Case 4 grid formulas (possibly irrational, and q's product is n·P/r rather than P)."""
    p2 = exact_sqrt(Fraction((n + r) * P, n * r))
    p3 = exact_sqrt(Fraction(r * P, n * (n + r)))
    q1 = exact_sqrt(Fraction(n * P, r * (n + r)))
    q1 = q1 * Fraction(n, r) if isinstance(q1, Fraction) else q1 * n / r
    return (n, p2, p3), (q1, p2, r)


def _best_pair(n: int, r: int, pairs: List[Tuple[Tuple[int, int, int], Tuple[int, int, int]]]) -> Tuple[GridSpec, GridSpec]:
    runnable = [(p, q) for p, q in pairs if nystrom_runnable(n, r, GridSpec(p), GridSpec(q))]
    dividing = [(p, q) for p, q in pairs if _divides(_nystrom_divides(n, r, GridSpec(p), GridSpec(q)))]
    candidates = runnable or dividing or pairs

    def key(pair):
        cost = predicted_cost_nystrom(n, r, pair[0], pair[1], strict=False)
        return cost.bandwidth, cost.latency, pair

    p, q = min(candidates, key=key)
    return GridSpec(p), GridSpec(q)


def select_grids_nystrom(n: int, r: int, P: int, variant: str = REDIST) -> Tuple[GridSpec, GridSpec]:
    """
    (Π, Ψ) for the Nyström pipeline.

    redist: the case grids (Case 1: (P,1,1)/(1,1,P); Case 2: (P,1,1)/(P/r,1,r);
    Case 3: (n,P/n,1)/(n/r,P/n,r); Case 4: analytic), else the best pair of
    factor triples. noredist: Π = Ψ = the randmatmul grid for (n, n, r) when it
    also divides the second multiply, else the best triple used for both.
    """
    _check_P(P)
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant '{variant}' (use redist or noredist)")
    case = nystrom_case(n, r, P)
    triples = factor_triples(P)

    if variant == NOREDIST:
        grid = randmatmul_case_grid(n, n, r, P)
        if grid is not None and _divides(_nystrom_divides(n, r, grid, grid)):
            return grid, grid
        logger.info("[GRIDS] noredist grid %s does not divide n=%d r=%d P=%d; enumerating", grid, n, r, P)
        p, q = _best_pair(n, r, [(t, t) for t in triples])
        return p, q

    p, q = nystrom_case_grids(n, r, P)
    if case == 4:
        for name, dims in zip(("p", "q"), case4_dims(n, r, P)):
            product = float(dims[0]) * float(dims[1]) * float(dims[2])
            if abs(product - P) > 1e-9 * P:
                logger.warning(
                    "[GRIDS] nystrom case 4 %s-grid (%s) has product %.6g != P=%d (n=%d r=%d)",
                    name, ", ".join(f"{float(d):.6g}" for d in dims), product, P, n, r,
                )
    if (
        p is not None and q is not None
        and p.size == P and q.size == P
        and _divides(_nystrom_divides(n, r, p, q))
    ):
        return p, q

    logger.info("[GRIDS] nystrom case %d grids %s/%s unusable; enumerating grid pairs", case, p, q)
    return _best_pair(n, r, [(a, b) for a in triples for b in triples])


def variant_grids_1d(P: int, variant: str) -> Tuple[GridSpec, GridSpec]:
    """1-D layouts: redist (P,1,1)/(1,1,P), noredist (P,1,1) for both multiplies."""
    _check_P(P)
    if variant == REDIST:
        return GridSpec.of(P, 1, 1), GridSpec.of(1, 1, P)
    if variant == NOREDIST:
        return GridSpec.of(P, 1, 1), GridSpec.of(P, 1, 1)
    raise ConfigError(f"unknown variant '{variant}' (use redist or noredist)")
