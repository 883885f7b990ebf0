"""
Communication Lower Bounds
Per-processor access minimisation for B = A·Ω (two variables) and for the
Nyström pair B = A·Ω, C = Ωᵀ·B (three variables):

    randmatmul: min x1 + x2        s.t. x1·x2 >= n1·n2·r/P, x1 >= n1·n2/P, x2 >= n1·r/P
    nystrom:    min x1 + x2 + x3   s.t. x1·x2 >= n²r/P, x2·x3 >= nr²/P,
                                        x1 >= n²/P, x2 >= nr/P, x3 >= r²/P

The analytic case solutions, the lower bounds derived from them, dual
certificates for checking optimality, and an independent search oracle.
Values are exact Fractions whenever they are rational.
"""

import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from itertools import product
from typing import Callable, Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from config.settings import settings
from sketchcomm.errors import DimensionError

Number = Union[Fraction, float]

RANDMATMUL = "randmatmul"
NYSTROM = "nystrom"


def exact_sqrt(value) -> Number:
    """√value as a Fraction when value is a ratio of perfect squares, else a float."""
    value = Fraction(value)
    if value < 0:
        raise ValueError(f"square root of negative value {value}")
    num, den = value.numerator, value.denominator
    root_num, root_den = math.isqrt(num), math.isqrt(den)
    if root_num * root_num == num and root_den * root_den == den:
        return Fraction(root_num, root_den)
    return math.sqrt(num) / math.sqrt(den)


def as_float(value: Number) -> float:
    return float(value)


@dataclass(frozen=True)
class BoundResult:
    """Lower bound on the words some processor must communicate."""
    problem: str
    case_id: int
    words: Number
    access: Number
    owned: Fraction
    x_star: Tuple[Number, ...]

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["words"] = str(self.words)
        data["access"] = str(self.access)
        data["owned"] = str(self.owned)
        data["x_star"] = [str(x) for x in self.x_star]
        return data


def _positive_ints(**dims: int):
    for name, value in dims.items():
        if not isinstance(value, (int, np.integer)) or value < 1:
            raise DimensionError(f"{name} must be a positive integer, got {value!r}")


def _validate_randmatmul(n1: int, n2: int, r: int, P: int):
    _positive_ints(n1=n1, n2=n2, r=r, P=P)
    if r >= n2:
        raise DimensionError(f"the randmatmul bound needs n2 > r, got n2={n2}, r={r}")


def _validate_nystrom(n: int, r: int, P: int):
    _positive_ints(n=n, r=r, P=P)
    if r >= n:
        raise DimensionError(f"the Nyström bound needs n > r, got n={n}, r={r}")


def _nonnegative(value: Number) -> Number:
    if isinstance(value, Fraction):
        return value
    # float case only; rounding can dip a hair below zero at the case boundary
    return max(value, 0.0)


# ---------------------------------------------------------------------------
# B = A·Ω
# ---------------------------------------------------------------------------

def randmatmul_case(n1: int, n2: int, r: int, P: int) -> int:
    _validate_randmatmul(n1, n2, r, P)
    if P <= n1:
        return 1
    if P * r <= n1 * n2:
        return 2
    return 3


def solve_opt_randmatmul(n1: int, n2: int, r: int, P: int) -> Tuple[Number, Number]:
    """Analytic optimiser (x1*, x2*) of the two-variable access problem."""
    case = randmatmul_case(n1, n2, r, P)
    if case == 1:
        return Fraction(n1 * n2, P), Fraction(n1 * r, P)
    if case == 2:
        return Fraction(n1 * n2, P), Fraction(r)
    side = exact_sqrt(Fraction(n1 * n2 * r, P))
    return side, side


def lb_randmatmul(n1: int, n2: int, r: int, P: int) -> BoundResult:
    """
    Words some processor must communicate for B = A·Ω with one copy of A in
    and one copy of B out:

        0                                      if P <= n1
        r - n1·r/P                             if n1 < P <= n1·n2/r
        2·(n1·n2·r/P)^½ - (n1·n2 + n1·r)/P     otherwise
    """
    case = randmatmul_case(n1, n2, r, P)
    x_star = solve_opt_randmatmul(n1, n2, r, P)
    access = x_star[0] + x_star[1]
    owned = Fraction(n1 * n2 + n1 * r, P)
    return BoundResult(RANDMATMUL, case, _nonnegative(access - owned), access, owned, x_star)


def randmatmul_constraints(n1: int, n2: int, r: int, P: int, x: Sequence[Number]) -> List[Number]:
    """g(x) <= 0 form of the constraints."""
    x1, x2 = x
    return [
        Fraction(n1 * n2 * r, P) - x1 * x2,
        Fraction(n1 * n2, P) - x1,
        Fraction(n1 * r, P) - x2,
    ]


def kkt_certificate_randmatmul(n1: int, n2: int, r: int, P: int) -> Tuple[Number, ...]:
    """Dual multipliers μ* proving optimality of solve_opt_randmatmul."""
    case = randmatmul_case(n1, n2, r, P)
    if case == 1:
        return Fraction(0), Fraction(1), Fraction(1)
    if case == 2:
        return Fraction(P, n1 * n2), 1 - Fraction(r * P, n1 * n2), Fraction(0)
    return exact_sqrt(Fraction(P, n1 * n2 * r)), Fraction(0), Fraction(0)


def _randmatmul_jacobian(x: Sequence[float]) -> np.ndarray:
    x1, x2 = x
    return np.array([[-x2, -x1], [-1.0, 0.0], [0.0, -1.0]])


# ---------------------------------------------------------------------------
# B = A·Ω, C = Ωᵀ·B
# ---------------------------------------------------------------------------

def nystrom_case(n: int, r: int, P: int) -> int:
    _validate_nystrom(n, r, P)
    if P <= r:
        return 1
    if P <= n:
        return 2
    if P * r <= n * (n + r):
        return 3
    return 4


def solve_opt_nystrom(n: int, r: int, P: int) -> Tuple[Number, Number, Number]:
    """Analytic optimiser (x1*, x2*, x3*) of the three-variable access problem."""
    case = nystrom_case(n, r, P)
    if case == 1:
        return Fraction(n * n, P), Fraction(n * r, P), Fraction(r * r, P)
    if case == 2:
        return Fraction(n * n, P), Fraction(n * r, P), Fraction(r)
    if case == 3:
        return Fraction(n * n, P), Fraction(r), Fraction(n * r, P)
    t = exact_sqrt(Fraction(n * r, (n + r) * P))
    return n * t, (n + r) * t, r * t


def lb_nystrom(n: int, r: int, P: int) -> BoundResult:
    """
    Words some processor must communicate for the Nyström pair, i.e. the
    access bound W minus the owned term (n² + nr + r²)/P, where

        W = (n² + nr + r²)/P        if P <= r
            (n² + nr)/P + r         if r < P <= n
            n²/P + r + nr/P         if n < P <= n(n+r)/r
            2·(nr(n+r)/P)^½         otherwise
    """
    case = nystrom_case(n, r, P)
    x_star = solve_opt_nystrom(n, r, P)
    access = x_star[0] + x_star[1] + x_star[2]
    owned = Fraction(n * n + n * r + r * r, P)
    return BoundResult(NYSTROM, case, _nonnegative(access - owned), access, owned, x_star)


def nystrom_constraints(n: int, r: int, P: int, x: Sequence[Number]) -> List[Number]:
    x1, x2, x3 = x
    return [
        Fraction(n * n * r, P) - x1 * x2,
        Fraction(n * r * r, P) - x2 * x3,
        Fraction(n * n, P) - x1,
        Fraction(n * r, P) - x2,
        Fraction(r * r, P) - x3,
    ]


def kkt_certificate_nystrom(n: int, r: int, P: int) -> Tuple[Number, ...]:
    case = nystrom_case(n, r, P)
    zero = Fraction(0)
    if case == 1:
        return zero, zero, Fraction(1), Fraction(1), Fraction(1)
    if case == 2:
        return zero, Fraction(P, n * r), Fraction(1), 1 - Fraction(P, n), zero
    if case == 3:
        return (
            Fraction(P - n, n * n),
            Fraction(1, r),
            (Fraction(n * (n + r), r) - P) * Fraction(r, n * n),
            zero,
            zero,
        )
    t = exact_sqrt(Fraction(n * r, (n + r) * P))
    mu = 1 / ((n + r) * t)
    return mu, mu, zero, zero, zero


def _nystrom_jacobian(x: Sequence[float]) -> np.ndarray:
    x1, x2, x3 = x
    return np.array([
        [-x2, -x1, 0.0],
        [0.0, -x3, -x2],
        [-1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, -1.0],
    ])


# ---------------------------------------------------------------------------
# Certificates and feasibility
# ---------------------------------------------------------------------------

@dataclass
class KKTReport:
    """Residuals of the four KKT conditions at (x*, μ*)."""
    primal_violation: float
    dual_violation: float
    stationarity: float
    slackness: float

    def ok(self, tol: float = 1e-9) -> bool:
        return max(self.primal_violation, self.dual_violation, self.stationarity, self.slackness) <= tol


def _scales(constraint_constants: Iterable[Number]) -> np.ndarray:
    return np.array([max(1.0, abs(float(c))) for c in constraint_constants])


def check_kkt(problem: str, dims: Sequence[int]) -> KKTReport:
    """Evaluate the KKT conditions for the analytic solution of `problem` at `dims`."""
    if problem == RANDMATMUL:
        x = solve_opt_randmatmul(*dims)
        mu = kkt_certificate_randmatmul(*dims)
        g = randmatmul_constraints(*dims, x)
        jac = _randmatmul_jacobian([float(v) for v in x])
        constants = randmatmul_constraints(*dims, [0, 0])
    elif problem == NYSTROM:
        x = solve_opt_nystrom(*dims)
        mu = kkt_certificate_nystrom(*dims)
        g = nystrom_constraints(*dims, x)
        jac = _nystrom_jacobian([float(v) for v in x])
        constants = nystrom_constraints(*dims, [0, 0, 0])
    else:
        raise ValueError(f"unknown problem '{problem}'")

    scales = _scales(constants)
    g_rel = np.array([float(v) for v in g]) / scales
    mu_arr = np.array([float(v) for v in mu])

    grad_f = np.ones(len(x))
    residual = grad_f + mu_arr @ jac
    return KKTReport(
        primal_violation=float(max(0.0, g_rel.max())),
        dual_violation=float(max(0.0, -mu_arr.min())),
        stationarity=float(np.abs(residual).max()),
        slackness=float(np.abs(mu_arr * g_rel).max()),
    )


def is_feasible(problem: str, dims: Sequence[int], x: Sequence[Number], rel: float = 1e-9) -> bool:
    """Every constraint holds to `rel` relative to its constant term."""
    if problem == RANDMATMUL:
        g, constants = randmatmul_constraints(*dims, x), randmatmul_constraints(*dims, [0] * 2)
    else:
        g, constants = nystrom_constraints(*dims, x), nystrom_constraints(*dims, [0] * 3)
    return all(float(gi) <= rel * scale for gi, scale in zip(g, _scales(constants)))


# ---------------------------------------------------------------------------
# Search oracle (independent of the case analysis)
# ---------------------------------------------------------------------------

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _minimise_1d(objective: Callable[[float], float], lo: float, hi: float, points: int) -> Tuple[float, float]:
    """Log-spaced scan of [lo, hi] followed by golden-section refinement around the best point."""
    grid = np.geomspace(lo, hi, points)
    values = [objective(float(x)) for x in grid]
    best = int(np.argmin(values))
    a = float(grid[max(best - 1, 0)])
    b = float(grid[min(best + 1, points - 1)])

    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = objective(c), objective(d)
    for _ in range(200):
        if b - a <= 1e-15 * max(abs(a), abs(b)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = objective(d)

    candidates = [(values[best], float(grid[best])), (fc, c), (fd, d)]
    value, x = min(candidates)
    return value, x


def oracle_randmatmul(n1: int, n2: int, r: int, P: int, points: int = None) -> Tuple[float, Tuple[float, float]]:
    """
    Numerical minimum of the two-variable problem: scan x1, take the smallest
    feasible x2 = max(n1·r/P, n1·n2·r/(P·x1)).
    """
    _validate_randmatmul(n1, n2, r, P)
    points = points or settings.ORACLE_GRID_POINTS
    low1, low2, prod = n1 * n2 / P, n1 * r / P, n1 * n2 * r / P

    def x2_of(x1: float) -> float:
        return max(low2, prod / x1)

    hi = 4.0 * max(low1, prod / low2, math.sqrt(prod))
    value, x1 = _minimise_1d(lambda x1: x1 + x2_of(x1), low1, hi, points)
    return value, (x1, x2_of(x1))


def oracle_nystrom(n: int, r: int, P: int, points: int = None) -> Tuple[float, Tuple[float, float, float]]:
    """
    Numerical minimum of the three-variable problem: scan x2, take the
    smallest feasible x1 and x3 for it.
    """
    _validate_nystrom(n, r, P)
    points = points or settings.ORACLE_GRID_POINTS
    low1, low2, low3 = n * n / P, n * r / P, r * r / P
    prod12, prod23 = n * n * r / P, n * r * r / P

    def rest(x2: float) -> Tuple[float, float]:
        return max(low1, prod12 / x2), max(low3, prod23 / x2)

    def objective(x2: float) -> float:
        x1, x3 = rest(x2)
        return x1 + x2 + x3

    hi = 4.0 * max(float(n), low2, math.sqrt(prod12))
    value, x2 = _minimise_1d(objective, low2, hi, points)
    x1, x3 = rest(x2)
    return value, (x1, x2, x3)


# ---------------------------------------------------------------------------
# Projection inequality
# ---------------------------------------------------------------------------

@dataclass
class ProjectionVerdict:
    size: int
    ij: int
    jk: int
    ki: int
    i: int
    j: int
    k: int

    @property
    def products(self) -> Tuple[int, int, int]:
        return self.ij * self.jk, self.jk * self.ki, self.ki * self.ij

    @property
    def holds(self) -> bool:
        axis_plane = (self.i * self.jk, self.j * self.ki, self.k * self.ij)
        return all(self.size <= p for p in self.products + axis_plane)


def projection_inequality_oracle(points: Iterable[Tuple[int, int, int]]) -> ProjectionVerdict:
    """
    Sizes of a finite V ⊂ ℤ³ and of its projections; `holds` checks
    |V| <= |φ_ij|·|φ_jk|, |φ_jk|·|φ_ki|, |φ_ki|·|φ_ij| and the axis-times-plane
    forms |φ_i|·|φ_jk|, |φ_j|·|φ_ki|, |φ_k|·|φ_ij|.
    """
    V = {tuple(int(c) for c in p) for p in points}
    if any(len(p) != 3 for p in V):
        raise DimensionError("projection_inequality_oracle needs 3-tuples")
    return ProjectionVerdict(
        size=len(V),
        ij=len({(i, j) for i, j, _ in V}),
        jk=len({(j, k) for _, j, k in V}),
        ki=len({(k, i) for i, _, k in V}),
        i=len({i for i, _, _ in V}),
        j=len({j for _, j, _ in V}),
        k=len({k for _, _, k in V}),
    )


def box(a: int, b: int, c: int) -> List[Tuple[int, int, int]]:
    """All points of the a×b×c box."""
    return list(product(range(a), range(b), range(c)))
