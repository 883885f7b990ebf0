"""
Pydantic Schemas for the sketchbench CLI
RunConfig validates one invocation; the row models fix the CSV schemas.
"""

from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, Field, field_validator, model_validator

from config.settings import settings
from sketchcomm.errors import ConfigError
from sketchcomm.fabric import Backend
from sketchcomm.grids import NOREDIST, REDIST
from sketchcomm.rng import Distribution, SketchSeed, parse_seed


class Subcommand(str, Enum):
    SKETCH = "sketch"
    NYSTROM = "nystrom"
    BOUNDS = "bounds"
    KERNEL = "kernel"


class KernelKind(str, Enum):
    LINEAR = "linear"
    RBF = "rbf"


class KernelSpec(BaseModel):
    """'linear', 'rbf:<sigma>' or 'rbf:frob' (σ = ||X||_F / √m)."""
    kind: KernelKind
    sigma: Optional[Union[float, Literal["frob"]]] = Field(None, description="RBF bandwidth or 'frob'")

    @model_validator(mode="after")
    def check_sigma(self):
        if self.kind is KernelKind.RBF:
            if self.sigma is None:
                self.sigma = "frob"
            elif self.sigma != "frob" and not self.sigma > 0:
                raise ValueError(f"RBF sigma must be positive, got {self.sigma}")
        return self

    @classmethod
    def parse(cls, text: str, sigma: Optional[str] = None) -> "KernelSpec":
        kind, _, value = text.strip().lower().partition(":")
        value = value or sigma
        try:
            kind = KernelKind(kind)
        except ValueError:
            raise ConfigError(f"unknown kernel '{text}' (use linear, rbf:<sigma> or rbf:frob)")
        if kind is KernelKind.LINEAR:
            return cls(kind=kind)
        if value in (None, "", "frob"):
            return cls(kind=kind, sigma="frob")
        try:
            return cls(kind=kind, sigma=float(value))
        except ValueError as e:
            raise ConfigError(f"bad RBF sigma '{value}': {e}")

    def label(self) -> str:
        return self.kind.value if self.kind is KernelKind.LINEAR else f"rbf:{self.sigma}"


def parse_int_list(text: str) -> List[int]:
    """
    '1,2,4' -> [1, 2, 4]; '1:4' -> [1, 2, 3, 4]; '1:64:x2' -> [1, 2, 4, ..., 64].
    Pieces may be mixed: '1:3,8'.
    """
    values: List[int] = []
    for piece in (p.strip() for p in str(text).split(",")):
        if not piece:
            continue
        try:
            parts = piece.split(":")
            if len(parts) == 1:
                values.append(int(parts[0]))
                continue
            start, stop = int(parts[0]), int(parts[1])
            step = parts[2] if len(parts) > 2 else "1"
            if step.startswith("x"):
                factor = int(step[1:])
                if factor < 2 or start < 1:
                    raise ValueError("geometric ranges need start >= 1 and factor >= 2")
                value = start
                while value <= stop:
                    values.append(value)
                    value *= factor
            else:
                values.extend(range(start, stop + 1, int(step)))
        except ValueError as e:
            raise ConfigError(f"cannot parse integer list '{piece}': {e}")
    return values


GridTriple = Tuple[int, int, int]


class RunConfig(BaseModel):
    """One validated sketchbench invocation."""
    subcommand: Subcommand

    n1: Optional[int] = Field(None, ge=1, description="Rows of A (sketch)")
    n2: Optional[int] = Field(None, ge=1, description="Columns of A (sketch)")
    n: Optional[int] = Field(None, ge=1, description="Order of the symmetric A (nystrom)")
    r: Optional[int] = Field(None, ge=1, description="Sketch size")
    P: int = Field(1, ge=1, description="Number of ranks")

    seed: int = Field(default_factory=lambda: parse_seed(settings.DEFAULT_SEED), description="64-bit Ω seed")
    distribution: Optional[Distribution] = Field(None, description="Ω entry distribution")
    variant: Literal["redist", "noredist"] = Field(REDIST, description="Nyström variant")
    backend: Backend = Field(default_factory=lambda: Backend(settings.DEFAULT_BACKEND))
    grid: Optional[GridTriple] = Field(None, description="Explicit grid (Π for nystrom)")
    grid_q: Optional[GridTriple] = Field(None, description="Explicit Ψ grid (nystrom)")
    layout: Literal["selected", "1d"] = Field("selected", description="Case-selected grids or 1-D variants")
    reuse_omega: bool = Field(False, description="Reuse the first Ω block in the second multiply when it fits")
    omega: Literal["generate", "communicate"] = Field(
        "generate", description="sketch: regenerate Ω on every rank or all-gather it once generated"
    )

    input_path: Optional[Path] = Field(None, description="Matrix file for A")
    input_format: Optional[Literal["csv", "binary"]] = None
    points_path: Optional[Path] = Field(None, description="Point file for a kernel matrix")
    kernel: Optional[KernelSpec] = None
    dim: int = Field(8, ge=1, description="Dimension of synthetic points")
    rank: Optional[int] = Field(None, ge=1, description="Rank of the synthetic SPSD matrix")

    pinv_tol: float = Field(default_factory=lambda: settings.PINV_TOLERANCE, gt=0)
    oracle_cutoff: int = Field(default_factory=lambda: settings.ORACLE_CUTOFF, ge=0)
    skip_check: bool = False
    output: Optional[Path] = None

    problem: Literal["randmatmul", "nystrom"] = "randmatmul"
    n1_values: List[int] = Field(default_factory=list)
    n2_values: List[int] = Field(default_factory=list)
    n_values: List[int] = Field(default_factory=list)
    r_values: List[int] = Field(default_factory=list)
    P_values: List[int] = Field(default_factory=list)
    variants: List[Literal["redist", "noredist"]] = Field(default_factory=lambda: [REDIST, NOREDIST])

    @field_validator("seed", mode="before")
    @classmethod
    def coerce_seed(cls, value):
        return parse_seed(value)

    @field_validator("grid", "grid_q", mode="before")
    @classmethod
    def coerce_grid(cls, value):
        if isinstance(value, str):
            cleaned = value.strip().strip("()").replace("x", ",")
            return tuple(int(v) for v in cleaned.split(",") if v.strip())
        return value

    @model_validator(mode="after")
    def check_consistency(self):
        if self.subcommand in (Subcommand.SKETCH, Subcommand.NYSTROM):
            if self.r is None:
                raise ValueError("r is required")
            sources = [self.input_path is not None, self.points_path is not None]
            if all(sources):
                raise ValueError("give either an input matrix or a point file, not both")
            for name, grid in (("grid", self.grid), ("grid_q", self.grid_q)):
                if grid is not None and grid[0] * grid[1] * grid[2] != self.P:
                    raise ValueError(f"{name} {grid} has {grid[0] * grid[1] * grid[2]} ranks but P={self.P}")

        if self.subcommand is Subcommand.SKETCH:
            if self.points_path is not None:
                raise ValueError("sketch takes a matrix file or synthetic dimensions, not points")
            if self.input_path is None and (self.n1 is None or self.n2 is None):
                raise ValueError("sketch needs --input or both --n1 and --n2")
            if self.n2 is not None and self.input_path is None and self.r >= self.n2:
                raise ValueError(f"r={self.r} must be smaller than n2={self.n2}")

        if self.subcommand is Subcommand.NYSTROM:
            if self.points_path is not None and self.kernel is None:
                raise ValueError("a point file needs --kernel")
            if self.input_path is None and self.n is None and self.points_path is None:
                raise ValueError("nystrom needs --input, --points, or synthetic --n")
            if self.n is not None and self.input_path is None and self.points_path is None and self.r >= self.n:
                raise ValueError(f"r={self.r} must be smaller than n={self.n}")
            if self.variant == NOREDIST and self.grid and self.grid_q and self.grid != self.grid_q:
                raise ValueError("noredist needs identical grids")

        if self.subcommand is Subcommand.BOUNDS:
            dims = (self.n1_values, self.n2_values, self.r_values) if self.problem == "randmatmul" \
                else (self.n_values, self.r_values)
            if not self.P_values or not all(dims):
                raise ValueError("bounds needs non-empty sweep ranges for every dimension and P")
            if min(self.P_values) < 1:
                raise ValueError("P values must be positive")

        if self.subcommand is Subcommand.KERNEL:
            if self.points_path is None or self.kernel is None or self.output is None:
                raise ValueError("kernel needs a point file, --kernel and --out")
        return self

    def seed_spec(self) -> SketchSeed:
        """Seed + distribution; the default distribution depends on the subcommand."""
        default = settings.BENCH_DISTRIBUTION if self.subcommand is Subcommand.SKETCH \
            else settings.DEFAULT_DISTRIBUTION
        return SketchSeed(self.seed, self.distribution or Distribution(default))

    def echo(self) -> str:
        """Compact config line for CSV metadata."""
        return self.model_dump_json(exclude_none=True, exclude_defaults=True)


def format_number(value: Union[Fraction, float, int, None]) -> str:
    """Integral values print as integers; others as shortest round-trip floats."""
    if value is None:
        return ""
    if isinstance(value, Fraction) and value.denominator == 1:
        return str(value.numerator)
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


class PhaseRow(BaseModel):
    """One row of the sketch / nystrom phase CSV."""
    phase: str
    wall_time_s: float = Field(..., ge=0)
    words_sent: int = Field(..., ge=0)
    words_received: int = Field(..., ge=0)
    model_words: str = Field(..., description="Exact model bandwidth, integral or p/q")
    quality: Optional[float] = Field(None, ge=0, description="residual (sketch) or error (nystrom)")

    def to_csv_row(self) -> List[str]:
        return [
            self.phase, f"{self.wall_time_s:.6f}", str(self.words_sent), str(self.words_received),
            self.model_words, "" if self.quality is None else repr(self.quality),
        ]


PHASE_COLUMNS = ["phase", "wall_time_s", "words_sent", "words_received", "model_words"]

BOUNDS_COLUMNS = ["n1", "n2", "r", "P", "case", "W", "predicted", "gap", "problem", "variant", "grid_p", "grid_q"]


class BoundsRow(BaseModel):
    """One row of the bounds sweep CSV (n1 = n2 = n for the Nyström problem)."""
    n1: int
    n2: int
    r: int
    P: int
    case: int
    W: str
    predicted: str
    gap: str
    problem: str
    variant: str = ""
    grid_p: str
    grid_q: str = ""

    def to_csv_row(self) -> List[str]:
        return [str(getattr(self, column)) for column in BOUNDS_COLUMNS]
