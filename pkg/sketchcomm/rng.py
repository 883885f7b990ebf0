"""
Counter-Based Random Sketch Generation
Philox-4x32-10 applied to the column-major global index of each entry of Ω,
so any rank can materialise any sub-block of Ω without communication and
every rank sees the same bits for the same entry.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple, Union

import numpy as np

from sketchcomm.errors import ConfigError, DimensionError
from sketchcomm.linalg import DenseMatrix

# Philox constants
PHILOX_M0 = np.uint64(0xD2511F53)
PHILOX_M1 = np.uint64(0xCD9E8D57)
PHILOX_W0 = 0x9E3779B9
PHILOX_W1 = 0xBB67AE85
PHILOX_ROUNDS = 10

MASK_32b = 0xFFFFFFFF
MASK_64b = 0xFFFFFFFFFFFFFFFF
COUNTER_SPACE = 1 << 64

_MASK32 = np.uint64(MASK_32b)
_SHIFT32 = np.uint64(32)
_SHIFT11 = np.uint64(11)
_TWO_POW_M53 = 1.0 / float(1 << 53)


class Distribution(str, Enum):
    """Entry distribution of Ω."""
    UNIFORM = "uniform"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class SketchSeed:
    """A 64-bit key plus the distribution it draws from."""
    key: int
    distribution: Distribution = Distribution.GAUSSIAN

    def __post_init__(self):
        if not 0 <= int(self.key) <= MASK_64b:
            raise ConfigError(f"seed key must be a 64-bit unsigned integer, got {self.key}")
        object.__setattr__(self, "key", int(self.key))
        object.__setattr__(self, "distribution", Distribution(self.distribution))

    def with_distribution(self, distribution: Union[str, Distribution]) -> "SketchSeed":
        return SketchSeed(self.key, Distribution(distribution))


def parse_seed(text: Union[str, int]) -> int:
    """Parse a seed given as an int, a decimal string, or a 0x-hex string."""
    if isinstance(text, int):
        value = text
    else:
        raw = str(text).strip().lower().replace("_", "")
        try:
            value = int(raw, 16) if raw.startswith("0x") else int(raw, 10)
        except ValueError:
            raise ConfigError(f"seed '{text}' is neither decimal nor 0x-hex")
    if not 0 <= value <= MASK_64b:
        raise ConfigError(f"seed {value} does not fit in 64 unsigned bits")
    return value


def philox4x32(counters: np.ndarray, key: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Philox-4x32-10 block function on a vector of 64-bit counters.

    Each counter c becomes the 128-bit block (c_lo, c_hi, 0, 0); the 64-bit key
    is split into two 32-bit words. Returns the four 32-bit output words (held in uint64).
    """
    counters = np.ascontiguousarray(counters, dtype=np.uint64)
    ctr0 = counters & _MASK32
    ctr1 = counters >> _SHIFT32
    ctr2 = np.zeros_like(counters)
    ctr3 = np.zeros_like(counters)

    k0 = key & MASK_32b
    k1 = (key >> 32) & MASK_32b
    for _ in range(PHILOX_ROUNDS):
        prod0 = ctr0 * PHILOX_M0
        prod1 = ctr2 * PHILOX_M1
        ctr0, ctr1, ctr2, ctr3 = (
            (prod1 >> _SHIFT32) ^ ctr1 ^ np.uint64(k0),
            prod1 & _MASK32,
            (prod0 >> _SHIFT32) ^ ctr3 ^ np.uint64(k1),
            prod0 & _MASK32,
        )
        k0 = (k0 + PHILOX_W0) & MASK_32b
        k1 = (k1 + PHILOX_W1) & MASK_32b
    return ctr0, ctr1, ctr2, ctr3


def uniform_from_counters(counters: np.ndarray, key: int) -> np.ndarray:
    """One uniform [0, 1) double per counter, from the top 53 bits of the first two output words."""
    x0, x1, _, _ = philox4x32(counters, key)
    bits = (x1 << _SHIFT32) | x0
    return (bits >> _SHIFT11).astype(np.float64) * _TWO_POW_M53


def gaussian_from_counters(counters: np.ndarray, key: int) -> np.ndarray:
    """
    Box–Muller on counter pairs: entry c uses uniforms at counters 2⌊c/2⌋ and
    2⌊c/2⌋+1; even c takes the cosine branch, odd c the sine branch.
    """
    counters = np.ascontiguousarray(counters, dtype=np.uint64)
    base = (counters >> np.uint64(1)) << np.uint64(1)
    u1 = uniform_from_counters(base, key)
    u2 = uniform_from_counters(base + np.uint64(1), key)

    radius = np.sqrt(-2.0 * np.log1p(-u1))
    angle = 2.0 * np.pi * u2
    odd = (counters & np.uint64(1)).astype(bool)
    return np.where(odd, radius * np.sin(angle), radius * np.cos(angle))


def gen_block(
    seed: SketchSeed,
    row_start: int,
    row_count: int,
    col_start: int,
    col_count: int,
    total_rows: int,
    total_cols: Optional[int] = None,
) -> DenseMatrix:
    """
    Sub-block Ω[row_start:row_start+row_count, col_start:col_start+col_count]
    of the global total_rows x total_cols matrix Ω(seed).

    Entry (i, j) is drawn from counter j*total_rows + i.
    """
    for name, value in (("row_start", row_start), ("row_count", row_count),
                        ("col_start", col_start), ("col_count", col_count)):
        if value < 0:
            raise DimensionError(f"{name} must be non-negative, got {value}")
    if total_rows < 1:
        raise DimensionError(f"total_rows must be positive, got {total_rows}")
    if row_start + row_count > total_rows:
        raise DimensionError(
            f"rows [{row_start}, {row_start + row_count}) exceed Ω extent of {total_rows} rows"
        )
    if total_cols is not None and col_start + col_count > total_cols:
        raise DimensionError(
            f"cols [{col_start}, {col_start + col_count}) exceed Ω extent of {total_cols} cols"
        )
    if (col_start + col_count) * total_rows > COUNTER_SPACE:
        raise DimensionError(
            f"cols [{col_start}, {col_start + col_count}) of a {total_rows}-row Ω overflow the "
            f"64-bit counter space"
        )

    rows = np.arange(row_start, row_start + row_count, dtype=np.uint64)
    cols = np.arange(col_start, col_start + col_count, dtype=np.uint64)
    counters = (cols[None, :] * np.uint64(total_rows) + rows[:, None]).ravel(order="F")

    if seed.distribution is Distribution.UNIFORM:
        values = uniform_from_counters(counters, seed.key)
    else:
        values = gaussian_from_counters(counters, seed.key)
    return np.asfortranarray(values.reshape((row_count, col_count), order="F"))


def gen_counters(seed: SketchSeed, start: int, count: int) -> np.ndarray:
    """Entries start..start+count-1 of Ω(seed) flattened column-major."""
    if start < 0 or count < 0 or start + count > COUNTER_SPACE:
        raise DimensionError(f"counters [{start}, {start + count}) are outside the 64-bit counter space")
    counters = np.arange(start, start + count, dtype=np.uint64)
    if seed.distribution is Distribution.UNIFORM:
        return uniform_from_counters(counters, seed.key)
    return gaussian_from_counters(counters, seed.key)


def gen_full(seed: SketchSeed, rows: int, cols: int) -> DenseMatrix:
    """The whole rows x cols matrix Ω(seed)."""
    return gen_block(seed, 0, rows, 0, cols, rows, cols)
