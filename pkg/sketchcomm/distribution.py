"""
Block Distribution
How a global matrix is spread over a GridSpec. A role names the grid axes
that index block rows and block columns, and the axis that splits each block:

    A-role  blocks (i, j), split over k     (input of B = A·Ω)
    B-role  blocks (i, k), split over j     (output of B = A·Ω)
    C-role  blocks (j, k), split over i     (output of C = Ωᵀ·B)

Rank (i, j, k) holds segment s (its coordinate on the split axis) of its
block flattened column-major, so every element has exactly one owner.
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np

from sketchcomm.errors import DimensionError, DivisibilityError
from sketchcomm.fabric import Communicator
from sketchcomm.grids import GridSpec, divisibility_message
from sketchcomm.linalg import DenseMatrix, as_dense

_AXIS_NAMES = ("p1", "p2", "p3")


class BlockRole(str, Enum):
    A = "A"
    B = "B"
    C = "C"

    @property
    def axes(self) -> Tuple[int, int, int]:
        """(row axis, column axis, split axis)."""
        return {"A": (0, 1, 2), "B": (0, 2, 1), "C": (1, 2, 0)}[self.value]


@dataclass(frozen=True)
class BlockLayout:
    rows: int
    cols: int
    grid: GridSpec
    role: BlockRole

    @property
    def block_shape(self) -> Tuple[int, int]:
        row_axis, col_axis, _ = self.role.axes
        return self.rows // self.grid.dims[row_axis], self.cols // self.grid.dims[col_axis]

    @property
    def splits(self) -> int:
        return self.grid.dims[self.role.axes[2]]

    @property
    def segment_len(self) -> int:
        br, bc = self.block_shape
        return br * bc // self.splits

    def validate(self) -> "BlockLayout":
        row_axis, col_axis, split_axis = self.role.axes
        for name, value, axis in (("rows", self.rows, row_axis), ("cols", self.cols, col_axis)):
            divisor = self.grid.dims[axis]
            if value % divisor:
                message, hint = divisibility_message(name, value, _AXIS_NAMES[axis], divisor)
                raise DivisibilityError(f"{self.role.value}-role on grid {self.grid}: {message}", hint)
        br, bc = self.block_shape
        if (br * bc) % self.splits:
            raise DivisibilityError(
                f"{self.role.value}-role on grid {self.grid}: {br}x{bc} block of {br * bc} words "
                f"does not split into {self.splits} equal segments",
                f"choose dimensions whose block size is a multiple of {_AXIS_NAMES[split_axis]}={self.splits}",
            )
        return self

    def block_index(self, rank: int) -> Tuple[int, int, int]:
        """(block row, block col, segment) of `rank`."""
        coords = self.grid.coords(rank)
        row_axis, col_axis, split_axis = self.role.axes
        return coords[row_axis], coords[col_axis], coords[split_axis]

    def element_coords(self, rank: int) -> Tuple[np.ndarray, np.ndarray]:
        """Global (row, col) of each entry of `rank`'s segment, in segment order."""
        bi, bj, s = self.block_index(rank)
        br, bc = self.block_shape
        length = self.segment_len
        t = np.arange(s * length, (s + 1) * length)
        return bi * br + t % br, bj * bc + t // br

    def owner_of(self, rows: np.ndarray, cols: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Owning rank and offset within its segment, for each (row, col)."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        br, bc = self.block_shape
        length = self.segment_len
        t = (cols % bc) * br + rows % br

        coords = [None, None, None]
        row_axis, col_axis, split_axis = self.role.axes
        coords[row_axis] = rows // br
        coords[col_axis] = cols // bc
        coords[split_axis] = t // length
        p1, p2, p3 = self.grid.dims
        owner = (coords[0] * p2 + coords[1]) * p3 + coords[2]
        return owner, t % length


@dataclass
class DistMatrix:
    """One rank's piece of a distributed matrix."""
    layout: BlockLayout
    rank: int
    local: np.ndarray

    def __post_init__(self):
        self.local = np.ascontiguousarray(self.local, dtype=np.float64).ravel()
        if self.local.size != self.layout.segment_len:
            raise DimensionError(
                f"rank {self.rank} holds {self.local.size} words but its "
                f"{self.layout.role.value}-role segment has {self.layout.segment_len}"
            )

    @property
    def shape(self) -> Tuple[int, int]:
        return self.layout.rows, self.layout.cols

    @property
    def grid(self) -> GridSpec:
        return self.layout.grid

    @property
    def role(self) -> BlockRole:
        return self.layout.role


def scatter_matrix(matrix: DenseMatrix, grid: GridSpec, role: BlockRole, rank: int) -> DistMatrix:
    """`rank`'s segment of `matrix` laid out on `grid` in `role`."""
    matrix = as_dense(matrix)
    layout = BlockLayout(matrix.shape[0], matrix.shape[1], grid, BlockRole(role)).validate()
    bi, bj, s = layout.block_index(rank)
    br, bc = layout.block_shape
    block = matrix[bi * br:(bi + 1) * br, bj * bc:(bj + 1) * bc].ravel(order="F")
    length = layout.segment_len
    return DistMatrix(layout, rank, block[s * length:(s + 1) * length].copy())


def scatter_all(matrix: DenseMatrix, grid: GridSpec, role: BlockRole) -> List[DistMatrix]:
    return [scatter_matrix(matrix, grid, role, rank) for rank in range(grid.size)]


def assemble(pieces: Sequence[DistMatrix]) -> DenseMatrix:
    """Rebuild the global matrix from every rank's piece (no communication)."""
    if not pieces:
        raise DimensionError("assemble needs at least one piece")
    layout = pieces[0].layout
    out = np.zeros((layout.rows, layout.cols), dtype=np.float64, order="F")
    for piece in pieces:
        rows, cols = layout.element_coords(piece.rank)
        out[rows, cols] = piece.local
    return out


def assemble_segments(layout: BlockLayout, segments: np.ndarray) -> DenseMatrix:
    """Rebuild from the concatenation of all ranks' segments in rank order."""
    length = layout.segment_len
    pieces = [
        DistMatrix(layout, rank, segments[rank * length:(rank + 1) * length])
        for rank in range(layout.grid.size)
    ]
    return assemble(pieces)


async def gather_matrix(dist: DistMatrix, comm: Communicator) -> DenseMatrix:
    """Every rank receives the full matrix. Verification only: not charged to the CostReport."""
    with comm.meter_paused():
        segments = await comm.all_gather(dist.local, comm.world, label="gather_verify")
    return assemble_segments(dist.layout, segments)
