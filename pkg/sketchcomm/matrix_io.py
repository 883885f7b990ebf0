"""
Matrix File I/O
Two formats, chosen by file suffix:
- binary (any suffix but .csv): little-endian header of two uint64 counts
  (rows, cols) followed by rows*cols float64 values in column-major order
- CSV (.csv): one matrix row per line; blank lines and '#' lines are skipped
Point sets for kernels use the same formats with one point per row.
"""

import csv
import io
from pathlib import Path
from typing import Optional, Union

import numpy as np

from sketchcomm.errors import MatrixFormatError
from sketchcomm.linalg import DenseMatrix, as_dense

PathLike = Union[str, Path]

_HEADER = np.dtype("<u8")
_VALUES = np.dtype("<f8")


def _resolve_format(path: Path, fmt: Optional[str]) -> str:
    fmt = (fmt or ("csv" if path.suffix.lower() == ".csv" else "binary")).lower()
    if fmt not in ("csv", "binary"):
        raise MatrixFormatError(str(path), f"unknown matrix format '{fmt}' (use csv or binary)")
    return fmt


def read_matrix(path: PathLike, fmt: Optional[str] = None) -> DenseMatrix:
    """Load a matrix; raises FileNotFoundError for missing files and MatrixFormatError for bad content."""
    path = Path(path)
    if _resolve_format(path, fmt) == "csv":
        return _read_csv(path)
    return _read_binary(path)


def write_matrix(path: PathLike, matrix: DenseMatrix, fmt: Optional[str] = None) -> Path:
    """Write a matrix in the format implied by `fmt` or the file suffix."""
    path = Path(path)
    matrix = as_dense(matrix)
    path.parent.mkdir(parents=True, exist_ok=True)

    if _resolve_format(path, fmt) == "csv":
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            for row in matrix:
                writer.writerow([repr(float(value)) for value in row])
    else:
        header = np.array(matrix.shape, dtype=_HEADER)
        with open(path, "wb") as f:
            f.write(header.tobytes())
            f.write(matrix.astype(_VALUES).tobytes(order="F"))
    return path


def _read_binary(path: Path) -> DenseMatrix:
    data = path.read_bytes()
    if len(data) < 2 * _HEADER.itemsize:
        raise MatrixFormatError(str(path), f"file too short for header ({len(data)} bytes)")

    rows, cols = (int(v) for v in np.frombuffer(data[:16], dtype=_HEADER))
    expected = 16 + rows * cols * _VALUES.itemsize
    if len(data) != expected:
        raise MatrixFormatError(
            str(path), f"header says {rows}x{cols} ({expected} bytes) but file has {len(data)} bytes"
        )

    values = np.frombuffer(data[16:], dtype=_VALUES)
    return np.asfortranarray(values.reshape((rows, cols), order="F").astype(np.float64))


def _read_csv(path: Path) -> DenseMatrix:
    try:
        text = path.read_bytes().decode("utf-8")
    except UnicodeDecodeError as e:
        raise MatrixFormatError(str(path), f"not valid UTF-8 ({e})")

    rows = []
    width = None
    with io.StringIO(text, newline="") as f:
        for line_number, record in enumerate(csv.reader(f), start=1):
            if not record or not "".join(record).strip() or record[0].lstrip().startswith("#"):
                continue
            try:
                values = [float(cell) for cell in record]
            except ValueError as e:
                raise MatrixFormatError(str(path), f"not a number ({e})", line=line_number)
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise MatrixFormatError(
                    str(path), f"expected {width} columns, found {len(values)}", line=line_number
                )
            rows.append(values)

    if not rows:
        raise MatrixFormatError(str(path), "no matrix rows found")
    return as_dense(np.array(rows, dtype=np.float64))
