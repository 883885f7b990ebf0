"""
Tests for matrix file formats
"""

import numpy as np
import pytest

from sketchcomm.errors import DimensionError, MatrixFormatError
from sketchcomm.matrix_io import read_matrix, write_matrix
from tests.conftest import random_matrix


def test_binary_layout_is_header_then_column_major(tmp_path):
    m = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    path = write_matrix(tmp_path / "m.bin", m)
    data = path.read_bytes()
    assert np.frombuffer(data[:16], dtype="<u8").tolist() == [2, 3]
    assert np.frombuffer(data[16:], dtype="<f8").tolist() == [1.0, 4.0, 2.0, 5.0, 3.0, 6.0]


def test_binary_preserves_bits(tmp_path):
    m = random_matrix(5, 4)
    m[0, 0] = -0.0
    m[1, 1] = 1e-310
    back = read_matrix(write_matrix(tmp_path / "m.bin", m))
    assert back.tobytes(order="F") == m.tobytes(order="F")


def test_csv_skips_comments_and_blank_lines(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("# header comment\n1,2\n\n3,4\n")
    assert np.array_equal(read_matrix(path), np.array([[1.0, 2.0], [3.0, 4.0]]))


def test_csv_writes_round_trippable_values(tmp_path):
    m = random_matrix(3, 3)
    back = read_matrix(write_matrix(tmp_path / "m.csv", m))
    assert np.array_equal(back, m)


def test_csv_bad_number_reports_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1,2\n3,oops\n")
    with pytest.raises(MatrixFormatError) as excinfo:
        read_matrix(path)
    assert excinfo.value.line == 2
    assert "bad.csv:2" in str(excinfo.value)


def test_csv_ragged_rows_report_line(tmp_path):
    path = tmp_path / "ragged.csv"
    path.write_text("1,2\n\n3,4,5\n")
    with pytest.raises(MatrixFormatError) as excinfo:
        read_matrix(path)
    assert excinfo.value.line == 3


def test_csv_invalid_utf8_is_a_format_error(tmp_path):
    path = tmp_path / "latin.csv"
    path.write_bytes(b"1.0,2.0\n\xff\xfe,3.0\n")
    with pytest.raises(MatrixFormatError, match="not valid UTF-8") as excinfo:
        read_matrix(path, "csv")
    assert str(path) in str(excinfo.value)


def test_empty_csv_is_an_error(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("# nothing here\n")
    with pytest.raises(MatrixFormatError):
        read_matrix(path)


def test_binary_size_mismatch(tmp_path):
    path = tmp_path / "short.bin"
    path.write_bytes(np.array([2, 2], dtype="<u8").tobytes() + np.zeros(3).tobytes())
    with pytest.raises(MatrixFormatError, match="header says 2x2"):
        read_matrix(path)


def test_missing_file_raises_file_not_found(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_matrix(tmp_path / "missing.bin")


def test_unknown_format_is_rejected(tmp_path):
    with pytest.raises(MatrixFormatError, match="unknown matrix format"):
        write_matrix(tmp_path / "m.txt", np.eye(2), fmt="parquet")


def test_format_errors_are_dimension_errors():
    assert issubclass(MatrixFormatError, DimensionError)
