import numpy as np
import pytest

from hyperflow.errors import DataError, FormatError
from hyperflow.netpbm import read_pgm, read_ppm, write_pgm, write_ppm


def test_pgm_round_trip_and_header(tmp_path):
    img = np.arange(12, dtype=np.uint8).reshape(3, 4)
    write_pgm(tmp_path / "a.pgm", img)
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw.startswith(b"P5\n4 3\n255\n") and len(raw) == 11 + 12
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), img)


def test_ppm_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (5, 2, 3)).astype(np.uint8)
    write_ppm(tmp_path / "a.ppm", img)
    assert np.array_equal(read_ppm(tmp_path / "a.ppm"), img)


def test_comments_and_errors(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# hi\n2 1\n255\n\x01\x02")
    assert read_pgm(tmp_path / "c.pgm").tolist() == [[1, 2]]
    (tmp_path / "t.pgm").write_bytes(b"P5\n2 2\n255\n\x01")
    with pytest.raises(FormatError):
        read_pgm(tmp_path / "t.pgm")
    with pytest.raises(DataError):
        write_pgm(tmp_path / "x.pgm", np.array([[300]]))
    with pytest.raises(FormatError):
        read_ppm(tmp_path / "c.pgm")
