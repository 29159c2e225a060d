import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from specbench.exceptions import BadMagicError, FormatError, NonFiniteDataError, TruncatedFileError, ValidationError
from specbench.hsi import HsiCube, LabelMap, WavelengthGrid
from specbench.io import (
    import_raw_bsq,
    import_raw_labels,
    load_cube,
    load_labels,
    load_planes,
    read_kv,
    read_pbm,
    save_cube,
    save_labels,
    save_planes,
    write_kv,
    write_pbm,
    write_pgm,
)


def _header(w, h, b):
    return b"HSC1" + struct.pack("<III", w, h, b)


class TestCubeFiles:
    def test_small_file_from_header(self, tmp_path):
        vals = np.arange(12, dtype="<f4")
        centers = np.array([600, 750, 900], "<f4")
        p = tmp_path / "c.hsc"
        p.write_bytes(_header(2, 2, 3) + centers.tobytes() + vals.tobytes())
        cube = load_cube(p)
        assert cube.data.shape == (2, 2, 3)
        assert cube.grid.lambda_min == 600 and cube.grid.lambda_max == 900
        # band-major planes, each row-major
        assert cube.data[0, 1, 0] == 1 and cube.data[1, 0, 0] == 2 and cube.data[0, 0, 1] == 4

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "c.hsc"
        p.write_bytes(b"XXXX" + bytes(40))
        with pytest.raises(BadMagicError):
            load_cube(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "c.hsc"
        p.write_bytes(_header(2, 2, 3) + np.zeros(3, "<f4").tobytes() + np.zeros(11, "<f4").tobytes())
        with pytest.raises(TruncatedFileError):
            load_cube(p)

    def test_trailing_bytes(self, tmp_path):
        p = tmp_path / "c.hsc"
        p.write_bytes(_header(1, 1, 1) + np.zeros(3, "<f4").tobytes())
        with pytest.raises(FormatError):
            load_cube(p)

    def test_non_finite_payload(self, tmp_path):
        p = tmp_path / "c.hsc"
        p.write_bytes(_header(1, 1, 1) + np.array([600, np.nan], "<f4").tobytes())
        with pytest.raises(NonFiniteDataError):
            load_cube(p)

    def test_refuses_nan(self, tmp_path):
        with pytest.raises(ValidationError):
            save_planes(np.full((1, 1, 1), np.nan), [600.0], tmp_path / "x.hsc")

    def test_minimal_cube_byte_length(self, tmp_path):
        p = tmp_path / "c.hsc"
        save_cube(HsiCube(WavelengthGrid(700, 700, 1), np.ones((1, 1, 1))), p)
        assert p.stat().st_size == 4 + 12 + 4 + 4

    @given(arrays(np.float32, st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 6)),
                  elements=st.floats(0, 1e6, width=32)))
    def test_round_trip_bit_exact(self, tmp_path_factory, data):
        p = tmp_path_factory.mktemp("rt") / "c.hsc"
        b = data.shape[2]
        cube = HsiCube(WavelengthGrid(600, 600 + 3 * max(b - 1, 0), b, bandwidth=3.0), data)
        save_cube(cube, p)
        back = load_cube(p)
        assert back.data.dtype == np.float32
        assert back.data.tobytes() == data.tobytes()
        assert back.grid.bands == b

    def test_signed_planes(self, tmp_path, rng):
        planes = rng.normal(size=(3, 4, 5))
        save_planes(planes, [0, 1, 2], tmp_path / "p.hsc")
        centers, back = load_planes(tmp_path / "p.hsc")
        np.testing.assert_array_equal(back, planes.astype(np.float32))
        np.testing.assert_array_equal(centers, [0, 1, 2])


class TestLabelFiles:
    def test_round_trip(self, tmp_path, rng):
        lm = LabelMap(rng.integers(0, 4, (5, 7)), ("grass", "soil", "é", "x"))
        save_labels(lm, tmp_path / "l.lbl")
        back = load_labels(tmp_path / "l.lbl")
        np.testing.assert_array_equal(back.labels, lm.labels)
        assert back.class_names == lm.class_names

    def test_unknown_code(self, tmp_path):
        lm = LabelMap(np.array([[0, 1]]), ("a", "b"))
        unknown = np.array([[False, True]])
        save_labels(lm, tmp_path / "l.lbl", unknown_mask=unknown)
        raw = (tmp_path / "l.lbl").read_bytes()
        assert np.frombuffer(raw, "<u2", 2, 16)[1] == 0xFFFF
        _, mask = load_labels(tmp_path / "l.lbl", return_unknown=True)
        np.testing.assert_array_equal(mask, unknown)

    def test_bad_magic_and_truncation(self, tmp_path):
        (tmp_path / "a").write_bytes(b"HSC1" + bytes(20))
        with pytest.raises(BadMagicError):
            load_labels(tmp_path / "a")
        (tmp_path / "b").write_bytes(b"LBL1" + struct.pack("<III", 4, 4, 1) + bytes(10))
        with pytest.raises(TruncatedFileError):
            load_labels(tmp_path / "b")


class TestBitmaps:
    @pytest.mark.parametrize("binary", [True, False])
    def test_pbm_round_trip(self, tmp_path, rng, binary):
        m = rng.integers(0, 2, (7, 13)).astype(np.uint8)
        write_pbm(m, tmp_path / "m.pbm", binary=binary)
        np.testing.assert_array_equal(read_pbm(tmp_path / "m.pbm"), m)

    def test_pbm_with_comment(self, tmp_path):
        (tmp_path / "m.pbm").write_bytes(b"P1\n# mask\n3 2\n1 0 1\n0 1 0\n")
        np.testing.assert_array_equal(read_pbm(tmp_path / "m.pbm"), [[1, 0, 1], [0, 1, 0]])

    def test_pgm_preview(self, tmp_path):
        write_pgm(np.array([[0.0, 0.5], [1.0, np.nan]]), tmp_path / "p.pgm")
        raw = (tmp_path / "p.pgm").read_bytes()
        assert raw.startswith(b"P5\n2 2\n255\n")
        assert list(raw[-4:]) == [0, 128, 255, 0]


class TestRawImport:
    def test_bsq_f32(self, tmp_path, rng):
        data = rng.uniform(0, 1, (3, 4, 5)).astype("<f4")  # bands, rows, cols
        data.tofile(tmp_path / "x.raw")
        cube = import_raw_bsq(tmp_path / "x.raw", 5, 4, 3, "f32", 400, 2500)
        np.testing.assert_allclose(cube.data, np.transpose(data, (1, 2, 0)))
        assert cube.grid.lambda_max == 2500

    def test_bsq_u16_and_truncation(self, tmp_path):
        np.arange(24, dtype="<u2").tofile(tmp_path / "x.raw")
        cube = import_raw_bsq(tmp_path / "x.raw", 3, 2, 4, "u16")
        assert cube.data[0, 0, 1] == 6
        with pytest.raises(TruncatedFileError):
            import_raw_bsq(tmp_path / "x.raw", 3, 2, 5, "u16")

    def test_labels(self, tmp_path):
        np.array([0, 1, 2, 2], np.uint8).tofile(tmp_path / "l.raw")
        lm = import_raw_labels(tmp_path / "l.raw", 2, 2)
        np.testing.assert_array_equal(lm.labels, [[0, 1], [2, 2]])


def test_kv_round_trip(tmp_path):
    write_kv(tmp_path / "a.txt", {"x": 1.5, "name": "abc", "list": [1, 2, 3]})
    assert read_kv(tmp_path / "a.txt") == {"x": "1.5", "name": "abc", "list": "1,2,3"}
    with pytest.raises(ValidationError):
        write_kv(tmp_path / "b.txt", {"x": "a\nb"})
