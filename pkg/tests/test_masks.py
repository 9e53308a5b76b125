import numpy as np
import pytest

from convad.errors import MaskError
from convad.masks import (empty_mask, flatten_mask, full_mask, read_mask,
                          read_pgm_mask, validate_mask, write_pgm_mask,
                          write_rle_json)

F32 = np.float32


class TestValidate:
    def test_accepts_binary(self):
        m = validate_mask([[0, 1], [1, 0]])
        assert m.dtype == np.float32

    def test_rejects_fractional(self):
        with pytest.raises(MaskError, match="0 or 1"):
            validate_mask([[0.5, 1.0]])

    def test_rejects_3d(self):
        with pytest.raises(MaskError, match="2-d"):
            validate_mask(np.ones((1, 2, 2)))

    def test_spatial_check(self):
        with pytest.raises(MaskError, match="spatial"):
            validate_mask(np.ones((2, 2)), spatial=(3, 3))

    def test_constructors(self):
        assert full_mask(2, 3).sum() == 6
        assert empty_mask(2, 3).sum() == 0


class TestFlatten:
    def test_channel_tiling_order(self):
        m = np.array([[1, 0], [0, 1]], F32)
        flat = flatten_mask(m, channels=3)
        # flat order is (C,H,W) row-major: the spatial pattern repeats per channel
        np.testing.assert_array_equal(flat, np.tile([1, 0, 0, 1], 3))

    def test_length(self):
        assert flatten_mask(full_mask(4, 5), channels=2).shape == (40,)


class TestPgm:
    def test_round_trip(self, tmp_path, rng):
        m = (rng.random((6, 7)) > 0.5).astype(F32)
        path = tmp_path / "m.pgm"
        write_pgm_mask(path, m)
        np.testing.assert_array_equal(read_pgm_mask(path), m)

    def test_threshold_at_128(self, tmp_path):
        path = tmp_path / "m.pgm"
        path.write_bytes(b"P5\n2 1\n255\n" + bytes([127, 128]))
        np.testing.assert_array_equal(read_pgm_mask(path), [[0, 1]])

    def test_ascii_p2_with_comment(self, tmp_path):
        path = tmp_path / "m.pgm"
        path.write_text("P2\n# comment line\n2 2\n255\n0 255\n255 0\n")
        np.testing.assert_array_equal(read_pgm_mask(path), [[0, 1], [1, 0]])

    def test_not_pgm(self, tmp_path):
        path = tmp_path / "m.pgm"
        path.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
        with pytest.raises(MaskError, match="not a PGM"):
            read_pgm_mask(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "m.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + bytes(3))
        with pytest.raises(MaskError, match="truncated"):
            read_pgm_mask(path)

    def test_16_bit_rejected(self, tmp_path):
        path = tmp_path / "m.pgm"
        path.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
        with pytest.raises(MaskError, match="8-bit"):
            read_pgm_mask(path)


class TestRle:
    def test_round_trip(self, tmp_path, rng):
        m = (rng.random((5, 9)) > 0.4).astype(F32)
        path = tmp_path / "m.json"
        write_rle_json(path, m)
        np.testing.assert_array_equal(read_mask(path), m)

    def test_runs_must_cover_exactly(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text('{"height": 2, "width": 2, "runs": [[1, 3]]}')
        with pytest.raises(MaskError, match="cover"):
            read_mask(path)

    def test_overflowing_run(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text('{"height": 2, "width": 2, "runs": [[1, 5]]}')
        with pytest.raises(MaskError, match="invalid run"):
            read_mask(path)

    def test_bad_value(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text('{"height": 1, "width": 2, "runs": [[2, 2]]}')
        with pytest.raises(MaskError, match="invalid run"):
            read_mask(path)

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text("{nope")
        with pytest.raises(MaskError, match="malformed"):
            read_mask(path)

    def test_read_mask_dispatches_by_suffix(self, tmp_path):
        m = np.eye(3, dtype=F32)
        write_pgm_mask(tmp_path / "a.pgm", m)
        write_rle_json(tmp_path / "a.json", m)
        np.testing.assert_array_equal(read_mask(tmp_path / "a.pgm"),
                                      read_mask(tmp_path / "a.json"))
