import numpy as np
import pytest

from pyramidal_ddpm.errors import ShapeError
from pyramidal_ddpm.imageio import read_image, read_raw, to_uint8, write_image, write_pnm, write_raw


def test_uint8_mapping():
    np.testing.assert_array_equal(to_uint8(np.array([-1.0, 0.0, 1.0, -3.0, 2.0])), [0, 128, 255, 0, 255])


def test_raw_round_trip_is_lossless(tmp_path):
    x = np.random.default_rng(0).standard_normal((5, 7, 3)).astype(np.float32)
    p = tmp_path / "a.pdg"
    write_raw(p, x)
    data = p.read_bytes()
    assert data[:4] == b"PDG1" and len(data) == 16 + 4 * x.size
    assert int.from_bytes(data[4:8], "little") == 5
    np.testing.assert_array_equal(read_raw(p), x)
    np.testing.assert_array_equal(read_image(p), x)


def test_raw_rejects_truncation(tmp_path):
    p = tmp_path / "a.pdg"
    write_raw(p, np.zeros((2, 2, 1)))
    p.write_bytes(p.read_bytes()[:-2])
    with pytest.raises(ValueError):
        read_raw(p)


@pytest.mark.parametrize("C, magic", [(1, b"P5"), (3, b"P6")])
def test_pnm_round_trip(tmp_path, C, magic):
    x = np.linspace(-1, 1, 4 * 6 * C).reshape(4, 6, C)
    p = tmp_path / "a.pnm"
    write_pnm(p, x)
    assert p.read_bytes()[:2] == magic
    y = read_image(p)
    assert y.shape == x.shape
    assert np.max(np.abs(y - x)) <= 1 / 255 + 1e-12


def test_pnm_header_comments(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# comment\n2 1\n255\n" + bytes([0, 255]))
    np.testing.assert_array_equal(read_image(p)[..., 0], [[-1.0, 1.0]])


def test_write_rejects_bad_shapes(tmp_path):
    with pytest.raises(ShapeError):
        write_pnm(tmp_path / "x.pgm", np.zeros((4, 4, 2)))
    with pytest.raises(ValueError):
        write_image(tmp_path / "x", np.zeros((4, 4, 1)), "png")
