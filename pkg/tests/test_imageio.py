import os

import numpy as np
import pytest
from PIL import Image

from pnprestore.errors import FormatError
from pnprestore.imageio import image_read, image_write, quantize, read_bytes

from conftest import FIXTURES


def test_p5_fixture():
    t = image_read(os.path.join(FIXTURES, "gray2x2.pgm"))
    assert t.shape == (2, 2, 1)
    np.testing.assert_array_equal(t[:, :, 0] * 255, [[0, 64], [128, 255]])


def test_half_rounds_up():
    assert quantize(np.full((1, 1), 0.5))[0, 0, 0] == 128
    assert quantize(np.full((1, 1), 1.5 / 255))[0, 0, 0] == 2


def test_quantize_clips():
    np.testing.assert_array_equal(quantize(np.array([[-0.3, 1.7]]))[:, :, 0], [[0, 255]])


@pytest.mark.parametrize("ext,channels", [(".pgm", 1), (".ppm", 3), (".png", 1), (".png", 3)])
def test_round_trip_bytes(tmp_path, ext, channels):
    raw = np.random.default_rng(0).integers(0, 256, (13, 9, channels), dtype=np.uint8)
    path = tmp_path / f"img{ext}"
    image_write(raw / 255.0, path)
    np.testing.assert_array_equal(read_bytes(path), raw)
    image_write(image_read(path), tmp_path / f"again{ext}")
    assert (tmp_path / f"again{ext}").read_bytes() == path.read_bytes()


def test_pgm_refuses_color(tmp_path):
    with pytest.raises(FormatError):
        image_write(np.zeros((2, 2, 3)), tmp_path / "c.pgm")


def test_unknown_extension(tmp_path):
    with pytest.raises(FormatError):
        image_write(np.zeros((2, 2, 1)), tmp_path / "c.tiff")


def test_sixteen_bit_png_rejected(tmp_path):
    path = tmp_path / "deep.png"
    Image.fromarray(np.full((3, 3), 40000, dtype=np.uint16)).save(path)
    with pytest.raises(FormatError):
        image_read(path)


def test_garbage_file(tmp_path):
    path = tmp_path / "junk.pgm"
    path.write_bytes(b"not an image")
    with pytest.raises(FormatError):
        image_read(path)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        image_read(tmp_path / "nope.png")
