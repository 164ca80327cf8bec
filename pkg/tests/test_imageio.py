import numpy as np
import pytest

from maskcount import imageio
from maskcount.errors import SceneFormatError


def test_ppm_round_trip_of_quantized_image(tmp_path):
    rng = np.random.default_rng(2)
    image = rng.integers(0, 256, size=(3, 7, 9)) / 255.0
    filename = str(tmp_path / "image.ppm")
    imageio.write_ppm(image, filename)
    np.testing.assert_array_equal(imageio.read_ppm(filename), image)


def test_ppm_reload_within_one_level(tmp_path):
    rng = np.random.default_rng(3)
    image = rng.uniform(0, 1, size=(3, 5, 5))
    filename = str(tmp_path / "image.ppm")
    imageio.write_ppm(image, filename)
    assert np.abs(imageio.read_ppm(filename) - image).max() <= 1.0 / 255.0


def test_header_comments_are_skipped(tmp_path):
    filename = tmp_path / "gray.pgm"
    filename.write_bytes(b"P5\n# made by hand\n2 1\n# max\n255\n" + bytes([0, 255]))
    np.testing.assert_array_equal(imageio.read_netpbm(str(filename)), [[0, 255]])


def test_pgm_scaling(tmp_path):
    filename = str(tmp_path / "mask.pgm")
    imageio.write_pgm(np.array([[-1.0, 0.0, 1.0]]), filename, -1.0, 1.0)
    np.testing.assert_array_equal(imageio.read_netpbm(filename), [[0, 128, 255]])


def test_truncated_raster(tmp_path):
    filename = tmp_path / "short.ppm"
    filename.write_bytes(b"P6\n4 4\n255\n" + bytes(10))
    with pytest.raises(SceneFormatError) as error:
        imageio.read_ppm(str(filename))
    assert error.value.field == "raster"
    assert error.value.offset == len(b"P6\n4 4\n255\n") + 10


def test_truncated_header(tmp_path):
    filename = tmp_path / "header.ppm"
    filename.write_bytes(b"P6\n4 ")
    with pytest.raises(SceneFormatError) as error:
        imageio.read_ppm(str(filename))
    assert error.value.field == "height"


def test_gray_file_is_not_a_scene_image(tmp_path):
    filename = str(tmp_path / "gray.pgm")
    imageio.write_pgm(np.zeros((2, 2)), filename)
    with pytest.raises(SceneFormatError):
        imageio.read_ppm(filename)


def test_bad_magic(tmp_path):
    filename = tmp_path / "bad.ppm"
    filename.write_bytes(b"P3\n1 1\n255\n0 0 0\n")
    with pytest.raises(SceneFormatError) as error:
        imageio.read_netpbm(str(filename))
    assert error.value.field == "magic"
