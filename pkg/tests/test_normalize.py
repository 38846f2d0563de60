"""Tests for rubber-sheet unwrapping, vertical resizing, and image file I/O."""

import numpy as np
import pytest

from irismatch.iris_io import (FileFormatError, read_image, read_iris_raw, read_pgm,
                               write_iris_raw, write_pgm)
from irismatch.normalize import EyeCircles, resize_vertical, rubber_sheet


def render_eye(size, fn):
    """Evaluate fn(x, y) on a size x size pixel grid."""
    ys, xs = np.mgrid[0:size, 0:size].astype(float)
    return fn(xs, ys)


CONCENTRIC = EyeCircles(64, 64, 20, 64, 64, 55)


# ---------------------------------------------------------------- rubber_sheet


def test_radial_function_gives_constant_rows():
    img = render_eye(128, lambda x, y: np.hypot(x - 64, y - 64) / 91.0)
    out = rubber_sheet(img, CONCENTRIC, height=20, width=64)
    spread = out.max(axis=1) - out.min(axis=1)
    assert np.max(spread) < 1e-3


def test_bright_dot_lands_at_expected_cell():
    H, W = 40, 128
    r_mid = 0.5 * (CONCENTRIC.pupil_r + CONCENTRIC.iris_r)
    dot_x = 64 + r_mid * np.cos(np.pi / 2)
    dot_y = 64 + r_mid * np.sin(np.pi / 2)
    img = render_eye(128, lambda x, y: np.exp(-((x - dot_x) ** 2 + (y - dot_y) ** 2) / 4.0))
    out = rubber_sheet(img, CONCENTRIC, height=H, width=W)
    row, col = np.unravel_index(np.argmax(out), out.shape)
    assert abs(col - W // 4) <= 1
    assert abs(row - (H - 1) / 2) <= 1


def test_output_shape_default_geometry():
    img = render_eye(192, lambda x, y: (x + y) / 384.0)
    circles = EyeCircles(96, 96, 25, 96, 96, 80)
    out = rubber_sheet(img, circles)
    assert out.shape == (110, 512)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_rubber_sheet_rescales_to_unit_interval():
    img = render_eye(128, lambda x, y: 40.0 + 20.0 * np.sin(x / 9.0) * np.cos(y / 7.0))
    out = rubber_sheet(img, CONCENTRIC, height=16, width=64)
    assert out.min() == 0.0
    assert out.max() == 1.0


def test_constant_image_gives_zeros():
    img = np.full((128, 128), 7.0)
    out = rubber_sheet(img, CONCENTRIC, height=8, width=32)
    assert np.all(out == 0.0)


def test_circle_validation_errors():
    img = np.zeros((128, 128))
    with pytest.raises(ValueError, match="radius"):
        rubber_sheet(img, EyeCircles(64, 64, 30, 64, 64, 20))
    with pytest.raises(ValueError, match="degenerate"):
        rubber_sheet(img, EyeCircles(64, 64, 0, 64, 64, 20))
    with pytest.raises(ValueError, match="outside"):
        rubber_sheet(img, EyeCircles(64, 64, 20, 64, 64, 80))
    with pytest.raises(ValueError, match="contained"):
        rubber_sheet(img, EyeCircles(30, 64, 20, 64, 64, 50))


def test_dilation_invariance():
    # the same continuous scene rendered at 1x and 2x unwraps to the same rectangle
    def scene(x, y, scale):
        return 0.5 + 0.4 * np.sin(np.hypot(x - 64 * scale, y - 64 * scale) / (12.0 * scale)) \
            * np.cos(np.arctan2(y - 64 * scale, x - 64 * scale) * 2)

    img1 = render_eye(128, lambda x, y: scene(x, y, 1))
    img2 = render_eye(256, lambda x, y: scene(x, y, 2))
    c2 = EyeCircles(128, 128, 40, 128, 128, 110)
    out1 = rubber_sheet(img1, CONCENTRIC, height=24, width=96)
    out2 = rubber_sheet(img2, c2, height=24, width=96)
    assert np.max(np.abs(out1 - out2)) < 1e-3


def test_rotation_shifts_columns():
    W = 128
    delta = 2.0 * np.pi * 10 / W  # exactly 10 columns

    def scene(x, y, rot):
        ang = np.arctan2(y - 64, x - 64) - rot
        rad = np.hypot(x - 64, y - 64)
        return 0.5 + 0.25 * np.cos(5 * ang) + 0.2 * np.sin(rad / 5.0)

    out0 = rubber_sheet(render_eye(128, lambda x, y: scene(x, y, 0.0)),
                        CONCENTRIC, height=16, width=W)
    out1 = rubber_sheet(render_eye(128, lambda x, y: scene(x, y, delta)),
                        CONCENTRIC, height=16, width=W)
    best = min(range(-2, 3), key=lambda s: np.abs(np.roll(out0, 10 + s, axis=1) - out1).max())
    assert abs(best) <= 1
    assert np.abs(np.roll(out0, 10 + best, axis=1) - out1).max() < 0.05


# ---------------------------------------------------------------- resize


def test_resize_two_rows_to_three():
    img = np.array([[0.0], [1.0]])
    out = resize_vertical(img, 3)
    assert np.allclose(out[:, 0], [0.0, 0.5, 1.0])


def test_resize_identity():
    rng = np.random.default_rng(70)
    img = rng.uniform(size=(11, 7))
    assert np.array_equal(resize_vertical(img, 11), img)


def test_resize_64_to_110_preserves_monotonicity():
    rng = np.random.default_rng(71)
    cols = np.sort(rng.uniform(size=(64, 9)), axis=0)
    out = resize_vertical(cols, 110)
    assert out.shape == (110, 9)
    assert np.all(np.diff(out, axis=0) >= -1e-15)


def test_resize_preserves_column_bounds():
    rng = np.random.default_rng(72)
    img = rng.uniform(size=(9, 5))
    out = resize_vertical(img, 23)
    assert np.all(out.max(axis=0) <= img.max(axis=0) + 1e-15)
    assert np.all(out.min(axis=0) >= img.min(axis=0) - 1e-15)
    assert np.allclose(out[0], img[0]) and np.allclose(out[-1], img[-1])


def test_resize_target_too_small():
    with pytest.raises(ValueError):
        resize_vertical(np.zeros((4, 4)), 1)


# ---------------------------------------------------------------- file I/O


def test_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(73)
    img = rng.uniform(size=(6, 9))
    path = tmp_path / "img.pgm"
    write_pgm(path, img)
    back = read_pgm(path)
    assert back.shape == img.shape
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12


def test_pgm_with_comment(tmp_path):
    path = tmp_path / "c.pgm"
    body = bytes(range(6))
    path.write_bytes(b"P5\n# a comment\n3 2\n255\n" + body)
    img = read_pgm(path)
    assert img.shape == (2, 3)
    assert np.allclose(img, np.arange(6).reshape(2, 3) / 255)


def test_pgm_rejects_bad_files(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P6\n1 1\n255\n\x00")
    with pytest.raises(FileFormatError):
        read_pgm(path)
    path.write_bytes(b"P5\n4 4\n255\n\x00\x00")
    with pytest.raises(FileFormatError, match="truncated"):
        read_pgm(path)


def test_iris_raw_round_trip(tmp_path):
    rng = np.random.default_rng(74)
    img = rng.uniform(size=(5, 8)).astype(np.float32).astype(np.float64)
    path = tmp_path / "a.iris"
    write_iris_raw(path, img)
    back = read_iris_raw(path)
    assert np.array_equal(back, img)  # float32 values survive exactly
    with open(path, "rb") as fh:
        assert fh.readline() == b"IRIS 5 8\n"


def test_read_image_sniffs_formats(tmp_path):
    img = np.random.default_rng(75).uniform(size=(4, 6))
    p1 = tmp_path / "x.pgm"
    p2 = tmp_path / "x.iris"
    write_pgm(p1, img)
    write_iris_raw(p2, img)
    assert read_image(p1).shape == (4, 6)
    assert read_image(p2).shape == (4, 6)
    p3 = tmp_path / "x.bin"
    p3.write_bytes(b"JUNKDATA")
    with pytest.raises(FileFormatError):
        read_image(p3)
