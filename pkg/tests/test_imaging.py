import numpy as np
import pytest

from nodulesynth.errors import OutOfBounds
from nodulesynth.imaging import (
    crop_patch,
    from_network,
    load_image,
    load_mask,
    paste_patch,
    save_image,
    save_mask,
    to_network,
)


def test_intensity_round_trip():
    rng = np.random.default_rng(0)
    x = rng.random((16, 16)).astype(np.float32)
    assert np.allclose(from_network(to_network(x)), x, atol=1e-6)
    assert to_network(np.ones((2, 2))).max() == 1.0
    assert to_network(np.zeros((2, 2))).min() == -1.0


def test_image_png_round_trip_16bit(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.random((48, 64)).astype(np.float32)
    path = tmp_path / "img.png"
    save_image(path, img)
    back = load_image(path)
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 1.0 / 65535 + 1e-9


def test_mask_png_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    mask = (rng.random((32, 32)) > 0.5).astype(np.uint8)
    path = tmp_path / "mask.png"
    save_mask(path, mask)
    assert np.array_equal(load_mask(path), mask)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    save_image(tmp_path / "a.png", np.zeros((8, 8)))
    leftovers = [p for p in tmp_path.iterdir() if p.suffix == ".tmp"]
    assert leftovers == []


class TestCropPaste:
    def test_center_crop_origin(self):
        img = np.random.default_rng(3).random((1024, 1024)).astype(np.float32)
        patch, origin = crop_patch(img, (512, 512), 256)
        assert patch.shape == (256, 256)
        assert origin == (384, 384)

    def test_round_trip_bit_exact(self):
        img = np.random.default_rng(4).random((400, 400)).astype(np.float32)
        patch, origin = crop_patch(img, (200, 130), 256)
        assert np.array_equal(paste_patch(img, patch, origin), img)

    def test_near_edge_rejected(self):
        img = np.zeros((300, 300), np.float32)
        with pytest.raises(OutOfBounds):
            crop_patch(img, (10, 150), 256)

    def test_paste_outside_window_untouched(self):
        img = np.random.default_rng(5).random((300, 300)).astype(np.float32)
        out = paste_patch(img, np.zeros((64, 64), np.float32), (20, 30))
        assert out[20:84, 30:94].sum() == 0.0
        untouched = np.ones_like(img, dtype=bool)
        untouched[20:84, 30:94] = False
        assert np.array_equal(out[untouched], img[untouched])

    def test_paste_at_origin_zero(self):
        img = np.ones((100, 100), np.float32)
        out = paste_patch(img, np.zeros((10, 10), np.float32), (0, 0))
        assert out[:10, :10].sum() == 0.0

    def test_double_paste_last_wins(self):
        img = np.zeros((100, 100), np.float32)
        a = np.full((20, 20), 0.25, np.float32)
        b = np.full((20, 20), 0.75, np.float32)
        out = paste_patch(paste_patch(img, a, (10, 10)), b, (20, 20))
        assert out[25, 25] == 0.75

    def test_paste_out_of_bounds(self):
        with pytest.raises(OutOfBounds):
            paste_patch(np.zeros((50, 50)), np.zeros((20, 20)), (40, 40))
