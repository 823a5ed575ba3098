import json

import numpy as np
import pytest

from nodulesynth.datasets import (
    ImageAnnotation,
    extract_nodule_patches,
    load_annotation,
    load_phantom_dataset,
    load_predictions,
    rasterize_contour,
    read_manifest,
    save_annotation,
    save_predictions,
    traditional_augment,
    write_manifest,
)
from nodulesynth.errors import ChecksumMismatch
from nodulesynth.froc import Box
from nodulesynth.masks import estimate_diameter


def test_cxr_image_rejects_mismatched_lung_mask():
    from nodulesynth.datasets import CxrImage
    from nodulesynth.errors import SizeMismatch

    with pytest.raises(SizeMismatch):
        CxrImage("x", np.zeros((64, 64), np.float32), lung_mask=np.zeros((32, 32), np.uint8))


def test_annotation_round_trip(tmp_path):
    ann = ImageAnnotation(
        "img1",
        boxes=[Box(1, 2, 10, 12), Box(30, 30, 40, 45)],
        contours=[np.array([[1.0, 2.0], [10.0, 2.0], [10.0, 12.0]]), np.array([[30.0, 30.0], [40.0, 30.0], [40.0, 45.0]])],
        diameters=[7.5, 11.0],
    )
    path = tmp_path / "a.json"
    save_annotation(path, ann)
    back = load_annotation(path)
    assert back.image_id == "img1"
    assert [b.as_list() for b in back.boxes] == [b.as_list() for b in ann.boxes]
    assert back.diameters == ann.diameters
    assert np.allclose(back.contours[0], ann.contours[0])


def test_predictions_round_trip(tmp_path):
    boxes = [Box(0, 0, 5, 5, score=0.8), Box(10, 10, 20, 20, score=0.3)]
    path = tmp_path / "p.json"
    save_predictions(path, "img9", boxes)
    image_id, back = load_predictions(path)
    assert image_id == "img9"
    assert [b.score for b in back] == [0.8, 0.3]
    obj = json.loads(path.read_text())
    assert set(obj) == {"image_id", "boxes", "scores"}


def test_rasterize_contour_square():
    contour = np.array([[2.0, 2.0], [9.0, 2.0], [9.0, 9.0], [2.0, 9.0]])
    mask = rasterize_contour(contour, (12, 12))
    assert mask[5, 5] == 1
    assert mask[0, 0] == 0
    assert mask.sum() >= 49


def test_manifest_detects_tampering(tmp_path):
    root = tmp_path / "ds"
    root.mkdir()
    (root / "x.txt").write_text("hello")
    write_manifest(root, {"kind": "test"})
    assert read_manifest(root)["files"]["x.txt"]
    (root / "x.txt").write_text("tampered")
    with pytest.raises(ChecksumMismatch):
        read_manifest(root)


def test_phantom_dataset_loads_and_verifies(phantom_dir):
    normals, nodules, shape_masks = load_phantom_dataset(phantom_dir)
    assert len(normals) == 4 and len(nodules) == 6
    for record in nodules:
        ann = record.annotation
        assert ann.boxes and ann.diameters and ann.contours
        for k, box in enumerate(ann.boxes):
            mask = shape_masks[record.image_id][k]
            # recorded diameter self-consistent with the mask estimator
            assert abs(estimate_diameter(mask) - ann.diameters[k]) <= 2.0
            # every nodule box sits inside the lung field
            lung_crop = record.lung_mask[
                int(box.y_min) : int(np.ceil(box.y_max)),
                int(box.x_min) : int(np.ceil(box.x_max)),
            ]
            assert lung_crop.all()


def test_contour_rasterization_matches_mask_diameter(phantom_dir):
    _, nodules, shape_masks = load_phantom_dataset(phantom_dir, verify=False)
    record = nodules[0]
    ann = record.annotation
    mask = shape_masks[record.image_id][0]
    raster = rasterize_contour(ann.contours[0], record.pixels.shape)
    assert abs(estimate_diameter(raster) - estimate_diameter(mask)) <= 2.0


def test_extract_nodule_patches(phantom_world):
    pairs = extract_nodule_patches(
        phantom_world["nodules"], phantom_world["shape_masks"], size=128
    )
    assert pairs
    for patch, mask in pairs:
        assert patch.shape == (128, 128) and mask.shape == (128, 128)
        assert mask.sum() > 0


class TestTraditionalAugment:
    def _sample(self):
        rng = np.random.default_rng(0)
        img = rng.random((64, 64)).astype(np.float32)
        ann = ImageAnnotation(
            "t", [Box(10, 20, 22, 30)], contours=[np.array([[10.0, 20.0], [22.0, 30.0]])],
            diameters=[9.0],
        )
        return img, ann

    def test_double_flip_is_identity(self):
        img, ann = self._sample()

        class AlwaysFlip:
            def random(self):
                return 0.0  # < p_flip -> flip

            def integers(self, *a, **k):
                return 0

        # force flip on, shift off
        out1, ann1, _ = traditional_augment(img, ann, AlwaysFlip(), p_flip=1.0, p_shift=0.0)
        out2, ann2, _ = traditional_augment(out1, ann1, AlwaysFlip(), p_flip=1.0, p_shift=0.0)
        assert np.array_equal(out2, img)
        assert ann2.boxes[0].as_list() == pytest.approx(ann.boxes[0].as_list())

    def test_shift_translates_boxes_exactly(self):
        img, ann = self._sample()

        class FixedShift:
            def __init__(self):
                self.calls = 0

            def random(self):
                self.calls += 1
                return 1.0 if self.calls == 1 else 0.0  # no flip, then shift

            def integers(self, lo, hi):
                return 5  # dy = dx = 5

        out, ann2, _ = traditional_augment(img, ann, FixedShift(), shift_max=8)
        assert ann2.boxes[0].as_list() == pytest.approx([15.0, 25.0, 27.0, 35.0])
        assert np.array_equal(out[5:, 5:], img[:-5, :-5])

    def test_mostly_clipped_box_dropped(self):
        img = np.random.default_rng(1).random((64, 64)).astype(np.float32)
        ann = ImageAnnotation("t", [Box(0, 0, 10, 10)], diameters=[8.0])

        class ShiftAway:
            def __init__(self):
                self.calls = 0

            def random(self):
                self.calls += 1
                return 1.0 if self.calls == 1 else 0.0

            def integers(self, lo, hi):
                return -8

        _, ann2, _ = traditional_augment(img, ann, ShiftAway(), shift_max=8)
        assert ann2.boxes == []  # area fell below half
        assert ann2.diameters == []

    def test_seeded_stream_reproducible(self):
        img, ann = self._sample()
        a = traditional_augment(img, ann, np.random.default_rng(42))
        b = traditional_augment(img, ann, np.random.default_rng(42))
        assert np.array_equal(a[0], b[0])
        assert [x.as_list() for x in a[1].boxes] == [x.as_list() for x in b[1].boxes]

    def test_masks_follow_image(self):
        img, ann = self._sample()
        mask = np.zeros_like(img, dtype=np.uint8)
        mask[20:30, 10:22] = 1
        out, _, masks = traditional_augment(
            img, ann, np.random.default_rng(7), masks=[mask]
        )
        assert masks[0].shape == mask.shape
        assert masks[0].sum() <= mask.sum()  # shift may clip, flip preserves
