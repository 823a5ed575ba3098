"""Dataset containers, annotation files, manifests, and classic augmentation.

Annotation schema (one JSON file per image)::

    {
      "image_id": "nodule_0003",
      "boxes": [[x_min, y_min, x_max, y_max], ...],
      "contours": [[[x, y], ...], ...],   # optional, one polygon per box
      "diameters": [d_px, ...]            # optional, one per box
    }

Prediction files reuse the same layout plus a parallel ``scores`` array.
Dataset manifests record a sha256 per file; loading verifies every checksum
and fails hard on any mismatch.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from skimage.draw import polygon as _sk_polygon

from .errors import ChecksumMismatch, SizeMismatch
from .froc import Box
from .imaging import atomic_write_text, crop_patch, load_image, load_mask

MANIFEST_NAME = "manifest.json"


@dataclass
class ImageAnnotation:
    image_id: str
    boxes: list[Box] = field(default_factory=list)
    contours: list[np.ndarray] | None = None  # (k, 2) arrays of (x, y)
    diameters: list[float] | None = None

    def to_json(self) -> dict:
        obj: dict = {
            "image_id": self.image_id,
            "boxes": [b.as_list() for b in self.boxes],
        }
        if self.contours is not None:
            obj["contours"] = [np.asarray(c, dtype=float).tolist() for c in self.contours]
        if self.diameters is not None:
            obj["diameters"] = [float(d) for d in self.diameters]
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "ImageAnnotation":
        contours = obj.get("contours")
        return cls(
            image_id=obj["image_id"],
            boxes=[Box(*map(float, b)) for b in obj["boxes"]],
            contours=None if contours is None else [np.asarray(c, dtype=float) for c in contours],
            diameters=None if obj.get("diameters") is None else [float(d) for d in obj["diameters"]],
        )


@dataclass
class CxrImage:
    """A full chest image with optional lung mask and annotation."""

    image_id: str
    pixels: np.ndarray  # float32 in [0, 1]
    lung_mask: np.ndarray | None = None
    annotation: ImageAnnotation | None = None

    def __post_init__(self):
        if self.lung_mask is not None and self.lung_mask.shape != self.pixels.shape:
            raise SizeMismatch(
                f"lung mask {self.lung_mask.shape} vs image {self.pixels.shape}"
            )


def save_annotation(path: str | Path, ann: ImageAnnotation) -> None:
    atomic_write_text(path, json.dumps(ann.to_json(), sort_keys=True, indent=1))


def load_annotation(path: str | Path) -> ImageAnnotation:
    with open(path) as fh:
        return ImageAnnotation.from_json(json.load(fh))


def save_predictions(path: str | Path, image_id: str, boxes: list[Box]) -> None:
    obj = {
        "image_id": image_id,
        "boxes": [b.as_list() for b in boxes],
        "scores": [float(b.score or 0.0) for b in boxes],
    }
    atomic_write_text(path, json.dumps(obj, sort_keys=True, indent=1))


def load_predictions(path: str | Path) -> tuple[str, list[Box]]:
    with open(path) as fh:
        obj = json.load(fh)
    boxes = [
        Box(*map(float, b), score=float(s))
        for b, s in zip(obj["boxes"], obj["scores"])
    ]
    return obj["image_id"], boxes


def rasterize_contour(contour_xy: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Fill a polygon given as (x, y) vertices into a binary mask."""
    pts = np.asarray(contour_xy, dtype=float)
    rr, cc = _sk_polygon(pts[:, 1], pts[:, 0], shape=shape)
    mask = np.zeros(shape, dtype=np.uint8)
    mask[rr, cc] = 1
    return mask


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(root: str | Path, meta: dict) -> dict:
    """Checksum every file under ``root`` and write the manifest JSON."""
    root = Path(root)
    files = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name != MANIFEST_NAME:
            files[str(p.relative_to(root))] = sha256_file(p)
    manifest = dict(meta)
    manifest["files"] = files
    atomic_write_text(root / MANIFEST_NAME, json.dumps(manifest, sort_keys=True, indent=1))
    return manifest


def read_manifest(root: str | Path, verify: bool = True) -> dict:
    root = Path(root)
    with open(root / MANIFEST_NAME) as fh:
        manifest = json.load(fh)
    if verify:
        for rel, digest in manifest["files"].items():
            actual = sha256_file(root / rel)
            if actual != digest:
                raise ChecksumMismatch(f"{rel}: manifest {digest[:12]}.. != file {actual[:12]}..")
    return manifest


def load_phantom_dataset(
    root: str | Path, verify: bool = True
) -> tuple[list[CxrImage], list[CxrImage], dict[str, list[np.ndarray]]]:
    """Load a generated dataset directory.

    Returns (normals, nodule images, shape masks per nodule image id). Lung
    masks and annotations are attached to the :class:`CxrImage` records.
    """
    root = Path(root)
    read_manifest(root, verify=verify)
    normals: list[CxrImage] = []
    nodules: list[CxrImage] = []
    shape_masks: dict[str, list[np.ndarray]] = {}
    for img_path in sorted((root / "images").glob("*.png")):
        image_id = img_path.stem
        pixels = load_image(img_path)
        lung = load_mask(root / "lung_masks" / f"{image_id}.png")
        ann = load_annotation(root / "annotations" / f"{image_id}.json")
        record = CxrImage(image_id=image_id, pixels=pixels, lung_mask=lung, annotation=ann)
        if ann.boxes:
            nodules.append(record)
            masks = []
            for k in range(len(ann.boxes)):
                masks.append(load_mask(root / "nodule_masks" / f"{image_id}_{k}.png"))
            shape_masks[image_id] = masks
        else:
            normals.append(record)
    return normals, nodules, shape_masks


def extract_nodule_patches(
    nodules: list[CxrImage],
    shape_masks: dict[str, list[np.ndarray]],
    size: int = 256,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Cut patches centered on each annotated box, paired with shape masks.

    Boxes too close to the border for a full window are skipped. The mask
    patch is cropped from the full-size shape mask at the same window.
    """
    pairs: list[tuple[np.ndarray, np.ndarray]] = []
    for record in nodules:
        ann = record.annotation
        if ann is None:
            continue
        for k, box in enumerate(ann.boxes):
            center = (
                int(round((box.y_min + box.y_max) / 2)),
                int(round((box.x_min + box.x_max) / 2)),
            )
            try:
                patch, origin = crop_patch(record.pixels, center, size)
            except Exception:
                continue
            mask_full = shape_masks[record.image_id][k]
            mask_patch = mask_full[
                origin[0] : origin[0] + size, origin[1] : origin[1] + size
            ].copy()
            if mask_patch.sum() == 0:
                continue
            pairs.append((patch, mask_patch))
    return pairs


def _flip_annotation(ann: ImageAnnotation, width: int) -> ImageAnnotation:
    boxes = [
        Box(width - b.x_max, b.y_min, width - b.x_min, b.y_max, b.score)
        for b in ann.boxes
    ]
    contours = None
    if ann.contours is not None:
        contours = [np.stack([width - c[:, 0], c[:, 1]], axis=1) for c in ann.contours]
    return ImageAnnotation(ann.image_id, boxes, contours, ann.diameters)


def _shift_image(arr: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(arr)
    h, w = arr.shape
    ys = slice(max(dy, 0), min(h + dy, h))
    xs = slice(max(dx, 0), min(w + dx, w))
    ys_src = slice(max(-dy, 0), min(h - dy, h))
    xs_src = slice(max(-dx, 0), min(w - dx, w))
    out[ys, xs] = arr[ys_src, xs_src]
    return out


def traditional_augment(
    image: np.ndarray,
    annotation: ImageAnnotation,
    rng: np.random.Generator,
    masks: list[np.ndarray] | None = None,
    p_flip: float = 0.5,
    p_shift: float = 0.5,
    shift_max: int = 16,
) -> tuple[np.ndarray, ImageAnnotation, list[np.ndarray] | None]:
    """Random horizontal flip and integer shift, applied consistently.

    The same transform hits the image, every mask, every box, and every
    contour. Boxes clipped by a shift are dropped when less than half of
    their area remains inside the frame (their contours and diameters drop
    with them).
    """
    h, w = image.shape
    img = image
    ann = annotation
    out_masks = None if masks is None else [m for m in masks]

    if rng.random() < p_flip:
        img = img[:, ::-1].copy()
        ann = _flip_annotation(ann, w)
        if out_masks is not None:
            out_masks = [m[:, ::-1].copy() for m in out_masks]

    if rng.random() < p_shift and shift_max > 0:
        dy = int(rng.integers(-shift_max, shift_max + 1))
        dx = int(rng.integers(-shift_max, shift_max + 1))
        img = _shift_image(img, dy, dx)
        if out_masks is not None:
            out_masks = [_shift_image(m, dy, dx) for m in out_masks]
        boxes, keep = [], []
        for i, b in enumerate(ann.boxes):
            x0, x1 = b.x_min + dx, b.x_max + dx
            y0, y1 = b.y_min + dy, b.y_max + dy
            cx0, cx1 = max(x0, 0.0), min(x1, float(w))
            cy0, cy1 = max(y0, 0.0), min(y1, float(h))
            if cx1 - cx0 <= 0 or cy1 - cy0 <= 0:
                continue
            if (cx1 - cx0) * (cy1 - cy0) < 0.5 * b.area:
                continue
            boxes.append(Box(cx0, cy0, cx1, cy1, b.score))
            keep.append(i)
        contours = None
        if ann.contours is not None:
            contours = [
                np.stack([ann.contours[i][:, 0] + dx, ann.contours[i][:, 1] + dy], axis=1)
                for i in keep
            ]
        diameters = None
        if ann.diameters is not None:
            diameters = [ann.diameters[i] for i in keep]
        ann = ImageAnnotation(ann.image_id, boxes, contours, diameters)

    return img, ann, out_masks
