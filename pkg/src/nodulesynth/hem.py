"""Hard-example-mined data augmentation for nodule detection.

One cycle: (1) run the pretrained detector over a mining set and split every
ground-truth nodule into detected/missed at the chosen operating point;
(2) collect the missed nodules' diameters into an empirical distribution;
(3) draw control diameters from that array and synthesize that many nodule
images (shape sample -> cleanup -> size modulation -> lung-guided crop ->
texture fill -> paste back), auto-annotating each synthetic nodule with the
tight box of its mask; (4) finetune the detector on real plus synthesized
images and report FROC summaries from before and after.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .datasets import CxrImage, ImageAnnotation, rasterize_contour
from .detector import Detector, DetectorConfig
from .errors import (
    EmptyDistribution,
    NoMissedNodules,
    NoValidCropLocation,
    ShapeTooLarge,
)
from .froc import Box, DetectionRecord, FrocSummary, froc_summary, match_detections, operating_threshold
from .imaging import crop_patch, from_network, paste_patch
from .masks import bounding_box, clean_mask, estimate_diameter, modulate_size, upsample_nn
from .shape_gan import ShapeGenerator, generate_shape, sample_latent
from .texture_gan import TextureGenerator, composite, synthesize_texture

logger = logging.getLogger(__name__)

PATCH_SIZE = 256


@dataclass
class AttributeDistribution:
    """Empirical distribution of one nodule attribute (currently: size)."""

    samples: np.ndarray
    attribute: str = "size"

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.size and self.samples.min() <= 0:
            raise ValueError("attribute samples must be positive")

    def histogram(self, bins: int = 10) -> dict:
        counts, edges = np.histogram(self.samples, bins=bins)
        return {"counts": counts.tolist(), "bin_edges": edges.tolist()}


@dataclass
class AugmentationPlan:
    """Everything needed to synthesize one batch of nodule images."""

    diameters: np.ndarray
    latent_seeds: list[int]
    normal_image_ids: list[str]

    def __post_init__(self):
        if len(self.diameters) < 1:
            raise ValueError("a plan needs at least one item")
        if not (len(self.diameters) == len(self.latent_seeds) == len(self.normal_image_ids)):
            raise ValueError("plan fields must have equal length")

    @property
    def n(self) -> int:
        return len(self.diameters)


def split_and_measure(
    records: list[DetectionRecord],
    annotations: dict[str, ImageAnnotation],
    mask_shape: tuple[int, int] | None = None,
) -> AttributeDistribution:
    """Collect the diameters of every missed ground-truth nodule.

    A missed nodule contributes its annotated diameter when present,
    otherwise the equivalent-ellipse diameter of its rasterized contour.
    Raises :class:`NoMissedNodules` when the detector caught everything
    (a valid outcome; callers fall back to the full annotated-size pool).
    """
    diameters: list[float] = []
    for record in records:
        ann = annotations[record.image_id]
        for gt_idx in record.missed_indices:
            if ann.diameters is not None and gt_idx < len(ann.diameters):
                diameters.append(float(ann.diameters[gt_idx]))
                continue
            if ann.contours is None or gt_idx >= len(ann.contours):
                raise ValueError(
                    f"{record.image_id}: ground truth {gt_idx} has neither diameter nor contour"
                )
            box = ann.boxes[gt_idx]
            shape = mask_shape or (
                int(math.ceil(box.y_max)) + 2,
                int(math.ceil(box.x_max)) + 2,
            )
            mask = rasterize_contour(ann.contours[gt_idx], shape)
            diameters.append(estimate_diameter(mask))
    if not diameters:
        raise NoMissedNodules("every ground-truth nodule was detected")
    return AttributeDistribution(np.asarray(diameters))


def annotated_size_pool(annotations: dict[str, ImageAnnotation]) -> AttributeDistribution:
    """Fallback distribution over all annotated diameters."""
    diameters = [
        float(d)
        for ann in annotations.values()
        for d in (ann.diameters or [])
    ]
    if not diameters:
        raise EmptyDistribution("no annotated diameters available for the fallback pool")
    return AttributeDistribution(np.asarray(diameters))


def sample_diameters(
    dist: AttributeDistribution, n: int, rng_seed: int = 0
) -> np.ndarray:
    """Uniform i.i.d. draws (with replacement) from the sample array."""
    if dist.samples.size == 0:
        raise EmptyDistribution("attribute distribution has no samples")
    if n < 1:
        raise ValueError(f"need at least one draw, got n={n}")
    rng = np.random.default_rng(rng_seed)
    return rng.choice(dist.samples, size=n, replace=True)


def build_plan(
    dist: AttributeDistribution,
    n: int,
    normal_ids: list[str],
    rng_seed: int = 0,
) -> AugmentationPlan:
    diameters = sample_diameters(dist, n, rng_seed)
    rng = np.random.default_rng(rng_seed + 1)
    return AugmentationPlan(
        diameters=diameters,
        latent_seeds=[int(s) for s in rng.integers(0, 2**31 - 1, size=n)],
        normal_image_ids=[normal_ids[int(i)] for i in rng.integers(0, len(normal_ids), size=n)],
    )


def _valid_patch_centers(
    lung: np.ndarray, mask_box: tuple[int, int, int, int], patch: int
) -> np.ndarray:
    """Centers where the patch window fits and the nodule box stays in lung.

    The nodule lands at the patch center, so a center is valid when the lung
    mask is solid across the whole nodule bounding box around it; that is an
    erosion of the lung field by the box extent, computed with a minimum
    filter.
    """
    r0, c0, r1, c1 = mask_box
    half_h, half_w = (r1 - r0) // 2 + 1, (c1 - c0) // 2 + 1
    fits_lung = ndimage.minimum_filter(
        lung.astype(np.uint8), size=(2 * half_h + 1, 2 * half_w + 1), mode="constant", cval=0
    ).astype(bool)
    h, w = lung.shape
    lo_r, hi_r = patch // 2, h - (patch - patch // 2)
    lo_c, hi_c = patch // 2, w - (patch - patch // 2)
    window_ok = np.zeros_like(fits_lung)
    if hi_r >= lo_r and hi_c >= lo_c:
        window_ok[lo_r : hi_r + 1, lo_c : hi_c + 1] = True
    return fits_lung & window_ok


def pick_crop_center(
    lung: np.ndarray,
    mask_box: tuple[int, int, int, int],
    rng: np.random.Generator,
    patch: int = PATCH_SIZE,
) -> tuple[int, int]:
    """Uniform draw over the valid patch centers for one shape placement."""
    ok = _valid_patch_centers(lung, mask_box, patch)
    centers = np.argwhere(ok)
    if centers.size == 0:
        raise NoValidCropLocation(
            f"no {patch}px window holds a {mask_box} shape inside the lung field"
        )
    cy, cx = centers[rng.integers(len(centers))]
    return int(cy), int(cx)


@dataclass
class SynthesizedItem:
    image: CxrImage
    annotation: ImageAnnotation
    diameter_target: float
    diameter_measured: float


def synthesize_augmentation_set(
    plan: AugmentationPlan,
    shape_generator: ShapeGenerator,
    texture_generator: TextureGenerator,
    normals: dict[str, CxrImage],
    composite_mode: bool = True,
    retry_cap: int = 50,
    mask_threshold: float = 0.5,
) -> list[SynthesizedItem]:
    """Render every plan item into a synthetic nodule image with annotations.

    A latent draw whose rescaled shape cannot fit (or whose host image has no
    valid crop center) is retried with a fresh latent up to ``retry_cap``
    times, then skipped with a log line.
    """
    items: list[SynthesizedItem] = []
    for idx in range(plan.n):
        target_d = float(plan.diameters[idx])
        host = normals[plan.normal_image_ids[idx]]
        if host.lung_mask is None:
            raise ValueError(f"normal image {host.image_id} has no lung mask")
        rng = np.random.default_rng(plan.latent_seeds[idx])
        placed = None
        for _attempt in range(retry_cap):
            try:
                prob = generate_shape(shape_generator, sample_latent(rng))
                mask_init = clean_mask(prob, mask_threshold)
                mask_up = upsample_nn(mask_init, PATCH_SIZE)
                mask_shape = modulate_size(mask_up, target_d, PATCH_SIZE)
                center = pick_crop_center(host.lung_mask, bounding_box(mask_shape), rng)
            except (ShapeTooLarge, NoValidCropLocation):
                continue  # a fresh latent changes the shape's footprint
            patch, origin = crop_patch(host.pixels, center, PATCH_SIZE)
            _, refined = synthesize_texture(texture_generator, patch, mask_shape)
            refined01 = from_network(refined)
            out_patch = composite(patch, mask_shape, refined01) if composite_mode else refined01
            placed = (out_patch, origin, mask_shape)
            break
        if placed is None:
            logger.warning(
                "skipping plan item %d (target %.1f px): no valid shape/placement "
                "within %d attempts", idx, target_d, retry_cap,
            )
            continue
        out_patch, origin, mask_shape = placed
        pixels = paste_patch(host.pixels, out_patch, origin)
        r0, c0, r1, c1 = bounding_box(mask_shape)
        abs_box = Box(
            float(origin[1] + c0), float(origin[0] + r0),
            float(origin[1] + c1), float(origin[0] + r1),
        )
        measured = estimate_diameter(mask_shape)
        image_id = f"synth_{idx:05d}"
        annotation = ImageAnnotation(image_id, [abs_box], diameters=[measured])
        items.append(
            SynthesizedItem(
                image=CxrImage(image_id, pixels, lung_mask=host.lung_mask),
                annotation=annotation,
                diameter_target=target_d,
                diameter_measured=measured,
            )
        )
    return items


@dataclass
class HemConfig:
    n_synthesized: int = 200
    iou_thresh: float = 0.2
    fp_target: float = 0.25      # operating point for the detected/missed split
    histogram_bins: int = 10
    composite_mode: bool = True
    retry_cap: int = 50
    seed: int = 0
    finetune: DetectorConfig | None = None


@dataclass
class HemReport:
    pre: FrocSummary
    post: FrocSummary
    histogram: dict
    diameters: list[float]
    conf_threshold: float
    n_real: int
    n_synthesized: int
    used_fallback_pool: bool

    def to_json(self) -> dict:
        return {
            "pre": self.pre.to_json(),
            "post": self.post.to_json(),
            "histogram": self.histogram,
            "diameters": self.diameters,
            "conf_threshold": self.conf_threshold,
            "n_real": self.n_real,
            "n_synthesized": self.n_synthesized,
            "used_fallback_pool": self.used_fallback_pool,
        }


def _evaluate(detector: Detector, images: list[CxrImage], iou_thresh: float) -> FrocSummary:
    records = []
    for img in images:
        preds = detector.predict(img.pixels)
        gts = img.annotation.boxes if img.annotation else []
        records.append(DetectionRecord(img.image_id, preds, gts, [False] * len(gts), 0))
    return froc_summary(records, iou_thresh=iou_thresh)


def run_hem_cycle(
    detector: Detector,
    real_train: list[CxrImage],
    mining_set: list[CxrImage],
    normals: list[CxrImage],
    eval_set: list[CxrImage],
    shape_generator: ShapeGenerator,
    texture_generator: TextureGenerator,
    cfg: HemConfig | None = None,
) -> tuple[Detector, HemReport]:
    """One full mine/sample/synthesize/finetune cycle.

    The caller decides what the mining set is (training images or a held-out
    split; both are legitimate usages). The detector must already be fitted.
    Classic augmentation (random shift and flip, p=0.5 each) stays active
    throughout finetuning via the detector config.
    """
    cfg = cfg or HemConfig()

    pre = _evaluate(detector, eval_set, cfg.iou_thresh)

    mining_preds = {img.image_id: detector.predict(img.pixels) for img in mining_set}
    raw_records = [
        DetectionRecord(
            img.image_id, mining_preds[img.image_id],
            img.annotation.boxes if img.annotation else [],
            [], 0,
        )
        for img in mining_set
    ]
    conf = operating_threshold(raw_records, cfg.fp_target, cfg.iou_thresh)
    conf = min(max(conf, 1e-6), 1.0 - 1e-6)
    records = [
        match_detections(
            mining_preds[img.image_id],
            img.annotation.boxes if img.annotation else [],
            cfg.iou_thresh,
            conf,
            img.image_id,
        )
        for img in mining_set
    ]
    annotations = {img.image_id: img.annotation for img in mining_set if img.annotation}

    used_fallback = False
    try:
        dist = split_and_measure(records, annotations)
    except NoMissedNodules:
        logger.warning("no missed nodules on the mining set; sampling all annotated sizes")
        dist = annotated_size_pool(annotations)
        used_fallback = True

    items: list[SynthesizedItem] = []
    diameters: list[float] = []
    if cfg.n_synthesized > 0:
        normal_by_id = {img.image_id: img for img in normals}
        plan = build_plan(dist, cfg.n_synthesized, sorted(normal_by_id), rng_seed=cfg.seed)
        diameters = [float(d) for d in plan.diameters]
        items = synthesize_augmentation_set(
            plan, shape_generator, texture_generator, normal_by_id,
            composite_mode=cfg.composite_mode, retry_cap=cfg.retry_cap,
        )

    finetune_images = [img.pixels for img in real_train] + [it.image.pixels for it in items]
    finetune_anns = [
        img.annotation or ImageAnnotation(img.image_id) for img in real_train
    ] + [it.annotation for it in items]
    detector.finetune(finetune_images, finetune_anns, cfg.finetune)

    post = _evaluate(detector, eval_set, cfg.iou_thresh)
    report = HemReport(
        pre=pre,
        post=post,
        histogram=dist.histogram(cfg.histogram_bins),
        diameters=diameters,
        conf_threshold=conf,
        n_real=len(real_train),
        n_synthesized=len(items),
        used_fallback_pool=used_fallback,
    )
    return detector, report
