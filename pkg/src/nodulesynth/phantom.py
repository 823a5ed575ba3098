"""Procedural chest-phantom generator.

Stands in for clinical data so the whole pipeline (shape GAN, texture GAN,
detector, mining loop) can train and be tested at desk scale. A phantom is a
smooth anatomical caricature: a bright central column, two darker elliptical
lung fields, tilted sinusoidal rib bands, and correlated noise. Nodules are
radial-Fourier blobs blended in with a soft intensity bump; their shape
masks, boxes, contours, and measured diameters are emitted as ground truth.

Everything is driven by `numpy` Generator streams keyed on (seed, kind,
index), so a given config produces byte-identical files on every run.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.special import expit

from .datasets import ImageAnnotation, save_annotation, write_manifest
from .froc import Box
from .imaging import save_image, save_mask
from .masks import estimate_diameter

_NORMAL_STREAM, _NODULE_STREAM = 0, 1


@dataclass
class PhantomConfig:
    image_size: int = 1024
    rib_count: int = 9
    rib_amplitude: float = 0.045
    rib_tilt: float = 0.18
    lung_offset_frac: float = 0.22      # lung centers at +-offset from midline
    lung_width_frac: float = 0.17       # ellipse semi-axes as image fractions
    lung_height_frac: float = 0.32
    lung_center_y_frac: float = 0.47
    lung_darkening: float = 0.16
    nodule_amplitude: tuple[float, float] = (0.14, 0.30)
    nodule_softness: float = 0.30       # bump blur sigma relative to radius
    contour_order: int = 5
    contour_irregularity: float = 0.10
    diameter_range: tuple[float, float] = (30.0, 100.0)
    nodules_per_image: tuple[int, int] = (1, 2)
    noise_sigma: float = 0.012
    seed: int = 0

    def to_json(self) -> dict:
        return asdict(self)


def _rng(cfg: PhantomConfig, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, stream, index])


def make_normal(cfg: PhantomConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Build one nodule-free phantom and its binary lung mask."""
    s = cfg.image_size
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float32)
    cx = s / 2.0

    # bright central column over a gentle vertical gradient
    img = 0.42 + 0.06 * (yy / s) + 0.16 * np.exp(-(((xx - cx) / (0.16 * s)) ** 2))

    # low-frequency random field for per-image variation
    coarse = rng.normal(0.0, 1.0, size=(6, 6)).astype(np.float32)
    field_l = ndimage.zoom(coarse, s / 6.0, order=3)[:s, :s]
    img += 0.03 * field_l

    # lung fields: two soft-edged ellipses, darker than the surroundings
    cy = cfg.lung_center_y_frac * s
    a, b = cfg.lung_width_frac * s, cfg.lung_height_frac * s
    lung = np.zeros((s, s), dtype=np.uint8)
    for side in (-1.0, 1.0):
        ex = cx + side * cfg.lung_offset_frac * s
        e = (((xx - ex) / a) ** 2 + ((yy - cy) / b) ** 2).astype(np.float32)
        img -= cfg.lung_darkening * expit((1.0 - e) * 12.0)
        lung |= (e <= 1.0).astype(np.uint8)

    # tilted rib bands, stronger inside the thorax
    period = s / max(cfg.rib_count, 1)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    bands = np.sin(2.0 * np.pi * (yy + cfg.rib_tilt * np.abs(xx - cx)) / period + phase)
    img += cfg.rib_amplitude * np.clip(bands, 0.0, None) ** 2

    noise = rng.normal(0.0, cfg.noise_sigma, size=(s, s)).astype(np.float32)
    img += ndimage.gaussian_filter(noise, 1.0)
    return np.clip(img, 0.02, 0.98).astype(np.float32), lung


def make_shape_mask(
    rng: np.random.Generator,
    diameter: float,
    order: int = 5,
    irregularity: float = 0.10,
) -> tuple[np.ndarray, np.ndarray]:
    """Radial-Fourier blob with roughly the requested diameter.

    Returns the rasterized mask on a tight canvas plus the generating
    polygon as (x, y) vertices in canvas coordinates.
    """
    radius = diameter / 2.0
    coeffs = []
    for m in range(2, order + 1):
        scale = irregularity / np.sqrt(m - 1)
        coeffs.append((m, rng.normal(0.0, scale), rng.normal(0.0, scale)))
    theta = np.linspace(0.0, 2.0 * np.pi, 128, endpoint=False)
    rad = np.full_like(theta, 1.0)
    for m, am, bm in coeffs:
        rad += am * np.cos(m * theta) + bm * np.sin(m * theta)
    rad = radius * np.clip(rad, 0.35, 1.9)

    r_max = float(rad.max())
    canvas = int(np.ceil(2.0 * r_max)) + 5
    c0 = canvas / 2.0
    poly_x = c0 + rad * np.cos(theta)
    poly_y = c0 + rad * np.sin(theta)

    yy, xx = np.mgrid[0:canvas, 0:canvas].astype(np.float64)
    ang = np.arctan2(yy - c0, xx - c0)
    rho = np.hypot(yy - c0, xx - c0)
    boundary = np.interp(np.mod(ang, 2.0 * np.pi), theta, rad, period=2.0 * np.pi)
    mask = (rho <= boundary).astype(np.uint8)
    return mask, np.stack([poly_x, poly_y], axis=1)


def _valid_centers(lung: np.ndarray, half_h: int, half_w: int, margin: int) -> np.ndarray:
    """Boolean grid of centers whose nodule box stays inside the lung field."""
    fit = ndimage.minimum_filter(
        lung, size=(2 * half_h + 1, 2 * half_w + 1), mode="constant", cval=0
    ).astype(bool)
    s = lung.shape[0]
    border = np.zeros_like(fit)
    m = max(margin, max(half_h, half_w) + 1)
    border[m : s - m, m : s - m] = True
    return fit & border


def add_nodule(
    image: np.ndarray,
    lung: np.ndarray,
    cfg: PhantomConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, Box, np.ndarray, float] | None:
    """Blend one nodule into the image; None if no placement is possible.

    Returns (new image, full-size shape mask, box, contour, measured diameter).
    """
    s = cfg.image_size
    for _ in range(8):
        d = rng.uniform(*cfg.diameter_range)
        blob, poly = make_shape_mask(rng, d, cfg.contour_order, cfg.contour_irregularity)
        bh, bw = blob.shape
        ok = _valid_centers(lung, bh // 2 + 1, bw // 2 + 1, margin=4)
        coords = np.argwhere(ok)
        if coords.size == 0:
            continue
        cy, cx = coords[rng.integers(len(coords))]
        r0, c0 = int(cy - bh // 2), int(cx - bw // 2)

        full_mask = np.zeros((s, s), dtype=np.uint8)
        full_mask[r0 : r0 + bh, c0 : c0 + bw] = blob
        amp = rng.uniform(*cfg.nodule_amplitude)
        bump = ndimage.gaussian_filter(
            full_mask.astype(np.float32), cfg.nodule_softness * d / 2.0
        )
        peak = float(bump.max())
        if peak <= 0:
            continue
        out = np.clip(image + amp * bump / peak, 0.02, 0.98).astype(np.float32)

        rows = np.flatnonzero(full_mask.any(axis=1))
        cols = np.flatnonzero(full_mask.any(axis=0))
        box = Box(float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1))
        contour = poly + np.array([c0, r0], dtype=float)
        return out, full_mask, box, contour, estimate_diameter(full_mask)
    return None


def generate_phantom_dataset(
    cfg: PhantomConfig,
    n_normal: int,
    n_nodule: int,
    out_dir: str | Path,
) -> dict:
    """Write a fully annotated phantom dataset and its checksum manifest."""
    out = Path(out_dir)
    for sub in ("images", "lung_masks", "nodule_masks", "annotations"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    for i in range(n_normal):
        rng = _rng(cfg, _NORMAL_STREAM, i)
        image_id = f"normal_{i:04d}"
        img, lung = make_normal(cfg, rng)
        save_image(out / "images" / f"{image_id}.png", img)
        save_mask(out / "lung_masks" / f"{image_id}.png", lung)
        save_annotation(out / "annotations" / f"{image_id}.json", ImageAnnotation(image_id))

    for i in range(n_nodule):
        rng = _rng(cfg, _NODULE_STREAM, i)
        image_id = f"nodule_{i:04d}"
        img, lung = make_normal(cfg, rng)
        count = int(rng.integers(cfg.nodules_per_image[0], cfg.nodules_per_image[1] + 1))
        boxes, contours, diameters = [], [], []
        k = 0
        for _ in range(count):
            placed = add_nodule(img, lung, cfg, rng)
            if placed is None:
                continue
            img, mask, box, contour, diameter = placed
            save_mask(out / "nodule_masks" / f"{image_id}_{k}.png", mask)
            boxes.append(box)
            contours.append(contour)
            diameters.append(diameter)
            k += 1
        save_image(out / "images" / f"{image_id}.png", img)
        save_mask(out / "lung_masks" / f"{image_id}.png", lung)
        save_annotation(
            out / "annotations" / f"{image_id}.json",
            ImageAnnotation(image_id, boxes, contours, diameters),
        )

    meta = {
        "kind": "phantom-cxr",
        "seed": cfg.seed,
        "n_normal": n_normal,
        "n_nodule": n_nodule,
        "config": cfg.to_json(),
    }
    return write_manifest(out, meta)


def phantom_world_in_memory(
    cfg: PhantomConfig, n_normal: int, n_nodule: int
) -> tuple[list, list, dict[str, list[np.ndarray]]]:
    """Same content as :func:`generate_phantom_dataset`, without touching disk.

    Returns (normals, nodule images, shape masks by image id) as
    :class:`~nodulesynth.datasets.CxrImage` records; identical rng streams to
    the on-disk generator.
    """
    from .datasets import CxrImage

    normals, nodules = [], []
    shape_masks: dict[str, list[np.ndarray]] = {}
    for i in range(n_normal):
        rng = _rng(cfg, _NORMAL_STREAM, i)
        image_id = f"normal_{i:04d}"
        img, lung = make_normal(cfg, rng)
        normals.append(
            CxrImage(image_id, img, lung_mask=lung, annotation=ImageAnnotation(image_id))
        )
    for i in range(n_nodule):
        rng = _rng(cfg, _NODULE_STREAM, i)
        image_id = f"nodule_{i:04d}"
        img, lung = make_normal(cfg, rng)
        count = int(rng.integers(cfg.nodules_per_image[0], cfg.nodules_per_image[1] + 1))
        boxes, contours, diameters, masks = [], [], [], []
        for _ in range(count):
            placed = add_nodule(img, lung, cfg, rng)
            if placed is None:
                continue
            img, mask, box, contour, diameter = placed
            boxes.append(box)
            contours.append(contour)
            diameters.append(diameter)
            masks.append(mask)
        ann = ImageAnnotation(image_id, boxes, contours, diameters)
        nodules.append(CxrImage(image_id, img, lung_mask=lung, annotation=ann))
        shape_masks[image_id] = masks
    return normals, nodules, shape_masks


def random_shape_corpus(
    n: int,
    seed: int = 0,
    diameter_range: tuple[float, float] = (40.0, 110.0),
    order: int = 5,
    irregularity: float = 0.10,
) -> list[np.ndarray]:
    """Standalone corpus of procedural shape masks (for GAN training/tests)."""
    out = []
    for i in range(n):
        rng = np.random.default_rng([seed, 7, i])
        d = rng.uniform(*diameter_range)
        mask, _ = make_shape_mask(rng, d, order, irregularity)
        out.append(mask)
    return out
