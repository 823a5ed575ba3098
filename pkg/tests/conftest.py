import numpy as np
import pytest
import torch

from nodulesynth.datasets import extract_nodule_patches
from nodulesynth.phantom import (
    PhantomConfig,
    generate_phantom_dataset,
    phantom_world_in_memory,
    random_shape_corpus,
)

torch.set_num_threads(2)


def rasterized_disk(radius: int, size: int = 128, center=None) -> np.ndarray:
    cy, cx = center or (size // 2, size // 2)
    yy, xx = np.mgrid[0:size, 0:size]
    return (((yy - cy) ** 2 + (xx - cx) ** 2) <= radius * radius).astype(np.uint8)


def brute_force_diameter(mask: np.ndarray) -> float:
    """Independent oracle: population covariance of pixel coordinates."""
    pts = np.argwhere(mask > 0).astype(np.float64)
    if pts.shape[0] == 1:
        return 0.0
    cov = np.cov(pts.T, bias=True)
    lam = np.clip(np.linalg.eigvalsh(cov), 0.0, None)
    return float((4.0 * np.sqrt(lam[1]) + 4.0 * np.sqrt(lam[0])) / 2.0)


@pytest.fixture(scope="session")
def shape_corpus():
    return random_shape_corpus(32, seed=5, diameter_range=(40.0, 110.0))


@pytest.fixture(scope="session")
def phantom_dir(tmp_path_factory):
    """Small on-disk dataset (for IO/manifest/CLI paths)."""
    out = tmp_path_factory.mktemp("phantom") / "data"
    cfg = PhantomConfig(
        image_size=320, diameter_range=(18, 56), nodule_amplitude=(0.14, 0.32), seed=3
    )
    generate_phantom_dataset(cfg, 4, 6, out)
    return out


@pytest.fixture(scope="session")
def phantom_world():
    """In-memory 384px world: room for 256px crop windows inside the lungs."""
    cfg = PhantomConfig(
        image_size=384, diameter_range=(18, 52), nodule_amplitude=(0.12, 0.30), seed=9
    )
    normals, nodules, shape_masks = phantom_world_in_memory(cfg, 6, 12)
    return {"normals": normals, "nodules": nodules, "shape_masks": shape_masks}


@pytest.fixture(scope="session")
def nodule_patch_pairs():
    """256px nodule patches + masks cut from larger phantoms."""
    cfg = PhantomConfig(
        image_size=512, diameter_range=(24, 80), nodule_amplitude=(0.15, 0.32), seed=21
    )
    _, nodules, shape_masks = phantom_world_in_memory(cfg, 0, 16)
    pairs = extract_nodule_patches(nodules, shape_masks, size=256)
    assert len(pairs) >= 16, "phantom dataset produced too few croppable patches"
    return pairs[:16]
