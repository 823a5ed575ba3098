"""Image-quality metrics: MAE, PSNR, SSIM, and Fréchet feature distance.

Each pixel metric runs over the full patch or, given a region mask, over its
foreground only. SSIM needs spatial support, so the masked variant evaluates
the mask's bounding box with the usual 11x11 Gaussian window (shrunk for
tiny boxes). PSNR uses peak 1.0 and reports ``inf`` for identical inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from skimage.metrics import structural_similarity

from .errors import DimensionMismatch, EmptyMask, SizeMismatch, TooFewSamples
from .masks import bounding_box

SSIM_KWARGS = dict(gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=1.0)


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise SizeMismatch(f"{a.shape} vs {b.shape}")
    for name, arr in (("a", a), ("b", b)):
        if arr.min() < -1e-6 or arr.max() > 1 + 1e-6:
            raise ValueError(f"patch {name} has intensities outside [0, 1]")
    return a, b


def mean_absolute_error(a: np.ndarray, b: np.ndarray, region: np.ndarray | None = None) -> float:
    a, b = _check_pair(a, b)
    diff = np.abs(a - b)
    if region is None:
        return float(diff.mean())
    fg = np.asarray(region) > 0
    if not fg.any():
        raise EmptyMask("metric region has no foreground")
    return float(diff[fg].mean())


def peak_signal_noise_ratio(
    a: np.ndarray, b: np.ndarray, region: np.ndarray | None = None, peak: float = 1.0
) -> float:
    a, b = _check_pair(a, b)
    sq = (a - b) ** 2
    if region is not None:
        fg = np.asarray(region) > 0
        if not fg.any():
            raise EmptyMask("metric region has no foreground")
        sq = sq[fg]
    mse = float(sq.mean())
    if mse == 0.0:
        return math.inf
    return float(10.0 * np.log10(peak * peak / mse))


def _ssim_window(h: int, w: int) -> int:
    win = min(11, h, w)
    return win if win % 2 == 1 else win - 1


def structural_similarity_index(
    a: np.ndarray, b: np.ndarray, region: np.ndarray | None = None
) -> float:
    a, b = _check_pair(a, b)
    if region is None:
        win = _ssim_window(*a.shape)
        return float(structural_similarity(a, b, win_size=win, **SSIM_KWARGS))
    fg = np.asarray(region) > 0
    if not fg.any():
        raise EmptyMask("metric region has no foreground")
    r0, c0, r1, c1 = bounding_box(fg)
    # grow degenerate boxes to the 3px minimum the window needs
    while r1 - r0 < 3:
        r0, r1 = max(r0 - 1, 0), min(r1 + 1, a.shape[0])
    while c1 - c0 < 3:
        c0, c1 = max(c0 - 1, 0), min(c1 + 1, a.shape[1])
    win = _ssim_window(r1 - r0, c1 - c0)
    return float(
        structural_similarity(a[r0:r1, c0:c1], b[r0:r1, c0:c1], win_size=win, **SSIM_KWARGS)
    )


def pixel_metrics(
    a: np.ndarray, b: np.ndarray, region: np.ndarray | None = None
) -> dict[str, float]:
    """MAE, PSNR, and SSIM between two [0, 1] patches, optionally masked."""
    return {
        "mae": mean_absolute_error(a, b, region),
        "psnr": peak_signal_noise_ratio(a, b, region),
        "ssim": structural_similarity_index(a, b, region),
    }


def _sqrt_psd(matrix: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((matrix + matrix.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(
    mu1: np.ndarray, sigma1: np.ndarray, mu2: np.ndarray, sigma2: np.ndarray
) -> float:
    """Fréchet distance between two Gaussians given their moments.

    ``|mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2))``, with the matrix square
    root taken through symmetric eigendecompositions and negative eigenvalues
    clipped at zero: Tr((S1 S2)^(1/2)) equals Tr((S1^(1/2) S2 S1^(1/2))^(1/2))
    for positive semi-definite inputs.
    """
    mu1 = np.asarray(mu1, dtype=np.float64).ravel()
    mu2 = np.asarray(mu2, dtype=np.float64).ravel()
    sigma1 = np.asarray(sigma1, dtype=np.float64)
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    d = mu1.size
    if mu2.size != d or sigma1.shape != (d, d) or sigma2.shape != (d, d):
        raise DimensionMismatch(
            f"moments disagree: mu {mu1.size}/{mu2.size}, sigma {sigma1.shape}/{sigma2.shape}"
        )
    root1 = _sqrt_psd(sigma1)
    inner = root1 @ sigma2 @ root1
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    tr_sqrt = float(np.sqrt(np.clip(vals, 0.0, None)).sum())
    delta = mu1 - mu2
    return float(delta @ delta + np.trace(sigma1) + np.trace(sigma2) - 2.0 * tr_sqrt)


def feature_moments(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    feats = np.asarray(features, dtype=np.float64)
    if feats.shape[0] < 2:
        raise TooFewSamples("need at least 2 images per set for a covariance")
    return feats.mean(axis=0), np.cov(feats, rowvar=False)


def fid_score(images_a, images_b, extractor, batch_size: int = 16) -> float:
    """Fréchet distance between pooled deep features of two image sets."""
    feats_a = extractor.pooled_features(images_a, batch_size=batch_size)
    feats_b = extractor.pooled_features(images_b, batch_size=batch_size)
    mu_a, cov_a = feature_moments(feats_a)
    mu_b, cov_b = feature_moments(feats_b)
    return frechet_distance(mu_a, cov_a, mu_b, cov_b)


@dataclass
class MetricReport:
    scope: str  # "full_patch" | "masked_region"
    mae: float
    psnr: float
    ssim: float
    fid: float | None = None

    def to_json(self) -> dict:
        return {
            "scope": self.scope,
            "mae": self.mae,
            "psnr": "Infinity" if math.isinf(self.psnr) else self.psnr,
            "ssim": self.ssim,
            "fid": self.fid,
        }
