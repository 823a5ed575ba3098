"""Image containers and low-level pixel plumbing.

Conventions used everywhere in the package:

* images and patches are 2D float arrays with intensities in [0, 1] at rest
  (on disk and for metrics); GAN code maps them to [-1, 1] through
  :func:`to_network` / :func:`from_network`, the single owner of that mapping;
* binary masks are 2D uint8 arrays with values in {0, 1};
* images persist as 16-bit grayscale PNG, masks as 8-bit PNG with {0, 255};
* every file write is atomic (write to a temp file, then rename) so an
  interrupted run never leaves a torn artifact behind.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import OutOfBounds

MASK_THRESHOLD = 127  # loader maps stored values > 127 to foreground


def to_network(patch: np.ndarray) -> np.ndarray:
    """Map an at-rest [0, 1] patch to the network's [-1, 1] representation."""
    return patch.astype(np.float32) * 2.0 - 1.0


def from_network(patch: np.ndarray) -> np.ndarray:
    """Map a [-1, 1] network output back to [0, 1], clipping numeric spill."""
    return np.clip((patch.astype(np.float32) + 1.0) / 2.0, 0.0, 1.0)


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write ``data`` to ``path`` via a same-directory temp file + rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _png_bytes(img: Image.Image) -> bytes:
    import io

    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def save_image(path: str | Path, image: np.ndarray) -> None:
    """Save a [0, 1] float image as 16-bit grayscale PNG."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    u16 = np.round(arr * 65535.0).astype(np.uint16)
    atomic_write_bytes(path, _png_bytes(Image.fromarray(u16)))


def load_image(path: str | Path) -> np.ndarray:
    """Load a grayscale PNG (8- or 16-bit) as a [0, 1] float32 image."""
    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.dtype == np.uint16 or arr.dtype == np.int32:
        return (arr.astype(np.float32) / 65535.0).clip(0.0, 1.0)
    if arr.ndim == 3:  # tolerate RGB(-A) input, use first channel
        arr = arr[..., 0]
    return arr.astype(np.float32) / 255.0


def save_mask(path: str | Path, mask: np.ndarray) -> None:
    """Save a {0, 1} mask as 8-bit PNG with values {0, 255}."""
    arr = (np.asarray(mask) > 0).astype(np.uint8) * 255
    atomic_write_bytes(path, _png_bytes(Image.fromarray(arr, mode="L")))


def load_mask(path: str | Path) -> np.ndarray:
    """Load an 8-bit mask PNG; stored values > 127 map to foreground."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return (arr > MASK_THRESHOLD).astype(np.uint8)


def crop_patch(
    image: np.ndarray, center: tuple[int, int], size: int = 256
) -> tuple[np.ndarray, tuple[int, int]]:
    """Cut a ``size``x``size`` window around ``center`` (row, col).

    Returns the window (a copy) and its top-left origin so the patch can be
    pasted back with :func:`paste_patch`. Raises :class:`OutOfBounds` if the
    window does not fit inside the image.
    """
    h, w = image.shape[:2]
    row, col = int(center[0]), int(center[1])
    r0 = row - size // 2
    c0 = col - size // 2
    if r0 < 0 or c0 < 0 or r0 + size > h or c0 + size > w:
        raise OutOfBounds(
            f"{size}x{size} window at center ({row}, {col}) exceeds {h}x{w} image"
        )
    return image[r0 : r0 + size, c0 : c0 + size].copy(), (r0, c0)


def paste_patch(
    image: np.ndarray, patch: np.ndarray, origin: tuple[int, int]
) -> np.ndarray:
    """Return a copy of ``image`` with ``patch`` written at ``origin``.

    Pixels outside the window are bit-exactly those of the input image.
    """
    h, w = image.shape[:2]
    ph, pw = patch.shape[:2]
    r0, c0 = int(origin[0]), int(origin[1])
    if r0 < 0 or c0 < 0 or r0 + ph > h or c0 + pw > w:
        raise OutOfBounds(f"{ph}x{pw} patch at origin ({r0}, {c0}) exceeds {h}x{w} image")
    out = image.copy()
    out[r0 : r0 + ph, c0 : c0 + pw] = patch
    return out
