"""Frozen convolutional feature extractor for perceptual loss and FID.

The topology mirrors the classic 16-layer classification network up to its
third pooling stage; taps are taken after each of the three pools. When the
pretrained checkpoint is present locally (``NODULESYNTH_CACHE`` or the torch
hub cache) those weights are copied in; otherwise a fixed-seed random
initialization is used, which every loss/metric identity in this package
tolerates since the extractor is frozen either way. No network download is
attempted unless explicitly requested.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import torch
from torch import nn

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# conv counts per stage of the reference topology, through pool3
_STAGE_CONVS = (2, 2, 3)


class FeatureExtractor(nn.Module):
    """Three-stage conv stack with frozen weights and per-stage pooling taps."""

    def __init__(self, base_channels: int = 64, normalize: bool = False):
        super().__init__()
        self.base_channels = base_channels
        self.normalize = normalize
        stages = []
        in_c = 3
        for stage_idx, n_convs in enumerate(_STAGE_CONVS):
            out_c = base_channels * (2**stage_idx)
            layers: list[nn.Module] = []
            for _ in range(n_convs):
                layers += [nn.Conv2d(in_c, out_c, 3, padding=1), nn.ReLU(inplace=True)]
                in_c = out_c
            layers.append(nn.MaxPool2d(2))
            stages.append(nn.Sequential(*layers))
        self.stages = nn.ModuleList(stages)
        self.feature_dim = base_channels * 4
        self.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True):  # weights stay frozen regardless
        return super().train(False)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Return the three pooling-tap feature maps for a (B, 1|3, H, W) batch."""
        if x.dim() != 4:
            raise ValueError(f"expected a 4D batch, got shape {tuple(x.shape)}")
        if x.shape[1] == 1:
            x = x.repeat(1, 3, 1, 1)
        if self.normalize:
            mean = torch.tensor(IMAGENET_MEAN, device=x.device, dtype=x.dtype).view(1, 3, 1, 1)
            std = torch.tensor(IMAGENET_STD, device=x.device, dtype=x.dtype).view(1, 3, 1, 1)
            x = (x - mean) / std
        taps = []
        for stage in self.stages:
            x = stage(x)
            taps.append(x)
        return taps

    @torch.no_grad()
    def pooled_features(self, images, batch_size: int = 16) -> np.ndarray:
        """Spatially averaged deepest-tap features, one row per image in [0, 1]."""
        rows = []
        batch: list[torch.Tensor] = []

        def flush():
            if not batch:
                return
            x = torch.stack(batch, dim=0)
            feats = self.forward(x)[-1].mean(dim=(2, 3))
            rows.append(feats.cpu().numpy())
            batch.clear()

        for img in images:
            t = torch.as_tensor(np.asarray(img, dtype=np.float32))
            if t.dim() == 2:
                t = t.unsqueeze(0)
            batch.append(t)
            if len(batch) >= batch_size:
                flush()
        flush()
        if not rows:
            return np.zeros((0, self.feature_dim), dtype=np.float64)
        return np.concatenate(rows, axis=0).astype(np.float64)


def _cached_checkpoint() -> Path | None:
    candidates = []
    cache = os.environ.get("NODULESYNTH_CACHE")
    if cache:
        candidates.extend(sorted(Path(cache).glob("vgg16*.pth")))
    hub = Path(os.environ.get("TORCH_HOME", Path.home() / ".cache" / "torch"))
    candidates.extend(sorted((hub / "hub" / "checkpoints").glob("vgg16*.pth")))
    for c in candidates:
        if c.is_file():
            return c
    return None


def _load_pretrained(extractor: FeatureExtractor, path: Path) -> None:
    state = torch.load(path, map_location="cpu", weights_only=True)
    convs = [m for stage in extractor.stages for m in stage if isinstance(m, nn.Conv2d)]
    keys = sorted(
        (k for k in state if k.startswith("features.") and k.endswith(".weight")),
        key=lambda k: int(k.split(".")[1]),
    )
    for conv, key in zip(convs, keys):
        conv.weight.copy_(state[key])
        conv.bias.copy_(state[key.replace(".weight", ".bias")])


def create_feature_extractor(
    kind: str = "random",
    seed: int = 0,
    base_channels: int = 64,
) -> FeatureExtractor:
    """Build a frozen extractor.

    kind:
        ``random``     fixed-seed random weights (default; fully offline)
        ``pretrained`` copy locally cached classification weights; error if absent
        ``auto``       pretrained when cached, random otherwise
    """
    if kind not in ("random", "pretrained", "auto"):
        raise ValueError(f"unknown extractor kind {kind!r}")
    if kind == "random":
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            return FeatureExtractor(base_channels=base_channels, normalize=False)
    found = _cached_checkpoint()
    if found is None:
        if kind == "pretrained":
            raise FileNotFoundError(
                "no cached vgg16*.pth found; set NODULESYNTH_CACHE or TORCH_HOME"
            )
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            return FeatureExtractor(base_channels=base_channels, normalize=False)
    if base_channels != 64:
        raise ValueError("pretrained weights require base_channels=64")
    extractor = FeatureExtractor(base_channels=64, normalize=True)
    with torch.no_grad():
        _load_pretrained(extractor, found)
    return extractor
