"""Pluggable nodule detector seam plus a lightweight reference detector.

Production-grade detectors (two-stage or focal one-stage models) slot in
behind the :class:`Detector` interface: ``fit`` pretrains on real images,
``finetune`` resumes from those weights at a lower learning rate, and
``predict`` returns scored boxes for one image. The shipped reference
detector is a small fully convolutional heatmap network with peak extraction
and a per-peak size regression; it is deliberately compact so the whole
mining/finetuning loop runs in minutes on a CPU.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .datasets import ImageAnnotation, traditional_augment
from .errors import EmptyDataset, NotFitted
from .froc import Box

STRIDE = 4


@dataclass
class DetectorConfig:
    channels: int = 16
    lr_fit: float = 1e-3
    epochs_fit: int = 20
    lr_finetune: float = 1e-4
    epochs_finetune: int = 10
    batch_size: int = 8
    heat_loss_weight: float = 10.0
    heat_pos_weight: float = 30.0  # extra weight on cells near nodule centers
    score_floor: float = 0.05
    max_detections: int = 20
    min_diameter: float = 6.0
    augment: bool = True
    shift_max: int = 16
    seed: int = 0


class Detector(ABC):
    """Training/inference seam the augmentation loop drives."""

    @abstractmethod
    def fit(self, images, annotations, cfg: DetectorConfig | None = None) -> None: ...

    @abstractmethod
    def finetune(self, images, annotations, cfg: DetectorConfig | None = None) -> None: ...

    @abstractmethod
    def predict(self, image: np.ndarray) -> list[Box]: ...


class _HeatmapNet(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        c = channels

        def block(i, o, stride=1, dilation=1):
            return [
                nn.Conv2d(i, o, 3, stride=stride, padding=dilation, dilation=dilation, bias=False),
                nn.BatchNorm2d(o),
                nn.ReLU(inplace=True),
            ]

        self.backbone = nn.Sequential(
            *block(1, c, stride=2),
            *block(c, 2 * c, stride=2),
            *block(2 * c, 2 * c),
            *block(2 * c, 2 * c, dilation=2),
            *block(2 * c, 2 * c, dilation=4),
        )
        self.heat_head = nn.Conv2d(2 * c, 1, 1)
        self.size_head = nn.Conv2d(2 * c, 1, 1)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        feats = self.backbone(x * 2.0 - 1.0)
        return self.heat_head(feats), self.size_head(feats)


def _targets_for(
    annotation: ImageAnnotation, shape: tuple[int, int]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gaussian center heatmap, per-cell size target, and a size-loss mask."""
    gh, gw = shape[0] // STRIDE, shape[1] // STRIDE
    heat = np.zeros((gh, gw), dtype=np.float32)
    size = np.zeros((gh, gw), dtype=np.float32)
    size_mask = np.zeros((gh, gw), dtype=np.float32)
    ys, xs = np.mgrid[0:gh, 0:gw]
    for b in annotation.boxes:
        cy = (b.y_min + b.y_max) / 2.0 / STRIDE
        cx = (b.x_min + b.x_max) / 2.0 / STRIDE
        d = max(b.x_max - b.x_min, b.y_max - b.y_min)
        sigma = max(d / STRIDE / 6.0, 0.7)
        g = np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2.0 * sigma**2)).astype(np.float32)
        heat = np.maximum(heat, g)
        near = g > 0.7
        size[near] = d / STRIDE
        size_mask[near] = 1.0
    return heat, size, size_mask


class ReferenceDetector(Detector):
    """Heatmap-and-size detector used to exercise the mining loop."""

    def __init__(self, cfg: DetectorConfig | None = None):
        self.cfg = cfg or DetectorConfig()
        self._net: _HeatmapNet | None = None

    # -- training ---------------------------------------------------------

    def fit(self, images, annotations, cfg: DetectorConfig | None = None) -> None:
        cfg = cfg or self.cfg
        torch.manual_seed(cfg.seed)
        self._net = _HeatmapNet(cfg.channels)
        self._train(images, annotations, cfg, lr=cfg.lr_fit, epochs=cfg.epochs_fit)

    def finetune(self, images, annotations, cfg: DetectorConfig | None = None) -> None:
        if self._net is None:
            raise NotFitted("finetune requires a fitted or loaded detector")
        cfg = cfg or self.cfg
        self._train(images, annotations, cfg, lr=cfg.lr_finetune, epochs=cfg.epochs_finetune)

    def _train(self, images, annotations, cfg: DetectorConfig, lr: float, epochs: int) -> None:
        if len(images) == 0:
            raise EmptyDataset("no detector training images")
        if len(images) != len(annotations):
            raise ValueError("images and annotations differ in length")
        net = self._net
        assert net is not None
        opt = torch.optim.Adam(net.parameters(), lr=lr)
        rng = np.random.default_rng(cfg.seed)
        net.train()
        for _epoch in range(epochs):
            order = rng.permutation(len(images))
            for start in range(0, len(order), cfg.batch_size):
                sel = order[start : start + cfg.batch_size]
                imgs, heats, sizes, smasks = [], [], [], []
                for i in sel:
                    img, ann = np.asarray(images[i], dtype=np.float32), annotations[i]
                    if cfg.augment:
                        img, ann, _ = traditional_augment(
                            img, ann, rng, shift_max=cfg.shift_max
                        )
                    heat, size, smask = _targets_for(ann, img.shape)
                    imgs.append(torch.from_numpy(img))
                    heats.append(torch.from_numpy(heat))
                    sizes.append(torch.from_numpy(size))
                    smasks.append(torch.from_numpy(smask))
                x = torch.stack(imgs).unsqueeze(1)
                heat_t = torch.stack(heats).unsqueeze(1)
                size_t = torch.stack(sizes).unsqueeze(1)
                smask_t = torch.stack(smasks).unsqueeze(1)

                heat_logits, size_pred = net(x)
                cell_w = 1.0 + cfg.heat_pos_weight * heat_t
                bce = F.binary_cross_entropy_with_logits(heat_logits, heat_t, reduction="none")
                loss = cfg.heat_loss_weight * (cell_w * bce).sum() / cell_w.sum()
                denom = smask_t.sum().clamp(min=1.0)
                loss = loss + (smask_t * (size_pred - size_t).abs()).sum() / denom
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
        net.eval()

    # -- inference --------------------------------------------------------

    def predict(self, image: np.ndarray) -> list[Box]:
        if self._net is None:
            raise NotFitted("predict requires a fitted or loaded detector")
        self._net.eval()
        img = torch.from_numpy(np.asarray(image, dtype=np.float32))[None, None]
        with torch.no_grad():
            heat_logits, size_pred = self._net(img)
            heat = torch.sigmoid(heat_logits)
            peaks = F.max_pool2d(heat, 3, stride=1, padding=1)
            keep = (heat == peaks) & (heat >= self.cfg.score_floor)
        h, w = image.shape
        boxes: list[Box] = []
        ys, xs = torch.nonzero(keep[0, 0], as_tuple=True)
        scores = heat[0, 0, ys, xs]
        order = torch.argsort(scores, descending=True)[: self.cfg.max_detections]
        for idx in order:
            gy, gx = int(ys[idx]), int(xs[idx])
            d = max(float(size_pred[0, 0, gy, gx]) * STRIDE, self.cfg.min_diameter)
            cy, cx = (gy + 0.5) * STRIDE, (gx + 0.5) * STRIDE
            x0, x1 = max(cx - d / 2, 0.0), min(cx + d / 2, float(w))
            y0, y1 = max(cy - d / 2, 0.0), min(cy + d / 2, float(h))
            if x1 - x0 <= 1.0 or y1 - y0 <= 1.0:
                continue
            boxes.append(Box(x0, y0, x1, y1, score=float(scores[idx])))
        return boxes

    # -- persistence ------------------------------------------------------

    def save(self, path: str | Path) -> Path:
        if self._net is None:
            raise NotFitted("nothing to save before fit")
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save({"net": self._net.state_dict(), "channels": self.cfg.channels,
                    "config": self.cfg.__dict__}, path)
        return path

    @classmethod
    def load(cls, path: str | Path) -> "ReferenceDetector":
        payload = torch.load(path, map_location="cpu", weights_only=True)
        cfg = DetectorConfig(**payload["config"])
        det = cls(cfg)
        det._net = _HeatmapNet(payload["channels"])
        det._net.load_state_dict(payload["net"])
        det._net.eval()
        return det
