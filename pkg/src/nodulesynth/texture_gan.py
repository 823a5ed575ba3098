"""Coarse-to-fine gated-convolution texture inpainting.

The generator fills a masked region of a chest patch with plausible nodule
texture. Every layer is a gated convolution: one kernel extracts features,
a sibling kernel produces a sigmoid gating map that is multiplied in before
the LeakyReLU activation and instance normalization, letting the network
learn which spatial context to trust near the mask. Two identical stages run
in sequence; the second consumes the first stage's output (restacked with
the mask) and refines it.

Training pairs a real nodule patch with its shape mask: the patch is blanked
inside the mask (filled with the maximum intensity), the mask rides along as
a fourth channel, and the network is supervised with L1 reconstruction on
both stage outputs, an L1 perceptual term over three frozen feature taps,
and a least-squares adversarial term from a spectrally normalized patch
discriminator conditioned on the mask.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn.utils.parametrizations import spectral_norm

from .errors import ChannelMismatch, EmptyDataset, EmptyMask, SizeMismatch
from .features import FeatureExtractor, create_feature_extractor
from .losses import lsgan_discriminator_loss, lsgan_generator_loss

INSTANCE_NORM_EPS = 1e-8
BOTTLENECK_DILATIONS = (2, 4, 8, 16)


class GatedConv2d(nn.Module):
    """Convolution gated by a learned sigmoid map.

    The feature response is multiplied elementwise by the gate, passed
    through LeakyReLU, then instance-normalized (per sample, per channel;
    a constant map normalizes to zero). Output spatial size follows the
    usual stride/dilation arithmetic with "same"-style padding.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int = 3,
        stride: int = 1,
        dilation: int = 1,
        norm: bool = True,
        negative_slope: float = 0.2,
        padding_mode: str = "zeros",
    ):
        super().__init__()
        padding = dilation * (kernel_size - 1) // 2
        conv_kwargs = dict(
            kernel_size=kernel_size,
            stride=stride,
            padding=padding,
            dilation=dilation,
            padding_mode=padding_mode,
        )
        self.feature = nn.Conv2d(in_channels, out_channels, **conv_kwargs)
        self.gate = nn.Conv2d(in_channels, out_channels, **conv_kwargs)
        self.activation = nn.LeakyReLU(negative_slope)
        # affine=True starts as the identity rescale, so a fresh layer
        # normalizes exactly; training can then restore per-channel scale,
        # without which absolute intensity cannot pass through the stack.
        self.norm = (
            nn.InstanceNorm2d(out_channels, eps=INSTANCE_NORM_EPS, affine=True)
            if norm
            else None
        )

    def _check_channels(self, x: torch.Tensor) -> None:
        if x.dim() != 4 or x.shape[1] != self.feature.in_channels:
            raise ChannelMismatch(
                f"expected (B, {self.feature.in_channels}, H, W), got {tuple(x.shape)}"
            )

    def gating_map(self, x: torch.Tensor) -> torch.Tensor:
        self._check_channels(x)
        return torch.sigmoid(self.gate(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self._check_channels(x)
        out = self.activation(self.feature(x) * torch.sigmoid(self.gate(x)))
        if self.norm is not None:
            out = self.norm(out)
        return out


class InpaintingStage(nn.Module):
    """Encoder / dilated bottleneck / decoder stack of gated convolutions.

    Two stride-2 downsamples, four dilated layers (2, 4, 8, 16) in the middle
    of the bottleneck, and two nearest-neighbor upsamples back to the input
    size; a plain convolution with tanh produces the single-channel output.
    """

    def __init__(self, width: int = 48, padding_mode: str = "zeros"):
        super().__init__()
        w = width
        gc = lambda i, o, k=3, s=1, d=1: GatedConv2d(i, o, k, s, d, padding_mode=padding_mode)
        self.net = nn.Sequential(
            gc(4, w, k=5),
            gc(w, 2 * w, s=2),
            gc(2 * w, 2 * w),
            gc(2 * w, 4 * w, s=2),
            gc(4 * w, 4 * w),
            gc(4 * w, 4 * w, d=2),
            gc(4 * w, 4 * w, d=4),
            gc(4 * w, 4 * w, d=8),
            gc(4 * w, 4 * w, d=16),
            gc(4 * w, 4 * w),
            nn.Upsample(scale_factor=2, mode="nearest"),
            gc(4 * w, 2 * w),
            gc(2 * w, 2 * w),
            nn.Upsample(scale_factor=2, mode="nearest"),
            gc(2 * w, w),
            gc(w, max(w // 2, 1)),
            nn.Conv2d(max(w // 2, 1), 1, 3, padding=1, padding_mode=padding_mode),
            nn.Tanh(),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class TextureGenerator(nn.Module):
    """Two-stage inpainting generator; both stages share one topology."""

    def __init__(self, width: int = 48, padding_mode: str = "zeros"):
        super().__init__()
        self.width = width
        self.coarse = InpaintingStage(width, padding_mode)
        self.refine = InpaintingStage(width, padding_mode)

    def forward(self, filled: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """filled: (B, 3, H, W) in [-1, 1] with masked pixels at max; mask: (B, 1, H, W)."""
        coarse_out = self.coarse(torch.cat([filled, mask], dim=1))
        refine_in = torch.cat([coarse_out.repeat(1, 3, 1, 1), mask], dim=1)
        refined_out = self.refine(refine_in)
        return coarse_out, refined_out


class PatchDiscriminator(nn.Module):
    """Six-layer fully convolutional critic on (image, mask) pairs.

    Five stride-2 convolutions take 256 -> 8 (1/32 of the input), a final
    stride-1 convolution maps to a one-channel score map. All kernels carry
    spectral normalization.
    """

    def __init__(self, width: int = 64):
        super().__init__()
        w = width
        chans = [2, w, 2 * w, 4 * w, 4 * w, 4 * w]
        layers: list[nn.Module] = []
        for i in range(5):
            layers.append(spectral_norm(nn.Conv2d(chans[i], chans[i + 1], 5, stride=2, padding=2)))
            layers.append(nn.LeakyReLU(0.2))
        layers.append(spectral_norm(nn.Conv2d(chans[5], 1, 5, stride=1, padding=2)))
        self.net = nn.Sequential(*layers)

    def forward(self, image: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([image, mask], dim=1))


def make_input(patch: np.ndarray, mask: np.ndarray, fill_value: float = 1.0) -> np.ndarray:
    """Blank the masked region and stack the conditioning channels.

    The masked pixels are replaced by ``fill_value`` (the representation's
    maximum), the result is replicated to three channels, and the mask rides
    along as the fourth: output shape (4, H, W). Outside the mask the patch
    passes through bit-exactly.
    """
    patch = np.asarray(patch, dtype=np.float32)
    m = (np.asarray(mask) > 0).astype(np.float32)
    if patch.shape != m.shape:
        raise SizeMismatch(f"patch {patch.shape} vs mask {m.shape}")
    filled = patch * (1.0 - m) + m * np.float32(fill_value)
    return np.stack([filled, filled, filled, m], axis=0)


def composite(patch_a: np.ndarray, mask: np.ndarray, patch_b: np.ndarray) -> np.ndarray:
    """Take ``patch_b`` inside the mask, ``patch_a`` outside, bit-exactly."""
    a = np.asarray(patch_a)
    b = np.asarray(patch_b)
    m = np.asarray(mask) > 0
    if a.shape != m.shape or b.shape != m.shape:
        raise SizeMismatch(f"{a.shape} / {b.shape} / mask {m.shape}")
    return np.where(m, b, a)


def _network_input(patch01: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """(B, H, W) [0, 1] patch + (B, H, W) mask -> (B, 3, H, W) [-1, 1] filled."""
    filled = patch01 * (1.0 - mask) + mask
    filled = filled * 2.0 - 1.0
    return filled.unsqueeze(1).repeat(1, 3, 1, 1)


def synthesize_texture(
    generator: TextureGenerator, patch: np.ndarray, mask: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Run both generator stages on one [0, 1] patch and its shape mask.

    Returns the coarse and refined outputs, each (H, W) in [-1, 1]; use
    :func:`nodulesynth.imaging.from_network` to get back to [0, 1].
    """
    patch = np.asarray(patch, dtype=np.float32)
    m = (np.asarray(mask) > 0).astype(np.float32)
    if patch.shape != m.shape:
        raise SizeMismatch(f"patch {patch.shape} vs mask {m.shape}")
    if m.sum() == 0:
        raise EmptyMask("shape mask has no foreground")
    was_training = generator.training
    generator.eval()
    try:
        with torch.no_grad():
            patch_t = torch.from_numpy(patch).unsqueeze(0)
            mask_t = torch.from_numpy(m).unsqueeze(0)
            filled = _network_input(patch_t, mask_t)
            coarse, refined = generator(filled, mask_t.unsqueeze(1))
    finally:
        generator.train(was_training)
    return coarse[0, 0].numpy(), refined[0, 0].numpy()


@dataclass
class LossWeights:
    rec1: float = 1.0
    rec2: float = 1.0
    perc: float = 1.0
    adv: float = 1.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"loss weight {name} must be non-negative, got {value}")


def texture_generator_losses(
    coarse_out: torch.Tensor,
    refined_out: torch.Tensor,
    target: torch.Tensor,
    fake_scores: torch.Tensor,
    extractor: FeatureExtractor,
    weights: LossWeights | None = None,
) -> dict[str, torch.Tensor]:
    """All generator-side loss terms plus their weighted total.

    L1 reconstruction for each stage, summed L1 distances between the three
    frozen feature taps of target and refined output, and the least-squares
    adversarial term on the discriminator's scores for the refined output.
    """
    weights = weights or LossWeights()
    if coarse_out.shape != target.shape or refined_out.shape != target.shape:
        raise SizeMismatch(
            f"{tuple(coarse_out.shape)} / {tuple(refined_out.shape)} vs {tuple(target.shape)}"
        )
    rec1 = (target - coarse_out).abs().mean()
    rec2 = (target - refined_out).abs().mean()
    taps_target = extractor(target if target.dim() == 4 else target.unsqueeze(1))
    taps_out = extractor(refined_out if refined_out.dim() == 4 else refined_out.unsqueeze(1))
    perc = sum((t - o).abs().mean() for t, o in zip(taps_target, taps_out))
    adv = lsgan_generator_loss(fake_scores)
    total = weights.rec1 * rec1 + weights.rec2 * rec2 + weights.perc * perc + weights.adv * adv
    return {"rec1": rec1, "rec2": rec2, "perc": perc, "adv": adv, "total": total}


texture_discriminator_loss = lsgan_discriminator_loss


def stage_signature(stage: InpaintingStage) -> list[tuple]:
    """Structural fingerprint of a stage, for topology comparisons."""
    sig = []
    for module in stage.net:
        if isinstance(module, GatedConv2d):
            conv = module.feature
            sig.append(
                ("gated", conv.in_channels, conv.out_channels, conv.kernel_size[0],
                 conv.stride[0], conv.dilation[0])
            )
        elif isinstance(module, nn.Upsample):
            sig.append(("upsample", module.scale_factor, module.mode))
        elif isinstance(module, nn.Conv2d):
            sig.append(("conv", module.in_channels, module.out_channels, module.kernel_size[0]))
        elif isinstance(module, nn.Tanh):
            sig.append(("tanh",))
    return sig


def bottleneck_dilations(stage: InpaintingStage) -> list[int]:
    return [
        m.feature.dilation[0]
        for m in stage.net
        if isinstance(m, GatedConv2d) and m.feature.dilation[0] > 1
    ]


def discriminator_downsample_factor(disc: PatchDiscriminator) -> int:
    factor = 1
    for m in disc.net:
        if isinstance(m, nn.Conv2d):
            factor *= m.stride[0]
    return factor


@dataclass
class TextureGanConfig:
    width: int = 48
    disc_width: int = 64
    batch_size: int = 8
    lr: float = 1e-4
    lr_phase2: float = 1e-5
    disc_lr_ratio: float = 0.1
    beta1: float = 0.5
    beta2: float = 0.999
    weights: LossWeights = field(default_factory=LossWeights)
    max_epochs_per_phase: int = 200
    max_steps_per_phase: int | None = None
    convergence_patience: int = 10
    convergence_tol: float = 0.01
    val_fraction: float = 0.0
    stop_rec2: float | None = None       # early exit when the monitored full-set
                                         # stage-two reconstruction drops below this
    extractor_kind: str = "random"
    extractor_seed: int = 0
    extractor_channels: int = 64
    padding_mode: str = "zeros"          # padding choice is part of the config record
    checkpoint_every_steps: int = 1000


@dataclass
class TextureTrainResult:
    generator: TextureGenerator
    discriminator: PatchDiscriminator
    checkpoints: list[Path]
    log_path: Path
    steps: int
    history: list[dict]

    @property
    def final_checkpoint(self) -> Path:
        return self.checkpoints[-1]


def _ingest_pairs(pairs) -> tuple[torch.Tensor, torch.Tensor]:
    if len(pairs) == 0:
        raise EmptyDataset("no texture training pairs")
    patches, masks_ = [], []
    size = None
    for patch, mask in pairs:
        p = np.asarray(patch, dtype=np.float32)
        m = (np.asarray(mask) > 0).astype(np.float32)
        if p.shape != m.shape:
            raise SizeMismatch(f"patch {p.shape} vs mask {m.shape}")
        if size is None:
            size = p.shape
        elif p.shape != size:
            raise SizeMismatch(f"patch {p.shape} differs from first patch {size}")
        patches.append(torch.from_numpy(p))
        masks_.append(torch.from_numpy(m))
    return torch.stack(patches), torch.stack(masks_)


def save_texture_checkpoint(
    path: str | Path,
    generator: TextureGenerator,
    discriminator: PatchDiscriminator | None,
    cfg: TextureGanConfig,
    step: int,
    phase: int,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "generator": generator.state_dict(),
        "discriminator": None if discriminator is None else discriminator.state_dict(),
        "width": generator.width,
        "padding_mode": cfg.padding_mode,
        "disc_width": cfg.disc_width,
        "step": step,
        "phase": phase,
    }
    torch.save(payload, path)
    return path


def load_texture_generator(path: str | Path) -> TextureGenerator:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    gen = TextureGenerator(width=payload["width"], padding_mode=payload.get("padding_mode", "zeros"))
    gen.load_state_dict(payload["generator"])
    gen.eval()
    return gen


def train_texture_gan(
    pairs,
    cfg: TextureGanConfig | None = None,
    out_dir: str | Path = "texture_runs",
    seed: int = 0,
) -> TextureTrainResult:
    """Train the two-stage generator on (patch, shape mask) pairs.

    Runs two learning-rate phases (``lr`` then ``lr_phase2``); a phase ends
    when the monitored stage-two reconstruction improves by less than
    ``convergence_tol`` for ``convergence_patience`` consecutive epochs, or
    at the epoch/step caps. The discriminator always trains at one tenth of
    the generator's current rate. Loss curves land in a CSV next to the
    checkpoints; with a fixed seed the run is bit-reproducible.
    """
    cfg = cfg or TextureGanConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(seed)

    patches, masks_ = _ingest_pairs(pairs)
    n = patches.shape[0]
    n_val = int(round(cfg.val_fraction * n))
    perm = torch.randperm(n, generator=torch.Generator().manual_seed(seed))
    val_idx = perm[:n_val]
    train_idx = perm[n_val:]
    if train_idx.numel() == 0:
        raise EmptyDataset("validation split consumed every training pair")

    generator = TextureGenerator(width=cfg.width, padding_mode=cfg.padding_mode)
    discriminator = PatchDiscriminator(width=cfg.disc_width)
    extractor = create_feature_extractor(
        cfg.extractor_kind, seed=cfg.extractor_seed, base_channels=cfg.extractor_channels
    )

    log_path = out / "texture_losses.csv"
    log_file = open(log_path, "w", newline="")
    writer = csv.writer(log_file)
    writer.writerow(["step", "L_rec1", "L_rec2", "L_perc", "L_adv_G", "L_D"])

    shuffle_rng = np.random.default_rng(seed)
    checkpoints: list[Path] = []
    history: list[dict] = []
    step = 0

    def monitored_rec2() -> float:
        idx = val_idx if n_val > 0 else train_idx
        generator.eval()
        with torch.no_grad():
            total, count = 0.0, 0
            for start in range(0, idx.numel(), cfg.batch_size):
                sel = idx[start : start + cfg.batch_size]
                p, m = patches[sel], masks_[sel]
                filled = _network_input(p, m)
                _, refined = generator(filled, m.unsqueeze(1))
                total += float((refined.squeeze(1) - (p * 2 - 1)).abs().mean()) * sel.numel()
                count += sel.numel()
        generator.train()
        return total / max(count, 1)

    stop_all = False
    try:
        for phase, lr in ((1, cfg.lr), (2, cfg.lr_phase2)):
            if stop_all:
                break
            opt_g = torch.optim.Adam(generator.parameters(), lr=lr, betas=(cfg.beta1, cfg.beta2))
            opt_d = torch.optim.Adam(
                discriminator.parameters(), lr=lr * cfg.disc_lr_ratio, betas=(cfg.beta1, cfg.beta2)
            )
            best = math.inf
            stalled = 0
            phase_done = False
            for _epoch in range(cfg.max_epochs_per_phase):
                order = shuffle_rng.permutation(train_idx.numpy())
                for start in range(0, len(order), cfg.batch_size):
                    sel = torch.from_numpy(order[start : start + cfg.batch_size])
                    p01, m = patches[sel], masks_[sel]
                    target = (p01 * 2.0 - 1.0).unsqueeze(1)
                    mask_c = m.unsqueeze(1)
                    filled = _network_input(p01, m)

                    coarse, refined = generator(filled, mask_c)

                    opt_d.zero_grad(set_to_none=True)
                    d_real = discriminator(target, mask_c)
                    d_fake = discriminator(refined.detach(), mask_c)
                    loss_d = texture_discriminator_loss(d_real, d_fake)
                    loss_d.backward()
                    opt_d.step()

                    opt_g.zero_grad(set_to_none=True)
                    fake_scores = discriminator(refined, mask_c)
                    terms = texture_generator_losses(
                        coarse, refined, target, fake_scores, extractor, cfg.weights
                    )
                    terms["total"].backward()
                    opt_g.step()

                    step += 1
                    row = {
                        "step": step,
                        "L_rec1": terms["rec1"].detach().item(),
                        "L_rec2": terms["rec2"].detach().item(),
                        "L_perc": terms["perc"].detach().item(),
                        "L_adv_G": terms["adv"].detach().item(),
                        "L_D": loss_d.detach().item(),
                    }
                    history.append(row)
                    writer.writerow([row[k] for k in ("step", "L_rec1", "L_rec2", "L_perc", "L_adv_G", "L_D")])

                    if step % cfg.checkpoint_every_steps == 0:
                        checkpoints.append(
                            save_texture_checkpoint(
                                out / f"texture_gan_phase{phase}_step{step}.pt",
                                generator, discriminator, cfg, step, phase,
                            )
                        )
                    if cfg.max_steps_per_phase is not None and step >= phase * cfg.max_steps_per_phase:
                        phase_done = True
                    if phase_done:
                        break
                current = monitored_rec2()
                if cfg.stop_rec2 is not None and current < cfg.stop_rec2:
                    stop_all = True
                if stop_all or phase_done:
                    break
                if current < best * (1.0 - cfg.convergence_tol):
                    best = current
                    stalled = 0
                else:
                    stalled += 1
                    if stalled >= cfg.convergence_patience:
                        break
    finally:
        log_file.close()

    checkpoints.append(
        save_texture_checkpoint(
            out / f"texture_gan_phase2_step{step}.pt", generator, discriminator, cfg, step, 2
        )
    )
    return TextureTrainResult(
        generator=generator,
        discriminator=discriminator,
        checkpoints=checkpoints,
        log_path=log_path,
        steps=step,
        history=history,
    )
