"""Shape-mask generator: a compact deep-convolutional GAN.

A 100-dimensional standard-normal latent vector is projected to a 4x4
feature block and carried through five stride-2 transposed convolutions
(4 -> 8 -> 16 -> 32 -> 64 -> 128) to a single-channel sigmoid map. Training
uses the least-squares adversarial objective against a mirrored strided
discriminator. Sampled maps are binarized downstream (threshold + largest
component) before size modulation.

Training masks are first rescaled to a common diameter on a 256 canvas,
then area-averaged down to 128x128 and re-binarized, so the generator sees
a single shape scale. Measurements always happen after any resampling.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import BadLatentDim, EmptyDataset
from .masks import modulate_size

LATENT_DIM = 100
OUTPUT_SIZE = 128
UPSAMPLE_LAYERS = 5
TRAIN_DIAMETER = 100.0
TRAIN_CANVAS = 256


@dataclass
class ShapeGanConfig:
    latent_dim: int = LATENT_DIM
    base_channels: int = 512      # channels of the 4x4 projection
    disc_channels: int = 512      # channels at the discriminator's 4x4 stage
    lr_g: float = 1e-4
    lr_d: float = 1e-5
    batch_size: int = 6
    epochs: int = 1000
    beta1: float = 0.5
    beta2: float = 0.999
    checkpoint_every: int = 100

    def __post_init__(self):
        if 4 * 2**UPSAMPLE_LAYERS != OUTPUT_SIZE:
            raise ValueError("upsample layer count is inconsistent with the output size")
        if self.base_channels % 2**(UPSAMPLE_LAYERS - 1) != 0:
            raise ValueError("base_channels must be divisible by 16 to halve per layer")


class ShapeGenerator(nn.Module):
    """Latent vector -> 128x128 shape-probability map in [0, 1]."""

    def __init__(self, latent_dim: int = LATENT_DIM, base_channels: int = 512):
        super().__init__()
        self.latent_dim = latent_dim
        self.base_channels = base_channels
        c = base_channels
        self.project = nn.Sequential(
            nn.ConvTranspose2d(latent_dim, c, 4, stride=1, padding=0, bias=False),
            nn.BatchNorm2d(c),
            nn.ReLU(inplace=True),
        )
        blocks = []
        for _ in range(UPSAMPLE_LAYERS - 1):
            blocks += [
                nn.ConvTranspose2d(c, c // 2, 4, stride=2, padding=1, bias=False),
                nn.BatchNorm2d(c // 2),
                nn.ReLU(inplace=True),
            ]
            c //= 2
        blocks += [nn.ConvTranspose2d(c, 1, 4, stride=2, padding=1), nn.Sigmoid()]
        self.blocks = nn.Sequential(*blocks)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.dim() != 2 or z.shape[1] != self.latent_dim:
            raise BadLatentDim(f"expected (B, {self.latent_dim}) latents, got {tuple(z.shape)}")
        return self.blocks(self.project(z.view(z.shape[0], self.latent_dim, 1, 1)))


class ShapeDiscriminator(nn.Module):
    """Mirror of the generator: strided 4x4 convolutions to a scalar score.

    No batch normalization: with small or single-mode datasets a normalized
    critic separates real from fake through batch statistics instead of
    per-sample shape evidence, which starves the generator of positional
    gradient. Plain LeakyReLU layers keep the critic honest.
    """

    def __init__(self, base_channels: int = 512):
        super().__init__()
        c = base_channels // 2**(UPSAMPLE_LAYERS - 1)
        layers: list[nn.Module] = [nn.Conv2d(1, c, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
        for _ in range(UPSAMPLE_LAYERS - 1):
            layers += [nn.Conv2d(c, c * 2, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
            c *= 2
        layers.append(nn.Conv2d(c, 1, 4, stride=1, padding=0))
        self.net = nn.Sequential(*layers)

    def forward(self, masks: torch.Tensor) -> torch.Tensor:
        return self.net(masks).view(masks.shape[0])


def spatial_progression(generator: ShapeGenerator) -> list[int]:
    """Output size after the projection and each upsampling layer."""
    sizes = [4]
    for module in generator.blocks:
        if isinstance(module, nn.ConvTranspose2d):
            sizes.append(sizes[-1] * module.stride[0])
    return sizes


def sample_latent(rng: np.random.Generator, latent_dim: int = LATENT_DIM) -> np.ndarray:
    """Draw one latent vector from the standard normal prior."""
    return rng.standard_normal(latent_dim).astype(np.float32)


def generate_shape(generator: ShapeGenerator, z: np.ndarray | torch.Tensor) -> np.ndarray:
    """Deterministically decode one latent vector to a [0, 1] probability map."""
    z_t = torch.as_tensor(np.asarray(z, dtype=np.float32))
    if z_t.dim() == 1:
        z_t = z_t.unsqueeze(0)
    if z_t.dim() != 2 or z_t.shape[1] != generator.latent_dim:
        raise BadLatentDim(f"expected a {generator.latent_dim}-vector, got shape {tuple(z.shape)}")
    was_training = generator.training
    generator.eval()
    try:
        with torch.no_grad():
            out = generator(z_t)
    finally:
        generator.train(was_training)
    return out[0, 0].numpy()


def preprocess_training_mask(mask: np.ndarray) -> np.ndarray:
    """Normalize one training mask to the generator's scale and resolution.

    Rescales the shape to the common training diameter on a 256 canvas, then
    2x2 area-averages down to 128x128 and re-binarizes at 0.5.
    """
    normalized = modulate_size(mask, TRAIN_DIAMETER, TRAIN_CANVAS).astype(np.float32)
    pooled = normalized.reshape(OUTPUT_SIZE, 2, OUTPUT_SIZE, 2).mean(axis=(1, 3))
    return (pooled >= 0.5).astype(np.float32)


@dataclass
class ShapeTrainResult:
    generator: ShapeGenerator
    discriminator: ShapeDiscriminator
    checkpoints: list[Path]
    log_path: Path
    epoch_losses: list[tuple[float, float]]  # (loss_D, loss_G) per epoch

    @property
    def final_checkpoint(self) -> Path:
        return self.checkpoints[-1]


def save_shape_checkpoint(
    path: str | Path,
    generator: ShapeGenerator,
    discriminator: ShapeDiscriminator | None,
    epoch: int,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "generator": generator.state_dict(),
            "discriminator": None if discriminator is None else discriminator.state_dict(),
            "latent_dim": generator.latent_dim,
            "base_channels": generator.base_channels,
            "epoch": epoch,
        },
        path,
    )
    return path


def load_shape_generator(path: str | Path) -> ShapeGenerator:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    gen = ShapeGenerator(payload["latent_dim"], payload["base_channels"])
    gen.load_state_dict(payload["generator"])
    gen.eval()
    return gen


def train_shape_gan(
    shape_masks,
    cfg: ShapeGanConfig | None = None,
    out_dir: str | Path = "shape_runs",
    seed: int = 0,
) -> ShapeTrainResult:
    """Adversarial training on a corpus of binary shape masks.

    Masks of any size are accepted; preprocessing normalizes them all to the
    training diameter at 128x128. Periodic checkpoints are written as
    ``shape_gan_epoch{N}.pt`` and a per-epoch loss CSV sits next to them.
    Fixed seeds reproduce the loss curve exactly.
    """
    from .losses import lsgan_discriminator_loss, lsgan_generator_loss

    cfg = cfg or ShapeGanConfig()
    masks = [preprocess_training_mask(m) for m in shape_masks]
    if len(masks) == 0:
        raise EmptyDataset("no shape masks to train on")
    data = torch.from_numpy(np.stack(masks)).unsqueeze(1)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(seed)
    generator = ShapeGenerator(cfg.latent_dim, cfg.base_channels)
    discriminator = ShapeDiscriminator(cfg.disc_channels)
    opt_g = torch.optim.Adam(generator.parameters(), lr=cfg.lr_g, betas=(cfg.beta1, cfg.beta2))
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=cfg.lr_d, betas=(cfg.beta1, cfg.beta2))
    shuffle_rng = np.random.default_rng(seed)
    z_gen = torch.Generator().manual_seed(seed + 1)

    log_path = out / "shape_losses.csv"
    checkpoints: list[Path] = []
    epoch_losses: list[tuple[float, float]] = []
    n = data.shape[0]

    with open(log_path, "w", newline="") as log_file:
        writer = csv.writer(log_file)
        writer.writerow(["epoch", "loss_D", "loss_G"])
        for epoch in range(1, cfg.epochs + 1):
            order = shuffle_rng.permutation(n)
            d_sum = g_sum = 0.0
            batches = 0
            for start in range(0, n, cfg.batch_size):
                real = data[torch.from_numpy(order[start : start + cfg.batch_size])]
                z = torch.randn(real.shape[0], cfg.latent_dim, generator=z_gen)
                fake = generator(z)

                opt_d.zero_grad(set_to_none=True)
                loss_d = lsgan_discriminator_loss(
                    discriminator(real), discriminator(fake.detach())
                )
                loss_d.backward()
                opt_d.step()

                opt_g.zero_grad(set_to_none=True)
                loss_g = lsgan_generator_loss(discriminator(fake))
                loss_g.backward()
                opt_g.step()

                d_val = loss_d.detach().item()
                g_val = loss_g.detach().item()
                if not (math.isfinite(d_val) and math.isfinite(g_val)):
                    raise FloatingPointError(
                        f"non-finite adversarial loss at epoch {epoch}"
                    )
                d_sum += d_val
                g_sum += g_val
                batches += 1
            epoch_losses.append((d_sum / batches, g_sum / batches))
            writer.writerow([epoch, d_sum / batches, g_sum / batches])
            if epoch % cfg.checkpoint_every == 0:
                checkpoints.append(
                    save_shape_checkpoint(out / f"shape_gan_epoch{epoch}.pt", generator, discriminator, epoch)
                )
    final_name = f"shape_gan_epoch{cfg.epochs}.pt"
    if not checkpoints or checkpoints[-1].name != final_name:
        checkpoints.append(
            save_shape_checkpoint(out / final_name, generator, discriminator, cfg.epochs)
        )
    return ShapeTrainResult(
        generator=generator,
        discriminator=discriminator,
        checkpoints=checkpoints,
        log_path=log_path,
        epoch_losses=epoch_losses,
    )
