"""Least-squares adversarial losses shared by both GANs.

The discriminator drives real scores toward 1 and fake scores toward 0; the
generator drives fake scores toward 1. Both sides are half mean squared
errors, which keeps gradients alive where cross-entropy saturates.
"""

from __future__ import annotations

import torch

from .errors import EmptyBatch


def _check(scores: torch.Tensor, name: str) -> torch.Tensor:
    if not torch.is_tensor(scores):
        scores = torch.as_tensor(scores, dtype=torch.float32)
    if scores.numel() == 0:
        raise EmptyBatch(f"{name} score batch is empty")
    return scores


def lsgan_discriminator_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    real_scores = _check(real_scores, "real")
    fake_scores = _check(fake_scores, "fake")
    return 0.5 * ((real_scores - 1.0) ** 2).mean() + 0.5 * (fake_scores**2).mean()


def lsgan_generator_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    fake_scores = _check(fake_scores, "fake")
    return 0.5 * ((fake_scores - 1.0) ** 2).mean()


def adversarial_losses(
    real_scores: torch.Tensor, fake_scores: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Both sides at once: (discriminator loss, generator loss).

    Convenience for evaluation code; training loops call the two sides
    separately because the generator's term must see non-detached scores.
    """
    return lsgan_discriminator_loss(real_scores, fake_scores), lsgan_generator_loss(fake_scores)
