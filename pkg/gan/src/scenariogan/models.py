"""Conditional generator and critic over sorted binary scenario images.

Both networks condition on the 50-entry feature vector.  The generator
projects noise and feature separately into spatial maps, concatenates them
along channels, and refines through a small convolutional stack ending in a
sigmoid; a straight-through binarization module snaps outputs to {0, 1} at
inference while passing gradients through during training.  The critic gets
the image stacked with a feature map and runs a deeper stack (channel depths
rise then fall) down to a scalar score.
"""

from __future__ import annotations

import torch
from torch import nn

NOISE_LEN = 50
FEATURE_LEN = 50


class _BinarizeFn(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        return (x > 0.5).float()

    @staticmethod
    def backward(ctx, grad):
        return grad


class StraightThroughBinarize(nn.Module):
    """Exact 0/1 forward, identity gradient backward."""

    def forward(self, x):
        return _BinarizeFn.apply(x)


class Generator(nn.Module):
    def __init__(self, rows: int, columns: int, noise_len: int = NOISE_LEN,
                 feature_len: int = FEATURE_LEN, noise_channels: int = 8,
                 feature_channels: int = 8):
        super().__init__()
        self.rows = rows
        self.columns = columns
        self.noise_len = noise_len
        self.feature_len = feature_len
        self.noise_proj = nn.Linear(noise_len, noise_channels * rows * columns)
        self.feature_proj = nn.Linear(feature_len, feature_channels * rows * columns)
        self.noise_channels = noise_channels
        self.feature_channels = feature_channels
        ch = noise_channels + feature_channels
        self.conv = nn.Sequential(
            nn.Conv2d(ch, 32, 3, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(32, 16, 3, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(16, 1, 3, padding=1),
        )
        self.binarize = StraightThroughBinarize()

    def forward(self, noise, feature, binarize: bool = False):
        b = noise.shape[0]
        zn = self.noise_proj(noise).view(b, self.noise_channels, self.rows, self.columns)
        zf = self.feature_proj(feature).view(b, self.feature_channels, self.rows, self.columns)
        x = torch.cat([zn, zf], dim=1)
        x = torch.sigmoid(self.conv(x)).squeeze(1)
        if binarize:
            x = self.binarize(x)
        return x


class Critic(nn.Module):
    def __init__(self, rows: int, columns: int, feature_len: int = FEATURE_LEN):
        super().__init__()
        self.rows = rows
        self.columns = columns
        self.feature_proj = nn.Linear(feature_len, rows * columns)
        self.conv = nn.Sequential(
            nn.Conv2d(2, 16, 3, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(16, 32, 3, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(32, 16, 3, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(16, 8, 3, padding=1), nn.LeakyReLU(0.2),
        )
        self.head = nn.Linear(8 * rows * columns, 1)

    def forward(self, image, feature):
        b = image.shape[0]
        fmap = self.feature_proj(feature).view(b, 1, self.rows, self.columns)
        x = torch.cat([image.unsqueeze(1), fmap], dim=1)
        x = self.conv(x).reshape(b, -1)
        return self.head(x).squeeze(1)


def gradient_penalty(critic, real, fake, feature, generator_device="cpu",
                     rng: torch.Generator | None = None):
    """WGAN-GP term on interpolates between real and generated samples."""
    b = real.shape[0]
    eps = torch.rand(b, 1, 1, generator=rng)
    interp = (eps * real + (1.0 - eps) * fake).requires_grad_(True)
    score = critic(interp, feature)
    grads = torch.autograd.grad(outputs=score.sum(), inputs=interp,
                                create_graph=True)[0]
    norms = grads.reshape(b, -1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()
