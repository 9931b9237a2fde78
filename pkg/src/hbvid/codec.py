"""Fixed orthonormal patch codec between pixel and latent space.

Each frame is cut into non-overlapping p x p patches; every flattened
patch vector (channel-first, then row-major within the patch) is
multiplied by a fixed orthonormal matrix Q of size 3p^2 x 3p^2. Q is
generated from the codec seed: splitmix64 -> Box-Muller Gaussians fill
the matrix row-major, then columns are orthonormalized left to right
by modified Gram-Schmidt. The transform is an exact isometry, so the
round trip and energy preservation have closed-form oracles.
"""

import numpy as np
import torch

from . import rng


class CodecShapeError(ValueError):
    pass


class LatentCodec:
    """Invertible pixel<->latent map; immutable and safe to share."""

    def __init__(self, seed, patch_size=4, channels=3):
        self.seed = seed
        self.patch_size = patch_size
        self.channels = channels
        self.latent_channels = channels * patch_size * patch_size
        d = self.latent_channels
        raw = rng.gaussians(seed, d * d).reshape(d, d)
        self._q = torch.from_numpy(_gram_schmidt_columns(raw))

    def basis(self, dtype=torch.float64):
        return self._q.to(dtype)

    def encode(self, video):
        """(N, 3, H, W) -> (N, 3p^2, H/p, W/p). H and W must divide by p."""
        p = self.patch_size
        n, c, h, w = video.shape
        if c != self.channels:
            raise CodecShapeError(f"expected {self.channels} channels, got {c}")
        if h % p or w % p:
            raise CodecShapeError(f"frame size {h}x{w} not divisible by patch {p}")
        patches = _to_patches(video, p)  # (N, h/p, w/p, 3p^2)
        q = self._q.to(patches.dtype)
        latent = patches @ q.T
        return latent.permute(0, 3, 1, 2).contiguous()

    def decode(self, latent, clamp=False):
        """(N, 3p^2, h, w) -> (N, 3, h*p, w*p); clamp only in the sampling path."""
        p = self.patch_size
        if latent.shape[1] != self.latent_channels:
            raise CodecShapeError(
                f"expected {self.latent_channels} latent channels, got {latent.shape[1]}"
            )
        q = self._q.to(latent.dtype)
        patches = latent.permute(0, 2, 3, 1) @ q
        video = _from_patches(patches, self.channels, p)
        if clamp:
            video = video.clamp(-1.0, 1.0)
        return video

    def validate_latent(self, latent):
        if latent.ndim != 4 or latent.shape[1] != self.latent_channels:
            raise CodecShapeError(f"bad latent shape {tuple(latent.shape)}")
        if not torch.isfinite(latent).all():
            raise CodecShapeError("latent contains non-finite values")


def _gram_schmidt_columns(mat):
    q = np.array(mat, dtype=np.float64)
    d = q.shape[1]
    for j in range(d):
        for i in range(j):
            q[:, j] -= (q[:, i] @ q[:, j]) * q[:, i]
        q[:, j] /= np.linalg.norm(q[:, j])
    return q


def _to_patches(video, p):
    n, c, h, w = video.shape
    x = video.reshape(n, c, h // p, p, w // p, p)
    x = x.permute(0, 2, 4, 1, 3, 5)  # (N, h/p, w/p, c, p, p)
    return x.reshape(n, h // p, w // p, c * p * p)


def _from_patches(patches, c, p):
    n, hp, wp, _ = patches.shape
    x = patches.reshape(n, hp, wp, c, p, p)
    x = x.permute(0, 3, 1, 4, 2, 5)
    return x.reshape(n, c, hp * p, wp * p)
