"""Conditioning inputs for the denoiser: text, fps, optional boundary frames."""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from . import rng


@dataclass(frozen=True)
class ConditioningBundle:
    text_embedding: torch.Tensor                 # (text_dim,)
    fps: float = 8.0
    first_frame_latent: Optional[torch.Tensor] = None  # (c_lat, h, w)
    last_frame_latent: Optional[torch.Tensor] = None   # (c_lat, h, w)
    null_flag: bool = False

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")


def embed_text(prompt, dim):
    """Deterministic unit-norm stand-in for a text encoder output."""
    seed = rng.seed_from_text(prompt)
    v = rng.gaussians(seed, dim)
    v = v / np.linalg.norm(v)
    return torch.from_numpy(v).to(torch.float32)
