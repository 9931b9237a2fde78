"""Stage-2 reward-feedback fine-tuning.

Rollouts reuse the deterministic sampler; by default gradient flows
only through the final denoising step and the decoder, and the model
ascends a mixture of an image-text and a video-text reward. The
bundled toy reward projects downsampled grayscale frames through a
fixed seeded linear map and scores cosine similarity against the text
embedding, which keeps every acceptance check analytic.
"""

import json
import time
from dataclasses import dataclass, replace

import torch

from . import rng
from .diffusion import cfg_combine, ddim_step, sample_timesteps


class RewardError(RuntimeError):
    pass


class ToyRewardModel:
    """score_image / score_video contract; higher is better, differentiable."""

    def __init__(self, seed, embed_dim, grid=8):
        if embed_dim < 8:
            raise ValueError("embed_dim must be >= 8")
        self.embed_dim = embed_dim
        self.grid = grid
        w = rng.gaussians(seed, embed_dim * grid * grid).reshape(embed_dim, grid * grid)
        self._w = torch.from_numpy(w / (grid * grid) ** 0.5)

    def project(self, frame):
        """(3, H, W) pixels -> embed_dim feature of the downsampled gray frame."""
        gray = frame.mean(dim=0, keepdim=True).unsqueeze(0)
        pooled = torch.nn.functional.adaptive_avg_pool2d(gray, self.grid)
        return self._w.to(frame.dtype) @ pooled.reshape(-1)

    def score_image(self, frame, text_embedding):
        return torch.nn.functional.cosine_similarity(
            self.project(frame), text_embedding.to(frame.dtype), dim=0, eps=1e-12
        )

    def score_video(self, frames, text_embedding):
        proj = torch.stack([self.project(f) for f in frames]).mean(dim=0)
        return torch.nn.functional.cosine_similarity(
            proj, text_embedding.to(frames.dtype), dim=0, eps=1e-12
        )


@dataclass(frozen=True)
class RewardConfig:
    lambda_img: float = 1.0
    lambda_vid: float = 1.0
    frame_samples: int = 4
    sample_steps: int = 4
    guidance_w: float = 1.0
    grad_scope: str = "final"   # "final" or "full"
    lr: float = 2e-6
    steps: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.lambda_img < 0 or self.lambda_vid < 0:
            raise ValueError("mixture weights must be nonnegative")
        if self.grad_scope not in ("final", "full"):
            raise ValueError(f"unknown grad scope {self.grad_scope!r}")
        if self.frame_samples < 1 or self.sample_steps < 1:
            raise ValueError("frame_samples and sample_steps must be >= 1")


def frame_indices(n_frames, m):
    """m uniformly spaced frame indices, fixed for given (N, m)."""
    if m == 1:
        return [0]
    return [round(i * (n_frames - 1) / (m - 1)) for i in range(m)]


def rollout(model, cond, schedule, cfg, noise, with_grad):
    """Few-step sample from fixed initial noise; gradient scope per config."""
    null_cond = replace(cond, null_flag=True)
    ts = sample_timesteps(schedule.T, cfg.sample_steps)
    z = noise
    for i, t in enumerate(ts):
        s = ts[i + 1] if i + 1 < len(ts) else 0
        final = i + 1 == len(ts)
        grad_here = with_grad and (cfg.grad_scope == "full" or final)
        with torch.enable_grad() if grad_here else torch.no_grad():
            eps_c = model(z, t, cond)
            eps_u = model(z, t, null_cond)
            z = ddim_step(z, cfg_combine(eps_u, eps_c, cfg.guidance_w), t, s, schedule)
    return z


def mixed_reward(pixels, text_embedding, reward_model, cfg, prompt="?"):
    """lambda_img * mean image score over sampled frames + lambda_vid * video score."""
    n = pixels.shape[0]
    idx = frame_indices(n, min(cfg.frame_samples, n))
    r_img = torch.stack(
        [reward_model.score_image(pixels[i], text_embedding) for i in idx]
    ).mean()
    r_vid = reward_model.score_video(pixels, text_embedding)
    total = cfg.lambda_img * r_img + cfg.lambda_vid * r_vid
    if not torch.isfinite(total):
        raise RewardError(f"non-finite reward for prompt {prompt!r}")
    return total, float(r_img.detach()), float(r_vid.detach())


def _prompt_noise(cfg, index, shape, dtype):
    gen = torch.Generator().manual_seed(cfg.seed * 1_000_003 + index)
    return torch.randn(*shape, generator=gen, dtype=torch.float32).to(dtype)


def evaluate_reward(model, codec, reward_model, prompts, schedule, cfg, latent_shape):
    """Mean mixed reward over the prompt set, no parameter update."""
    total = 0.0
    with torch.no_grad():
        for i, (prompt, cond) in enumerate(prompts):
            noise = _prompt_noise(cfg, i, latent_shape, torch.float32)
            z0 = rollout(model, cond, schedule, cfg, noise, with_grad=False)
            pixels = codec.decode(z0)
            r, _, _ = mixed_reward(pixels, cond.text_embedding, reward_model, cfg, prompt)
            total += float(r)
    return total / len(prompts)


def reward_finetune(model, codec, reward_model, prompts, schedule, cfg,
                    latent_shape, log_path=None):
    """Gradient ascent on the mean mixed reward; returns the history of
    pre-update mean rewards (one record per step)."""
    if not prompts:
        raise ValueError("prompt set must be nonempty")
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    history = []
    log_file = open(log_path, "w") if log_path else None
    try:
        for step in range(cfg.steps):
            t0 = time.perf_counter()
            total, img_sum, vid_sum = 0.0, 0.0, 0.0
            for i, (prompt, cond) in enumerate(prompts):
                noise = _prompt_noise(cfg, i, latent_shape, torch.float32)
                z0 = rollout(model, cond, schedule, cfg, noise, with_grad=True)
                pixels = codec.decode(z0)
                r, r_img, r_vid = mixed_reward(
                    pixels, cond.text_embedding, reward_model, cfg, prompt
                )
                total = total + r
                img_sum += r_img
                vid_sum += r_vid
            mean_reward = total / len(prompts)
            opt.zero_grad()
            (-mean_reward).backward()
            opt.step()
            record = {
                "step": step,
                "reward_img": img_sum / len(prompts),
                "reward_vid": vid_sum / len(prompts),
                "reward_total": float(mean_reward.detach()),
            }
            history.append(record)
            if log_file is not None:
                record = dict(record, wall_ms=1000.0 * (time.perf_counter() - t0))
                log_file.write(json.dumps(record) + "\n")
    finally:
        if log_file is not None:
            log_file.close()
    return history
