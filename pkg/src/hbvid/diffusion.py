"""Noise schedule, forward noising, CFG and the deterministic DDIM step.

The DDIM step (eta = 0) doubles as the numerical solver that produces
adjacent points on the probability-flow ODE trajectory during stage-1
distillation.
"""

from dataclasses import dataclass, replace

import torch


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Discrete beta/alpha/alpha_bar tables; index t runs 1..T, alpha_bar[0] = 1."""

    T: int
    betas: torch.Tensor        # (T+1,), betas[0] unused (=0)
    alphas: torch.Tensor       # (T+1,)
    alpha_bars: torch.Tensor   # (T+1,), float64

    def alpha_bar(self, t):
        if not 0 <= t <= self.T:
            raise IndexError(f"timestep {t} outside [0, {self.T}]")
        return float(self.alpha_bars[t])


def build_schedule(T, beta_start=1e-4, beta_end=2e-2):
    if T < 2:
        raise ScheduleError(f"T must be >= 2, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ScheduleError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = torch.zeros(T + 1, dtype=torch.float64)
    betas[1:] = torch.linspace(beta_start, beta_end, T, dtype=torch.float64)
    alphas = 1.0 - betas
    alpha_bars = torch.cumprod(alphas, dim=0)
    return NoiseSchedule(T=T, betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def add_noise(z0, eps, t, schedule):
    """z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps."""
    if z0.shape != eps.shape:
        raise ScheduleError(f"shape mismatch {tuple(z0.shape)} vs {tuple(eps.shape)}")
    if not 1 <= t <= schedule.T:
        raise IndexError(f"timestep {t} outside [1, {schedule.T}]")
    abar = schedule.alpha_bar(t)
    return (abar ** 0.5) * z0 + ((1.0 - abar) ** 0.5) * eps


def cfg_combine(eps_uncond, eps_cond, w):
    if eps_uncond.shape != eps_cond.shape:
        raise ScheduleError("CFG inputs must share a shape")
    return eps_uncond + w * (eps_cond - eps_uncond)


def predict_z0(z_t, eps_hat, t, schedule):
    """The DDIM clean-sample estimate at timestep t."""
    abar = schedule.alpha_bar(t)
    return (z_t - ((1.0 - abar) ** 0.5) * eps_hat) / (abar ** 0.5)


def ddim_step(z_t, eps_hat, t, s, schedule, allow_equal=False):
    """Deterministic DDIM move from timestep t down to s (0 <= s < t)."""
    if s > t or (s == t and not allow_equal):
        raise ScheduleError(f"DDIM step requires s < t, got t={t}, s={s}")
    z0_hat = predict_z0(z_t, eps_hat, t, schedule)
    abar_s = schedule.alpha_bar(s)
    return (abar_s ** 0.5) * z0_hat + ((1.0 - abar_s) ** 0.5) * eps_hat


def sample_timesteps(T, steps):
    """Uniform descending grid with endpoints T and 1, ties rounded down."""
    if steps < 1:
        raise ScheduleError("steps must be >= 1")
    if steps == 1:
        return [T]
    ts = [int(T - i * (T - 1) / (steps - 1)) for i in range(steps)]
    return ts


def sample(model, cond, schedule, steps, w, seed, shape):
    """Full deterministic sampler: seeded z_T, CFG pair per step, DDIM to 0.

    `model` is called as model(z_t, t, cond); the unconditional branch
    reuses `cond` with its null flag raised.
    """
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(*shape, generator=gen, dtype=torch.float32)
    null_cond = replace(cond, null_flag=True)
    ts = sample_timesteps(schedule.T, steps)
    for i, t in enumerate(ts):
        s = ts[i + 1] if i + 1 < len(ts) else 0
        eps_c = model(z, t, cond)
        eps_u = model(z, t, null_cond)
        eps = cfg_combine(eps_u, eps_c, w)
        z = ddim_step(z, eps, t, s, schedule)
    return z
