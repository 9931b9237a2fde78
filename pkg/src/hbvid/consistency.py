"""Stage-1 training: teacher epsilon-matching and consistency distillation.

The student is trained so that its consistency function agrees between
adjacent points of the probability-flow trajectory, where the lower
point is produced by one DDIM step of the frozen teacher under
classifier-free guidance. The target side is evaluated with an EMA
copy of the student and never receives gradient.
"""

import json
import time
from dataclasses import dataclass, replace

import torch

from .diffusion import add_noise, cfg_combine, ddim_step, predict_z0


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class ConsistencyParameterization:
    """Boundary-respecting skip/output scales: c_skip(t_min) = 1, c_out(t_min) = 0."""

    t_min: int
    sigma_data: float = 0.5
    timestep_scaling: float = 10.0

    def _scaled(self, t):
        if t < self.t_min:
            raise GridError(f"timestep {t} below grid minimum {self.t_min}")
        return (t - self.t_min) / self.timestep_scaling

    def c_skip(self, t):
        s = self._scaled(t)
        return self.sigma_data ** 2 / (s ** 2 + self.sigma_data ** 2)

    def c_out(self, t):
        s = self._scaled(t)
        return s / (s ** 2 + self.sigma_data ** 2) ** 0.5


@dataclass(frozen=True)
class DistillConfig:
    grid_size: int = 50
    skip_k: int = 1
    w_min: float = 5.0
    w_max: float = 8.0
    ema_decay: float = 0.95
    loss_kind: str = "squared"     # "squared" or "huber"
    huber_delta: float = 0.01
    lr: float = 1e-3
    batch_size: int = 1
    steps: int = 500
    seed: int = 0
    sigma_data: float = 0.5
    timestep_scaling: float = 10.0

    def __post_init__(self):
        if self.skip_k < 1:
            raise ValueError("skip_k must be >= 1")
        if self.w_min > self.w_max:
            raise ValueError("w_min must not exceed w_max")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in [0, 1)")
        if self.loss_kind not in ("huber", "squared"):
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")


def solver_grid(T, grid_size):
    """Descending timestep grid T, T-d, ..., d with d = T / grid_size."""
    if grid_size < 2 or T % grid_size:
        raise GridError(f"grid_size {grid_size} must divide T={T}")
    delta = T // grid_size
    return [T - i * delta for i in range(grid_size)]


def consistency_fn(model, z_t, t, cond, parm, schedule):
    """f(z_t, t) = c_skip(t) z_t + c_out(t) z0_hat(z_t, eps(z_t, t))."""
    eps_hat = model(z_t, t, cond)
    z0_hat = predict_z0(z_t, eps_hat, t, schedule)
    return parm.c_skip(t) * z_t + parm.c_out(t) * z0_hat


def _distance(pred, target, cfg):
    if cfg.loss_kind == "squared":
        return torch.nn.functional.mse_loss(pred, target)
    return torch.nn.functional.huber_loss(pred, target, delta=cfg.huber_delta)


def _append_log(log_file, record):
    if log_file is not None:
        log_file.write(json.dumps(record) + "\n")


def teacher_train(model, dataset, schedule, steps, lr, seed, p_uncond=0.1,
                  batch_size=1, log_path=None):
    """Epsilon-matching training with Adam and cosine learning-rate decay;
    conditioning is dropped to the null embedding with probability p_uncond
    so CFG has a trained branch.

    Returns the per-step loss history; the model is updated in place.
    """
    if not dataset:
        raise ValueError("dataset must be nonempty")
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    decay = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=steps)
    history = []
    log_file = open(log_path, "w") if log_path else None
    try:
        for step in range(steps):
            t0 = time.perf_counter()
            loss = 0.0
            for _ in range(batch_size):
                idx = int(torch.randint(len(dataset), (1,), generator=gen))
                z0, cond = dataset[idx]
                t = int(torch.randint(1, schedule.T + 1, (1,), generator=gen))
                eps = torch.randn(z0.shape, generator=gen, dtype=z0.dtype)
                if float(torch.rand((1,), generator=gen)) < p_uncond:
                    cond = replace(cond, null_flag=True)
                z_t = add_noise(z0, eps, t, schedule)
                pred = model(z_t, t, cond)
                loss = loss + torch.nn.functional.mse_loss(pred, eps)
            loss = loss / batch_size
            opt.zero_grad()
            loss.backward()
            opt.step()
            decay.step()
            history.append(loss.item())
            _append_log(log_file, {
                "step": step, "loss": history[-1], "w": None, "t_pair": None,
                "wall_ms": 1000.0 * (time.perf_counter() - t0),
            })
    finally:
        if log_file is not None:
            log_file.close()
    return history


def distill(teacher, student, dataset, schedule, cfg, log_path=None):
    """Consistency distillation against the frozen CFG teacher.

    Returns (history, ema_model); the student is updated in place and the
    EMA copy tracks it with decay cfg.ema_decay.
    """
    if not dataset:
        raise ValueError("dataset must be nonempty")
    grid = solver_grid(schedule.T, cfg.grid_size)
    parm = ConsistencyParameterization(
        t_min=grid[-1], sigma_data=cfg.sigma_data,
        timestep_scaling=cfg.timestep_scaling,
    )
    ema = _clone_model(student)
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(student.parameters(), lr=cfg.lr)
    teacher.requires_grad_(False)
    history = []
    log_file = open(log_path, "w") if log_path else None
    try:
        for step in range(cfg.steps):
            t0 = time.perf_counter()
            loss = 0.0
            last_w, last_pair = None, None
            for _ in range(cfg.batch_size):
                idx = int(torch.randint(len(dataset), (1,), generator=gen))
                z0, cond = dataset[idx]
                i = int(torch.randint(0, cfg.grid_size - cfg.skip_k, (1,), generator=gen))
                t_hi, t_lo = grid[i], grid[i + cfg.skip_k]
                w = cfg.w_min + float(torch.rand((1,), generator=gen)) * (cfg.w_max - cfg.w_min)
                eps = torch.randn(z0.shape, generator=gen, dtype=z0.dtype)
                z_hi = add_noise(z0, eps, t_hi, schedule)
                with torch.no_grad():
                    eps_c = teacher(z_hi, t_hi, cond)
                    eps_u = teacher(z_hi, t_hi, replace(cond, null_flag=True))
                    eps_t = cfg_combine(eps_u, eps_c, w)
                    z_lo = ddim_step(z_hi, eps_t, t_hi, t_lo, schedule)
                    target = consistency_fn(ema, z_lo, t_lo, cond, parm, schedule)
                pred = consistency_fn(student, z_hi, t_hi, cond, parm, schedule)
                loss = loss + _distance(pred, target, cfg)
                last_w, last_pair = w, (t_hi, t_lo)
            loss = loss / cfg.batch_size
            opt.zero_grad()
            loss.backward()
            opt.step()
            with torch.no_grad():
                for p_ema, p_s in zip(ema.parameters(), student.parameters()):
                    p_ema.mul_(cfg.ema_decay).add_(p_s, alpha=1.0 - cfg.ema_decay)
            history.append(loss.item())
            _append_log(log_file, {
                "step": step, "loss": history[-1], "w": last_w,
                "t_pair": list(last_pair), "wall_ms": 1000.0 * (time.perf_counter() - t0),
            })
    finally:
        if log_file is not None:
            log_file.close()
    return history, ema


def _clone_model(model):
    import copy

    twin = copy.deepcopy(model)
    twin.requires_grad_(False)
    return twin
