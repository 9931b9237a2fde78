
import pytest
import torch

from hbvid import diffusion
from hbvid.conditioning import ConditioningBundle


def test_schedule_hand_values():
    # T = 2, betas (0.1, 0.2): alphas (0.9, 0.8), alpha_bars (1, 0.9, 0.72)
    s = diffusion.build_schedule(2, 0.1, 0.2)
    assert s.alpha_bar(0) == pytest.approx(1.0, abs=1e-15)
    assert s.alpha_bar(1) == pytest.approx(0.9, abs=1e-15)
    assert s.alpha_bar(2) == pytest.approx(0.72, abs=1e-15)


def test_toy_schedule_terminal_alpha_bar():
    # frozen regression: the default toy schedule is nearly pure noise at T
    s = diffusion.build_schedule(50, 1e-3, 0.15)
    assert s.alpha_bar(50) < 0.05
    assert s.alpha_bar(50) == pytest.approx(0.017, abs=0.005)


def test_schedule_validation():
    with pytest.raises(diffusion.ScheduleError):
        diffusion.build_schedule(1, 0.1, 0.2)
    with pytest.raises(diffusion.ScheduleError):
        diffusion.build_schedule(10, 0.2, 0.1)
    with pytest.raises(diffusion.ScheduleError):
        diffusion.build_schedule(10, 0.0, 0.1)
    with pytest.raises(diffusion.ScheduleError):
        diffusion.build_schedule(10, 0.1, 1.0)


def test_add_noise_formula(schedule):
    z0 = torch.full((2, 2), 2.0, dtype=torch.float64)
    eps = torch.full((2, 2), -1.0, dtype=torch.float64)
    t = 20
    abar = schedule.alpha_bar(t)
    expected = 2.0 * abar ** 0.5 - (1.0 - abar) ** 0.5
    out = diffusion.add_noise(z0, eps, t, schedule)
    assert torch.allclose(out, torch.full((2, 2), expected, dtype=torch.float64))
    with pytest.raises(IndexError):
        diffusion.add_noise(z0, eps, 0, schedule)
    with pytest.raises(diffusion.ScheduleError):
        diffusion.add_noise(z0, eps[0], t, schedule)


def test_cfg_combine_hand_values():
    u = torch.tensor([1.0, 0.0])
    c = torch.tensor([3.0, 2.0])
    assert torch.equal(diffusion.cfg_combine(u, c, 0.0), u)
    assert torch.equal(diffusion.cfg_combine(u, c, 1.0), c)
    assert torch.equal(diffusion.cfg_combine(u, c, 2.0), torch.tensor([5.0, 4.0]))


def test_ddim_inverts_add_noise(schedule):
    gen = torch.Generator().manual_seed(0)
    z0 = torch.randn(3, 4, dtype=torch.float64, generator=gen)
    eps = torch.randn(3, 4, dtype=torch.float64, generator=gen)
    z_t = diffusion.add_noise(z0, eps, 37, schedule)
    assert torch.allclose(diffusion.predict_z0(z_t, eps, 37, schedule), z0)
    assert torch.allclose(diffusion.ddim_step(z_t, eps, 37, 0, schedule), z0)
    # a step down lands exactly on the forward-noised point for the same eps
    z_s = diffusion.ddim_step(z_t, eps, 37, 11, schedule)
    assert torch.allclose(z_s, diffusion.add_noise(z0, eps, 11, schedule))


def test_ddim_step_ordering(schedule):
    z = torch.zeros(1, 2)
    with pytest.raises(diffusion.ScheduleError):
        diffusion.ddim_step(z, z, 5, 5, schedule)
    diffusion.ddim_step(z, z, 5, 5, schedule, allow_equal=True)
    with pytest.raises(diffusion.ScheduleError):
        diffusion.ddim_step(z, z, 5, 9, schedule)


def test_sample_timesteps():
    assert diffusion.sample_timesteps(50, 1) == [50]
    assert diffusion.sample_timesteps(50, 2) == [50, 1]
    assert diffusion.sample_timesteps(50, 4) == [50, 33, 17, 1]
    ts = diffusion.sample_timesteps(50, 50)
    assert ts == list(range(50, 0, -1))
    with pytest.raises(diffusion.ScheduleError):
        diffusion.sample_timesteps(50, 0)


class _LinearModel:
    """eps_hat = a * z + b, with the conditional branch shifted; analytic."""

    def __init__(self, a=0.1):
        self.a = a
        self.calls = []

    def __call__(self, z, t, cond):
        self.calls.append((t, cond.null_flag))
        shift = 0.0 if cond.null_flag else 0.5
        return self.a * z + shift


def test_sample_is_deterministic_and_calls_both_branches(schedule):
    cond = ConditioningBundle(text_embedding=torch.zeros(4))
    model = _LinearModel()
    out1 = diffusion.sample(model, cond, schedule, 4, 2.0, seed=3, shape=(1, 2, 4, 4))
    out2 = diffusion.sample(_LinearModel(), cond, schedule, 4, 2.0, seed=3,
                            shape=(1, 2, 4, 4))
    assert torch.equal(out1, out2)
    # 4 steps x (conditional, unconditional), descending grid ending at 1
    assert [t for t, _ in model.calls] == [50, 50, 33, 33, 17, 17, 1, 1]
    assert [null for _, null in model.calls] == [False, True] * 4
    out3 = diffusion.sample(_LinearModel(), cond, schedule, 4, 2.0, seed=4,
                            shape=(1, 2, 4, 4))
    assert not torch.equal(out1, out3)


def test_sample_matches_manual_ddim_rollout(schedule):
    cond = ConditioningBundle(text_embedding=torch.zeros(4))
    model = _LinearModel()
    w = 3.0
    out = diffusion.sample(model, cond, schedule, 3, w, seed=9, shape=(1, 1, 2, 2))
    gen = torch.Generator().manual_seed(9)
    z = torch.randn(1, 1, 2, 2, generator=gen)
    ts = diffusion.sample_timesteps(50, 3)
    for i, t in enumerate(ts):
        s = ts[i + 1] if i + 1 < len(ts) else 0
        eps_c = model.a * z + 0.5
        eps_u = model.a * z
        z = diffusion.ddim_step(z, eps_u + w * (eps_c - eps_u), t, s, schedule)
    assert torch.allclose(out, z)
