"""Acceptance suite: one test per release criterion.

Each test is tagged with the criterion marker; the terminal summary
prints one PASS/FAIL line per criterion.
"""

import dataclasses
import shutil
from pathlib import Path

import pytest
import torch

from hbvid import curation, metrics, pipeline
from hbvid.clip_io import read_clip
from hbvid.codec import LatentCodec
from hbvid.conditioning import ConditioningBundle, embed_text
from hbvid.config import DataConfig, RunConfig, TeacherConfig
from hbvid.consistency import ConsistencyParameterization, DistillConfig, consistency_fn
from hbvid.diffusion import add_noise, ddim_step, sample
from hbvid.params import count_params
from hbvid.pruning import prune_config, transfer_weights
from hbvid.reward import RewardConfig, ToyRewardModel, mixed_reward, reward_finetune, rollout
from hbvid.unet import UNetConfig, build_unet, export_store, init_params, param_count

from conftest import LATENT_SHAPE, ONE_CLIP_PROMPT

FROZEN_SEED = 777


def _ref_sample(trained, schedule):
    return sample(
        trained["teacher"], trained["cond"], schedule, 50, 6.5,
        seed=FROZEN_SEED, shape=LATENT_SHAPE,
    )


@pytest.mark.criterion(1, "pruning ratio in [0.40, 0.60] on the [2,2,2]+2 config")
def test_criterion_1_pruning_ratio():
    teacher_cfg = UNetConfig(
        levels=3, channel_mults=(1, 2, 4), blocks_per_level=(2, 2, 2), middle_blocks=2
    )
    student_cfg, prune_map = prune_config(teacher_cfg)
    teacher_store = init_params(teacher_cfg, 0)
    student_store = transfer_weights(teacher_store, prune_map)
    ratio = count_params(student_store) / count_params(teacher_store)
    assert ratio == param_count(student_cfg) / param_count(teacher_cfg)
    assert 0.40 <= ratio <= 0.60, f"pruning ratio {ratio:.4f} outside [0.40, 0.60]"


@pytest.mark.criterion(2, "codec round trip 1e-5 and isometry 1e-4 over 100 clips")
def test_criterion_2_codec_oracle(codec):
    for seed in range(100):
        gen = torch.Generator().manual_seed(seed)
        clip = 2.0 * torch.rand(2, 3, 16, 16, generator=gen) - 1.0
        latent = codec.encode(clip)
        back = codec.decode(latent)
        assert (back - clip).abs().max().item() < 1e-5
        rel = abs(latent.norm().item() - clip.norm().item()) / clip.norm().item()
        assert rel < 1e-4


@pytest.mark.criterion(3, "DDIM inversion/chaining to 1e-5 and 5% variance law")
def test_criterion_3_solver_oracle(schedule):
    gen = torch.Generator().manual_seed(0)
    z0 = torch.randn(2, 4, 4, 4, generator=gen)
    eps = torch.randn(2, 4, 4, 4, generator=gen)
    for t in (1, 13, 25, 50):
        z_t = add_noise(z0, eps, t, schedule)
        assert (ddim_step(z_t, eps, t, 0, schedule) - z0).abs().max().item() < 1e-5
    # chaining t -> s -> r equals t -> r when the noise estimate is held fixed
    z_t = add_noise(z0, eps, 50, schedule)
    two_hop = ddim_step(ddim_step(z_t, eps, 50, 25, schedule), eps, 25, 10, schedule)
    one_hop = ddim_step(z_t, eps, 50, 10, schedule)
    assert (two_hop - one_hop).abs().max().item() < 1e-5
    # forward marginal: mean sqrt(abar) z0, variance (1 - abar)
    gen = torch.Generator().manual_seed(1)
    draws = torch.randn(10_000, generator=gen, dtype=torch.float64)
    for t in (5, 25, 50):
        z_t = add_noise(torch.full_like(draws, 0.7), draws, t, schedule)
        abar = schedule.alpha_bar(t)
        assert abs(z_t.mean().item() - 0.7 * abar ** 0.5) < 0.05 * (1 - abar) ** 0.5
        assert abs(z_t.var().item() / (1.0 - abar) - 1.0) < 0.05


def _fd_max_rel_error(model, loss_fn, n_coords, seed, h=1e-6):
    """Central finite differences on n_coords sampled parameter coordinates."""
    model.zero_grad()
    loss_fn().backward()
    candidates = []
    for p in model.parameters():
        if p.grad is None:
            continue
        g = p.grad.reshape(-1)
        for i in (g.abs() > 1e-6).nonzero().reshape(-1).tolist():
            candidates.append((p, i, float(g[i])))
    assert len(candidates) >= n_coords
    gen = torch.Generator().manual_seed(seed)
    picks = torch.randperm(len(candidates), generator=gen)[:n_coords]
    worst = 0.0
    for k in picks.tolist():
        p, i, g = candidates[k]
        flat = p.data.reshape(-1)
        orig = float(flat[i])
        with torch.no_grad():
            flat[i] = orig + h
            hi = float(loss_fn())
            flat[i] = orig - h
            lo = float(loss_fn())
            flat[i] = orig
        fd = (hi - lo) / (2.0 * h)
        worst = max(worst, abs(g - fd) / max(abs(g), abs(fd), 1e-8))
    return worst


@pytest.mark.criterion(4, "finite-difference gradients within 1e-3 for both losses")
def test_criterion_4_gradient_checks(mini_config, schedule):
    model = build_unet(mini_config, init_params(mini_config, 3), dtype=torch.float64)
    cond = ConditioningBundle(text_embedding=embed_text("gradient check", 8))
    gen = torch.Generator().manual_seed(0)
    z0 = torch.randn(2, 12, 4, 4, generator=gen, dtype=torch.float64)
    eps = torch.randn(2, 12, 4, 4, generator=gen, dtype=torch.float64)
    z_t = add_noise(z0, eps, 25, schedule)

    def eps_loss():
        return torch.nn.functional.mse_loss(model(z_t, 25, cond), eps)

    worst = _fd_max_rel_error(model, eps_loss, n_coords=50, seed=11)
    assert worst < 1e-3, f"epsilon-loss gradient mismatch {worst:.2e}"

    codec2 = LatentCodec(3, patch_size=2)
    reward_model = ToyRewardModel(5, 8)
    rcfg = RewardConfig(grad_scope="full", sample_steps=2, frame_samples=2)
    noise = torch.randn(2, 12, 4, 4, generator=gen, dtype=torch.float64)

    def reward_loss():
        z = rollout(model, cond, schedule, rcfg, noise, with_grad=True)
        pixels = codec2.decode(z)
        r, _, _ = mixed_reward(pixels, cond.text_embedding, reward_model, rcfg)
        return -r

    worst = _fd_max_rel_error(model, reward_loss, n_coords=50, seed=13)
    assert worst < 1e-3, f"reward-loss gradient mismatch {worst:.2e}"


@pytest.mark.criterion(5, "teacher loss <= 0.1, distill loss halves, exact boundary")
def test_criterion_5_stage1_convergence(trained, schedule, mini_config):
    teacher_tail = sum(trained["teacher_history"][-10:]) / 10
    assert teacher_tail <= 0.1, f"teacher tail loss {teacher_tail:.4f} > 0.1"

    hist = trained["distill_history"]
    early = sum(hist[:10]) / 10
    late = sum(hist[-10:]) / 10
    assert late <= 0.5 * early, f"distill loss {early:.3e} -> {late:.3e} not halved"

    # boundary: f(z, t_min) = z exactly, even for random parameters
    model = build_unet(mini_config, init_params(mini_config, 77))
    parm = ConsistencyParameterization(t_min=1)
    cond = ConditioningBundle(text_embedding=embed_text("boundary", 8))
    z = torch.randn(2, 12, 4, 4, generator=torch.Generator().manual_seed(4))
    with torch.no_grad():
        out = consistency_fn(model, z, 1, cond, parm, schedule)
    assert torch.equal(out, z)


@pytest.mark.criterion(6, "distilled 4-step sample beats the undistilled pruned student")
def test_criterion_6_distillation_benefit(trained, schedule):
    ref = _ref_sample(trained, schedule)
    undistilled = build_unet(trained["student_config"], trained["pruned_store"])

    def mse(model):
        out = sample(model, trained["cond"], schedule, 4, 1.0,
                     seed=FROZEN_SEED, shape=LATENT_SHAPE)
        return torch.nn.functional.mse_loss(out, ref).item()

    with torch.no_grad():
        before = mse(undistilled)
        after = mse(trained["student_stage1"])
    assert after < before, f"distilled MSE {after:.4f} !< undistilled MSE {before:.4f}"


@pytest.mark.criterion(7, "reward ascends, <= 25% MSE degradation, lambda=0 no-op")
def test_criterion_7_reward_ascent(trained, schedule, mini_config, codec):
    hist = trained["reward_history"]
    assert len(hist) == 200
    assert hist[-1]["reward_total"] > hist[0]["reward_total"], (
        f"reward {hist[0]['reward_total']:.4f} -> {hist[-1]['reward_total']:.4f}"
    )

    ref = _ref_sample(trained, schedule)

    def mse(model):
        out = sample(model, trained["cond"], schedule, 4, 1.0,
                     seed=FROZEN_SEED, shape=LATENT_SHAPE)
        return torch.nn.functional.mse_loss(out, ref).item()

    with torch.no_grad():
        stage1 = mse(trained["student_stage1"])
        stage2 = mse(trained["student_stage2"])
    assert stage2 <= 1.25 * stage1, (
        f"stage-2 MSE {stage2:.4f} degrades stage-1 MSE {stage1:.4f} by > 25%"
    )

    # zero mixture weights must leave the parameters bitwise untouched
    model = build_unet(mini_config, init_params(mini_config, 21))
    before = export_store(model)
    cond = ConditioningBundle(text_embedding=embed_text("noop", 8))
    cfg = RewardConfig(lambda_img=0.0, lambda_vid=0.0, sample_steps=2, steps=3)
    reward_finetune(model, LatentCodec(3, patch_size=2), ToyRewardModel(5, 8),
                    [("noop", cond)], schedule, cfg, (2, 12, 4, 4))
    after = export_store(model)
    assert all(torch.equal(before[k], after[k]) for k in before)


@pytest.mark.criterion(8, "curation keep set matches the hand-applied rule")
def test_criterion_8_curation_oracle(fixture_dir):
    records = curation.read_manifest(str(fixture_dir / "manifest.jsonl"))
    thresholds = curation.FilterThresholds(
        aesthetic_min=0.3, compression_min=0.5, magnitude_min=0.25
    )
    for rec in records:
        clip = read_clip(rec.path)
        rec.quality = curation.score_quality(clip)
        rec.motion = curation.estimate_motion(clip)
    scored = curation.filter_manifest(records, thresholds)

    by_id = {r.id: r for r in scored}
    zoom, translation = by_id["zoom"].motion, by_id["translation"].motion
    assert zoom.dolly_zoom and zoom.dolly_zoom_score > 0.7
    assert not translation.dolly_zoom and abs(translation.dolly_zoom_score) < 0.2

    hand = {
        r.id: (
            r.quality.aesthetic >= 0.3
            and r.quality.compression >= 0.5
            and r.motion.mean_flow_magnitude >= 0.25
            and not r.motion.dolly_zoom
        )
        for r in scored
    }
    assert {r.id: r.keep for r in scored} == hand
    kept = {r.id for r in scored if r.keep}
    assert kept == {"translation", "colorful_a", "colorful_b", "colorful_c",
                    "texture_a", "texture_b", "noise"}


@pytest.mark.criterion(9, "score aggregation matches hand values to 1e-12")
def test_criterion_9_metric_aggregation():
    names = metrics.QUALITY_METRICS

    # vector A: equal weights, scores 0.1 .. 0.7
    rep = metrics.aggregate(
        {n: 0.1 * (i + 1) for i, n in enumerate(names)},
        {"overall_consistency": 0.9},
    )
    assert abs(rep.quality_score - 0.4) < 1e-12
    assert abs(rep.semantic_score - 0.9) < 1e-12
    assert abs(rep.total_score - 0.5) < 1e-12

    # vector B: weights 1..7 against scores 0.1 .. 0.7, w_q = 3, w_s = 2
    rep = metrics.aggregate(
        {n: 0.1 * (i + 1) for i, n in enumerate(names)},
        {"a": 0.2, "b": 0.4},
        quality_weights={n: float(i + 1) for i, n in enumerate(names)},
        w_q=3.0, w_s=2.0,
    )
    assert abs(rep.quality_score - 0.5) < 1e-12
    assert abs(rep.semantic_score - 0.3) < 1e-12
    assert abs(rep.total_score - 0.42) < 1e-12

    # vector C: constant input is invariant under any weighting
    rep = metrics.aggregate(
        {n: 0.625 for n in names}, {"a": 0.625}, w_q=4.0, w_s=1.0
    )
    assert rep.quality_score == 0.625
    assert rep.semantic_score == 0.625
    assert rep.total_score == 0.625


@pytest.mark.criterion(10, "speedup >= 10x with self-comparison control in [0.8, 1.25]")
def test_criterion_10_speedup(schedule):
    cfg = UNetConfig()
    teacher = build_unet(cfg, init_params(cfg, 1))
    student_cfg, prune_map = prune_config(cfg)
    student = build_unet(student_cfg, transfer_weights(export_store(teacher), prune_map))
    cond = ConditioningBundle(text_embedding=embed_text(ONE_CLIP_PROMPT, 16))
    report = pipeline.bench_latency(
        teacher, student, cond, schedule, LATENT_SHAPE,
        teacher_steps=50, student_steps=4, repeats=5, seed=0,
    )
    assert report["speedup"] >= 10.0, f"speedup {report['speedup']:.2f} < 10"
    control = pipeline.bench_latency(
        teacher, teacher, cond, schedule, LATENT_SHAPE,
        teacher_steps=50, student_steps=50, repeats=5, seed=0,
    )
    assert 0.8 <= control["speedup"] <= 1.25, (
        f"self-comparison control {control['speedup']:.3f} outside [0.8, 1.25]"
    )


_E2E_ARTIFACTS = (
    "manifest.jsonl", "curate_summary.json", "teacher.ckpt", "prune_map.json",
    "student_pruned.ckpt", "student_stage1.ckpt", "student_stage1_ema.ckpt",
    "student_stage2.ckpt", "sample.hbvid", "eval_report.json",
)


def _run_pipeline(run):
    pipeline.cmd_curate(run)
    pipeline.cmd_teacher(run)
    pipeline.cmd_distill1(run)
    pipeline.cmd_distill2(run)
    pipeline.cmd_sample(run)
    pipeline.cmd_eval(run)
    out = Path(run.out_dir)
    return {name: (out / name).read_bytes() for name in _E2E_ARTIFACTS}


@pytest.mark.criterion(11, "end-to-end rerun is bitwise identical")
def test_criterion_11_e2e_determinism(fixture_dir, tmp_path):
    out = tmp_path / "run"
    run = RunConfig(
        seed=0,
        out_dir=str(out),
        data=DataConfig(manifest=str(fixture_dir / "manifest.jsonl")),
        teacher=TeacherConfig(steps=150),
        distill=DistillConfig(steps=100),
        reward=RewardConfig(steps=20),
    )
    first = _run_pipeline(run)
    shutil.rmtree(out)
    second = _run_pipeline(run)
    for name in _E2E_ARTIFACTS:
        assert first[name] == second[name], f"{name} differs between reruns"
