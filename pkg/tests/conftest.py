"""Shared fixtures: the synthetic clip corpus and the trained model chain.

The expensive session fixtures (teacher training, distillation, reward
fine-tuning) are computed once and shared across the acceptance tests.
"""

import dataclasses

import pytest
import torch

from hbvid import fixtures
from hbvid.clip_io import read_clip
from hbvid.codec import LatentCodec
from hbvid.conditioning import ConditioningBundle, embed_text
from hbvid.consistency import DistillConfig, distill, teacher_train
from hbvid.diffusion import build_schedule
from hbvid.pruning import prune_config, transfer_weights
from hbvid.reward import RewardConfig, ToyRewardModel, reward_finetune
from hbvid.unet import UNetConfig, build_unet, export_store, init_params

ONE_CLIP_PROMPT = "a train passes from left to right"
LATENT_SHAPE = (8, 48, 8, 8)


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("fixtures")
    fixtures.build_fixture_set(str(d))
    return d


@pytest.fixture(scope="session")
def schedule():
    return build_schedule(50, 1e-3, 0.15)


@pytest.fixture(scope="session")
def codec():
    return LatentCodec(7, patch_size=4)


@pytest.fixture(scope="session")
def one_clip_dataset(fixture_dir, codec):
    clip = read_clip(str(fixture_dir / "translation.hbvid"))[:, :, :32, :32]
    cond = ConditioningBundle(text_embedding=embed_text(ONE_CLIP_PROMPT, 16))
    return [(codec.encode(clip), cond)]


@pytest.fixture(scope="session")
def mini_config():
    """Smallest legal denoiser, used for gradient checks and fast unit tests."""
    return UNetConfig(
        levels=1, base_channels=4, channel_mults=(1,), blocks_per_level=(1,),
        middle_blocks=0, temporal_attention=True, text_dim=8, text_tokens=2,
        time_embed_dim=8, latent_channels=12,
    )


@pytest.fixture(scope="session")
def trained(one_clip_dataset, schedule, codec):
    """Teacher -> prune -> distill -> reward chain on the 1-clip dataset."""
    cfg = UNetConfig()
    teacher = build_unet(cfg, init_params(cfg, 1234))
    teacher_history = teacher_train(
        teacher, one_clip_dataset, schedule, steps=1000, lr=2e-3, seed=5678
    )

    student_cfg, prune_map = prune_config(cfg)
    pruned_store = transfer_weights(export_store(teacher), prune_map)
    student = build_unet(student_cfg, {k: v.clone() for k, v in pruned_store.items()})
    distill_cfg = DistillConfig(seed=999)
    distill_history, ema = distill(teacher, student, one_clip_dataset, schedule, distill_cfg)
    stage1_store = export_store(student)

    stage2 = build_unet(student_cfg, {k: v.clone() for k, v in stage1_store.items()})
    reward_model = ToyRewardModel(11, 16)
    reward_cfg = RewardConfig(seed=4242)
    prompts = [(ONE_CLIP_PROMPT, one_clip_dataset[0][1])]
    reward_history = reward_finetune(
        stage2, codec, reward_model, prompts, schedule, reward_cfg, LATENT_SHAPE
    )

    return {
        "teacher_config": cfg,
        "teacher": teacher,
        "teacher_history": teacher_history,
        "student_config": student_cfg,
        "prune_map": prune_map,
        "pruned_store": pruned_store,
        "student_stage1": student,
        "stage1_store": stage1_store,
        "ema": ema,
        "distill_history": distill_history,
        "student_stage2": stage2,
        "reward_history": reward_history,
        "reward_model": reward_model,
        "reward_config": reward_cfg,
        "cond": one_clip_dataset[0][1],
    }


# --- acceptance-criteria reporting ---------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(num, description): acceptance criterion id"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker and rep.when == "call":
        num, desc = marker.args
        _CRITERIA[num] = (desc, rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(_CRITERIA):
        desc, ok = _CRITERIA[num]
        terminalreporter.write_line(
            f"criterion {num:2d} [{'PASS' if ok else 'FAIL'}] {desc}"
        )
