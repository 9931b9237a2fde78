"""End-to-end command implementations shared by the CLI.

Every command is a pure function of (RunConfig, input artifacts) up to
wall-clock fields in logs: stage seeds are derived from the global
seed, so a rerun with the same config reproduces manifests,
checkpoints and clips bit for bit.
"""

import dataclasses
import json
import os
import statistics
import time
from pathlib import Path

import torch

from . import clip_io, curation, metrics
from .codec import LatentCodec
from .conditioning import ConditioningBundle, embed_text
from .config import ConfigValidationError
from .consistency import distill, teacher_train
from .diffusion import build_schedule, sample
from .params import load_checkpoint, save_checkpoint
from .pruning import prune_config, transfer_weights
from .reward import ToyRewardModel, reward_finetune
from .rng import seed_from_text
from .unet import build_unet, init_params


class MissingArtifactError(FileNotFoundError):
    pass


def _stage_seed(run, offset, extra=0):
    return (run.seed * 10007 + offset + extra) & 0x7FFFFFFF


def make_codec(run):
    return LatentCodec(run.codec_seed, patch_size=run.patch_size)


def make_schedule(run):
    return build_schedule(run.schedule.T, run.schedule.beta_start, run.schedule.beta_end)


def latent_shape(run):
    side = run.clip_size // run.patch_size
    return (run.frames, 3 * run.patch_size ** 2, side, side)


def _out(run, name):
    path = Path(run.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return str(path / name)


def _require(path, what):
    if not os.path.exists(path):
        raise MissingArtifactError(f"missing {what}: {path} (run the producing command first)")
    return path


def _recaption_client(run):
    endpoint = run.data.recaption_endpoint or os.environ.get("HB_RECAPTION_ENDPOINT", "")
    if endpoint:
        return curation.HttpRecaptionClient(endpoint)
    return curation.StubRecaptionClient()


# --- curate ------------------------------------------------------------

def cmd_curate(run):
    """Score, motion-filter and recaption the raw manifest."""
    raw_path = _require(run.data.manifest, "input manifest") if run.data.manifest else None
    if raw_path is None:
        raise ConfigValidationError("data.manifest must be set for curate")
    records = curation.read_manifest(raw_path)
    client = _recaption_client(run)
    scored = []
    io_dropped = 0
    for rec in records:
        try:
            clip = clip_io.read_clip(rec.path)
            clip_io.validate_video(clip)
            rec.quality = curation.score_quality(clip)
            rec.motion = curation.estimate_motion(
                clip, block=run.data.block, radius=run.data.radius
            )
        except (OSError, clip_io.ClipFormatError, curation.ManifestError):
            io_dropped += 1
            continue
        rec.recaption = curation.recaption(rec.prompt, client)
        scored.append(rec)
    thresholds = curation.FilterThresholds(
        aesthetic_min=run.data.aesthetic_min,
        compression_min=run.data.compression_min,
        magnitude_min=run.data.magnitude_min,
    )
    scored = curation.filter_manifest(scored, thresholds)
    kept = sum(1 for r in scored if r.keep)
    dropped_dolly = sum(1 for r in scored if not r.keep and r.motion.dolly_zoom)
    dropped_quality = sum(1 for r in scored if not r.keep and not r.motion.dolly_zoom)
    summary = {
        "input": len(records),
        "kept": kept,
        "dropped_io": io_dropped,
        "dropped_quality": dropped_quality,
        "dropped_dolly_zoom": dropped_dolly,
    }
    curation.write_manifest(_out(run, "manifest.jsonl"), scored)
    with open(_out(run, "curate_summary.json"), "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    return summary


# --- dataset -----------------------------------------------------------

def _kept_records(run):
    path = _require(_out(run, "manifest.jsonl"), "curated manifest")
    records = [r for r in curation.read_manifest(path) if r.keep]
    if not records:
        raise ConfigValidationError("curated manifest has no kept records")
    return records


def _training_frames(clip, run, record_id):
    """Pick run.frames frames with a per-clip dynamic stride in {1, 2, 3}."""
    n = clip.shape[0]
    if n < run.frames:
        raise ConfigValidationError(
            f"clip {record_id!r} has {n} frames, need at least {run.frames}"
        )
    strides = [s for s in (1, 2, 3) if (run.frames - 1) * s + 1 <= n]
    pick = seed_from_text(f"{record_id}|{run.seed}") % len(strides)
    stride = strides[pick]
    return clip[: (run.frames - 1) * stride + 1 : stride]


def build_dataset(run, codec):
    """(z0 latent, conditioning) pairs from the curated manifest."""
    dataset = []
    for rec in _kept_records(run):
        clip = clip_io.read_clip(rec.path)
        clip = _training_frames(clip, run, rec.id)
        clip = clip[:, :, : run.clip_size, : run.clip_size]
        z0 = codec.encode(clip)
        prompt = rec.recaption or rec.prompt
        cond = ConditioningBundle(
            text_embedding=embed_text(prompt, run.unet.text_dim), fps=rec.fps
        )
        dataset.append((z0, cond))
    return dataset


def _prompts(run):
    out = []
    for rec in _kept_records(run):
        prompt = rec.recaption or rec.prompt
        cond = ConditioningBundle(
            text_embedding=embed_text(prompt, run.unet.text_dim), fps=rec.fps
        )
        out.append((prompt, cond))
    return out


# --- training stages ----------------------------------------------------

def cmd_teacher(run):
    codec = make_codec(run)
    schedule = make_schedule(run)
    dataset = build_dataset(run, codec)
    model = build_unet(run.unet, init_params(run.unet, _stage_seed(run, 1)))
    history = teacher_train(
        model, dataset, schedule,
        steps=run.teacher.steps, lr=run.teacher.lr,
        seed=_stage_seed(run, 2), p_uncond=run.teacher.p_uncond,
        batch_size=run.teacher.batch_size,
        log_path=_out(run, "teacher_log.jsonl"),
    )
    save_checkpoint(_out(run, "teacher.ckpt"), model.state_dict(), run.unet)
    return history


def cmd_distill1(run):
    teacher_store, teacher_cfg = load_checkpoint(
        _require(_out(run, "teacher.ckpt"), "teacher checkpoint")
    )
    student_cfg, prune_map = prune_config(teacher_cfg)
    with open(_out(run, "prune_map.json"), "w", encoding="utf-8") as f:
        f.write(prune_map.to_json())
    student_store = transfer_weights(teacher_store, prune_map)
    save_checkpoint(_out(run, "student_pruned.ckpt"), student_store, student_cfg)

    codec = make_codec(run)
    schedule = make_schedule(run)
    dataset = build_dataset(run, codec)
    teacher = build_unet(teacher_cfg, teacher_store)
    student = build_unet(student_cfg, student_store)
    cfg = dataclasses.replace(run.distill, seed=_stage_seed(run, 3, run.distill.seed))
    history, ema = distill(
        teacher, student, dataset, schedule, cfg,
        log_path=_out(run, "distill_log.jsonl"),
    )
    save_checkpoint(_out(run, "student_stage1.ckpt"), student.state_dict(), student_cfg)
    save_checkpoint(_out(run, "student_stage1_ema.ckpt"), ema.state_dict(), student_cfg)
    return history


def cmd_distill2(run):
    store, cfg_unet = load_checkpoint(
        _require(_out(run, "student_stage1.ckpt"), "stage-1 student checkpoint")
    )
    codec = make_codec(run)
    schedule = make_schedule(run)
    model = build_unet(cfg_unet, store)
    reward_model = ToyRewardModel(run.reward_model_seed, run.unet.text_dim)
    cfg = dataclasses.replace(run.reward, seed=_stage_seed(run, 4, run.reward.seed))
    history = reward_finetune(
        model, codec, reward_model, _prompts(run), schedule, cfg,
        latent_shape(run), log_path=_out(run, "reward_log.jsonl"),
    )
    save_checkpoint(_out(run, "student_stage2.ckpt"), model.state_dict(), cfg_unet)
    return history


# --- sampling / evaluation / benchmark ----------------------------------

def _resolve(run, name):
    return name if os.path.isabs(name) else _out(run, name)


def cmd_sample(run):
    store, cfg_unet = load_checkpoint(
        _require(_resolve(run, run.sample.checkpoint), "sampling checkpoint")
    )
    model = build_unet(cfg_unet, store)
    codec = make_codec(run)
    schedule = make_schedule(run)
    cond = ConditioningBundle(
        text_embedding=embed_text(run.sample.prompt, cfg_unet.text_dim),
        fps=run.sample.fps,
    )
    with torch.no_grad():
        z0 = sample(
            model, cond, schedule, run.sample.steps, run.sample.guidance_w,
            seed=_stage_seed(run, 5), shape=latent_shape(run),
        )
        clip = codec.decode(z0, clamp=True)
    path = _out(run, "sample.hbvid")
    clip_io.write_clip(path, clip)
    return path


def cmd_eval(run):
    clip_path = run.eval.clip or _out(run, "sample.hbvid")
    clip = clip_io.read_clip(_require(clip_path, "clip to evaluate"))
    prompt = run.eval.prompt or run.sample.prompt
    reward_model = ToyRewardModel(run.reward_model_seed, run.unet.text_dim)
    quality = metrics.quality_sub_metrics(clip)
    semantic = {
        "overall_consistency": metrics.overall_consistency(
            clip, embed_text(prompt, run.unet.text_dim), reward_model
        )
    }
    report = metrics.aggregate(quality, semantic, w_q=run.eval.w_q, w_s=run.eval.w_s)
    path = _out(run, "eval_report.json")
    with open(path, "w", encoding="utf-8") as f:
        f.write(report.to_json())
    return report


def bench_latency(teacher_model, student_model, cond, schedule, shape,
                  teacher_steps=50, student_steps=4, repeats=5, seed=0):
    """Median wall-clock of full clip sampling per configuration."""
    if repeats < 3:
        raise ConfigValidationError("bench repeats must be >= 3")

    def run_once(model, steps):
        with torch.no_grad():
            sample(model, cond, schedule, steps, 1.0, seed=seed, shape=shape)

    def timed(model, steps):
        run_once(model, steps)  # warm-up
        samples = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            run_once(model, steps)
            samples.append(time.perf_counter() - t0)
        return statistics.median(samples)

    teacher_latency = timed(teacher_model, teacher_steps)
    student_latency = timed(student_model, student_steps)
    speedup = teacher_latency / student_latency
    steps_ratio = teacher_steps / student_steps
    return {
        "teacher_latency_s": teacher_latency,
        "student_latency_s": student_latency,
        "speedup": speedup,
        "steps_ratio": steps_ratio,
        "per_step_ratio": speedup / steps_ratio,
        "teacher_steps": teacher_steps,
        "student_steps": student_steps,
        "repeats": repeats,
    }


def cmd_bench(run):
    t_store, t_cfg = load_checkpoint(
        _require(_resolve(run, run.bench.teacher_checkpoint), "teacher checkpoint")
    )
    s_store, s_cfg = load_checkpoint(
        _require(_resolve(run, run.bench.student_checkpoint), "student checkpoint")
    )
    schedule = make_schedule(run)
    cond = ConditioningBundle(
        text_embedding=embed_text(run.sample.prompt, t_cfg.text_dim), fps=run.sample.fps
    )
    report = bench_latency(
        build_unet(t_cfg, t_store), build_unet(s_cfg, s_store), cond, schedule,
        latent_shape(run),
        teacher_steps=run.bench.teacher_steps,
        student_steps=run.bench.student_steps,
        repeats=run.bench.repeats,
        seed=_stage_seed(run, 6),
    )
    with open(_out(run, "bench.json"), "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    return report
