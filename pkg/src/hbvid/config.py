"""Run configuration: one JSON document drives every CLI command.

Unknown keys are rejected, defaults are filled in, and the fully
defaulted document can be printed back for auditing.
"""

import dataclasses
import json
from dataclasses import dataclass, field

from .consistency import DistillConfig
from .reward import RewardConfig
from .unet import UNetConfig


class ConfigValidationError(ValueError):
    pass


@dataclass(frozen=True)
class ScheduleConfig:
    T: int = 50
    beta_start: float = 1e-3
    beta_end: float = 0.15


@dataclass(frozen=True)
class DataConfig:
    manifest: str = ""
    aesthetic_min: float = 0.3
    compression_min: float = 0.5
    magnitude_min: float = 0.25
    block: int = 8
    radius: int = 4
    recaption_endpoint: str = ""   # empty -> HB_RECAPTION_ENDPOINT or stub


@dataclass(frozen=True)
class TeacherConfig:
    steps: int = 1000
    lr: float = 2e-3
    batch_size: int = 1
    p_uncond: float = 0.1


@dataclass(frozen=True)
class SampleConfig:
    steps: int = 4
    guidance_w: float = 1.0
    prompt: str = "a train passes from left to right"
    fps: float = 8.0
    checkpoint: str = "student_stage2.ckpt"


@dataclass(frozen=True)
class EvalConfig:
    clip: str = ""                 # empty -> <out_dir>/sample.hbvid
    prompt: str = ""               # empty -> sample.prompt
    w_q: float = 4.0
    w_s: float = 1.0


@dataclass(frozen=True)
class BenchConfig:
    teacher_checkpoint: str = "teacher.ckpt"
    student_checkpoint: str = "student_stage2.ckpt"
    teacher_steps: int = 50
    student_steps: int = 4
    repeats: int = 5


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/toy"
    codec_seed: int = 7
    patch_size: int = 4
    reward_model_seed: int = 11
    frames: int = 8
    clip_size: int = 32
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    unet: UNetConfig = field(default_factory=UNetConfig)
    data: DataConfig = field(default_factory=DataConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)


_TUPLE_KEYS = {"channel_mults", "blocks_per_level", "up_blocks_per_level"}

_SECTIONS = {
    "schedule": ScheduleConfig,
    "unet": UNetConfig,
    "data": DataConfig,
    "teacher": TeacherConfig,
    "distill": DistillConfig,
    "reward": RewardConfig,
    "sample": SampleConfig,
    "eval": EvalConfig,
    "bench": BenchConfig,
}


def _build(cls, doc, where):
    if not isinstance(doc, dict):
        raise ConfigValidationError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigValidationError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for key, value in doc.items():
        if key in _TUPLE_KEYS and value is not None:
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigValidationError(f"{where}: {exc}") from exc


def from_dict(doc):
    if not isinstance(doc, dict):
        raise ConfigValidationError("config root must be an object")
    top = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(doc) - top)
    if unknown:
        raise ConfigValidationError(f"unknown top-level keys {unknown}")
    kwargs = {}
    for key, value in doc.items():
        if key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value, key)
        else:
            kwargs[key] = value
    try:
        run = RunConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigValidationError(str(exc)) from exc
    validate(run)
    return run


def load(path, seed=None, out_dir=None):
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise ConfigValidationError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigValidationError(f"config is not valid JSON: {exc}")
    run = from_dict(doc)
    if seed is not None or out_dir is not None:
        updates = {}
        if seed is not None:
            updates["seed"] = seed
        if out_dir is not None:
            updates["out_dir"] = out_dir
        run = dataclasses.replace(run, **updates)
        validate(run)
    return run


def validate(run):
    if run.clip_size % run.patch_size:
        raise ConfigValidationError("clip_size must be divisible by patch_size")
    latent_side = run.clip_size // run.patch_size
    if latent_side % (1 << (run.unet.levels - 1)):
        raise ConfigValidationError(
            f"latent side {latent_side} not divisible across {run.unet.levels} levels"
        )
    if run.unet.latent_channels != 3 * run.patch_size ** 2:
        raise ConfigValidationError(
            "unet.latent_channels must equal 3 * patch_size^2 "
            f"({3 * run.patch_size ** 2}), got {run.unet.latent_channels}"
        )
    if run.schedule.T % run.distill.grid_size:
        raise ConfigValidationError("distill.grid_size must divide schedule.T")
    if run.frames < 1:
        raise ConfigValidationError("frames must be >= 1")


def effective_dict(run):
    return dataclasses.asdict(run)


def effective_json(run):
    return json.dumps(effective_dict(run), indent=2, sort_keys=True)
