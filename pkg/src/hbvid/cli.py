"""Command-line front end.

Exit codes: 0 success, 1 validation error, 2 missing prerequisite
artifact, 3 internal error.
"""

import json
import sys

import click

from . import config as config_mod
from . import pipeline
from .clip_io import ClipFormatError
from .codec import CodecShapeError
from .config import ConfigValidationError
from .consistency import GridError
from .curation import ManifestError
from .diffusion import ScheduleError
from .metrics import MetricConfigError
from .params import CheckpointError
from .pipeline import MissingArtifactError
from .unet import ConfigError

_VALIDATION_ERRORS = (
    ConfigValidationError, ConfigError, ScheduleError, GridError,
    ManifestError, MetricConfigError, CodecShapeError, ClipFormatError,
    CheckpointError, ValueError,
)


def _load(config_path, seed, out):
    return config_mod.load(config_path, seed=seed, out_dir=out)


def _execute(body):
    try:
        body()
    except MissingArtifactError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except _VALIDATION_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    except Exception as exc:  # noqa: BLE001 - stable exit-code contract
        click.echo(f"internal error: {exc}", err=True)
        sys.exit(3)


def _common_options(fn):
    fn = click.option("--config", "config_path", required=True,
                      type=click.Path(), help="Run configuration (JSON).")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="Override the config's global seed.")(fn)
    fn = click.option("--out", type=click.Path(), default=None,
                      help="Override the config's output directory.")(fn)
    fn = click.option("--print-effective-config", is_flag=True,
                      help="Print the fully defaulted config and exit.")(fn)
    return fn


def _command(name, body, help_text):
    @main.command(name=name, help=help_text)
    @_common_options
    def cmd(config_path, seed, out, print_effective_config):
        def run_body():
            run = _load(config_path, seed, out)
            if print_effective_config:
                click.echo(config_mod.effective_json(run))
                return
            body(run)

        _execute(run_body)

    return cmd


@click.group()
def main():
    """Desk-scale text-to-video pipeline: curation, training, distillation,
    reward fine-tuning, sampling, evaluation and benchmarking."""


def _curate(run):
    summary = pipeline.cmd_curate(run)
    click.echo(json.dumps(summary, sort_keys=True))


def _teacher(run):
    history = pipeline.cmd_teacher(run)
    click.echo(f"teacher trained for {len(history)} steps, final loss {history[-1]:.6f}")


def _distill1(run):
    history = pipeline.cmd_distill1(run)
    click.echo(f"stage-1 distillation: {len(history)} steps, final loss {history[-1]:.6f}")


def _distill2(run):
    history = pipeline.cmd_distill2(run)
    click.echo(
        f"stage-2 reward fine-tuning: {len(history)} steps, "
        f"final mean reward {history[-1]['reward_total']:.6f}"
    )


def _sample(run):
    path = pipeline.cmd_sample(run)
    click.echo(f"wrote {path}")


def _eval(run):
    report = pipeline.cmd_eval(run)
    click.echo(
        f"quality {report.quality_score:.4f} semantic {report.semantic_score:.4f} "
        f"total {report.total_score:.4f}"
    )


def _bench(run):
    report = pipeline.cmd_bench(run)
    click.echo(
        f"teacher {report['teacher_latency_s']:.3f}s student "
        f"{report['student_latency_s']:.3f}s speedup {report['speedup']:.2f}x"
    )


_command("curate", _curate, "Score, motion-filter and recaption the raw manifest.")
_command("teacher", _teacher, "Train the latent-diffusion teacher on curated data.")
_command("distill1", _distill1, "Prune the teacher and consistency-distill the student.")
_command("distill2", _distill2, "Reward fine-tuning of the distilled student.")
_command("sample", _sample, "Sample a clip from a checkpoint and write sample.hbvid.")
_command("eval", _eval, "Evaluate a clip and write the aggregated metric report.")
_command("bench", _bench, "Measure teacher-vs-student sampling latency.")


if __name__ == "__main__":
    main()
