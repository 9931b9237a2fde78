"""Structural pruning: halve the residual blocks per level, drop the
bottleneck, and transfer retained teacher weights into the student.

Retained blocks are the even-indexed ones within each level (the block
that first sees the level's features survives). Halving is floor-based
with a minimum of one block so every level keeps a computation path.
"""

import json
from dataclasses import dataclass, replace

from .unet import VideoUNet


class TransferError(ValueError):
    pass


@dataclass(frozen=True)
class PruneMap:
    pairs: tuple               # ((student_name, teacher_name), ...)
    retained_down: tuple       # per level, retained teacher block indices
    retained_up: tuple

    def to_json(self):
        return json.dumps(
            {
                "mapping": {s: t for s, t in self.pairs},
                "retained_down": [list(r) for r in self.retained_down],
                "retained_up": [list(r) for r in self.retained_up],
            },
            indent=2,
            sort_keys=True,
        )


def _retained(n_blocks):
    keep = max(1, n_blocks // 2)
    return tuple(range(0, 2 * keep, 2))[:keep]


def prune_config(teacher, prune_up=True):
    """Derive the student config and the student->teacher parameter map."""
    retained_down = tuple(_retained(b) for b in teacher.blocks_per_level)
    if prune_up:
        retained_up = tuple(_retained(b) for b in teacher.up_blocks)
    else:
        retained_up = tuple(tuple(range(b)) for b in teacher.up_blocks)
    student = replace(
        teacher,
        blocks_per_level=tuple(len(r) for r in retained_down),
        up_blocks_per_level=tuple(len(r) for r in retained_up),
        middle_blocks=0,
    )

    pairs = []
    for s_name, _ in VideoUNet(student).named_parameters():
        parts = s_name.split(".")
        if parts[0] in ("down", "up"):
            level, block = int(parts[1]), int(parts[3])
            retained = retained_down if parts[0] == "down" else retained_up
            t_parts = parts[:3] + [str(retained[level][block])] + parts[4:]
            pairs.append((s_name, ".".join(t_parts)))
        else:
            pairs.append((s_name, s_name))
    return student, PruneMap(tuple(pairs), retained_down, retained_up)


def transfer_weights(teacher_params, prune_map):
    """Copy mapped teacher tensors into a complete student store, bitwise."""
    store = {}
    for s_name, t_name in prune_map.pairs:
        if t_name not in teacher_params:
            raise TransferError(f"teacher parameter missing for {s_name}: {t_name}")
        store[s_name] = teacher_params[t_name].detach().clone()
    return store
