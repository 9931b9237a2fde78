"""Synthetic clips and manifests used by tests, demos and the docs.

All generators are seeded and produce float32 clips in [-1, 1].
"""

import numpy as np
import torch
from scipy import ndimage

from . import clip_io
from .curation import VideoRecord, write_manifest


def _texture(seed, h, w, sigma=2.0, amplitude=0.9):
    rng = np.random.default_rng(seed)
    base = rng.standard_normal((h, w))
    smooth = ndimage.gaussian_filter(base, sigma, mode="wrap")
    smooth = smooth / (np.abs(smooth).max() + 1e-12)
    return amplitude * smooth


def _color_texture(seed, h, w, sigma=2.0, amplitude=0.9):
    """Three decorrelated channels (rolled copies) so colorfulness is nonzero."""
    tex = _texture(seed, h, w, sigma=sigma, amplitude=amplitude)
    return np.stack([
        tex,
        np.roll(tex, h // 3, axis=0),
        np.roll(tex, w // 3, axis=1),
    ])


def flat_clip(frames=8, size=32, value=0.0):
    return torch.full((frames, 3, size, size), float(value), dtype=torch.float32)


def noise_clip(seed, frames=8, size=32, amplitude=1.0):
    rng = np.random.default_rng(seed)
    arr = amplitude * rng.uniform(-1.0, 1.0, size=(frames, 3, size, size))
    return torch.from_numpy(arr.astype(np.float32))


def blocky_clip(seed, frames=8, size=32, block=8):
    """Static frames of constant 8x8 blocks with distinct random values."""
    rng = np.random.default_rng(seed)
    cells = rng.uniform(-1.0, 1.0, size=(3, size // block, size // block))
    frame = np.repeat(np.repeat(cells, block, axis=1), block, axis=2)
    arr = np.broadcast_to(frame, (frames, 3, size, size)).copy()
    return torch.from_numpy(arr.astype(np.float32))


def translation_clip(seed, frames=8, size=64, shift=2, sigma=1.0):
    """Smooth texture translated horizontally by `shift` px per frame (wrap)."""
    tex = _color_texture(seed, size, size, sigma=sigma)
    arr = np.stack([np.roll(tex, f * shift, axis=2) for f in range(frames)])
    return torch.from_numpy(arr.astype(np.float32))


def zoom_clip(seed, frames=8, size=256, factor=1.05, sigma=1.5):
    """Each frame is a center-scaled copy of the previous (outward dolly zoom).

    Frames are large enough that the per-pair radial displacement spans
    several pixels, which the integer block matcher resolves cleanly.
    """
    tex = _color_texture(seed, size, size, sigma=sigma)
    cy, cx = (size - 1) / 2.0, (size - 1) / 2.0
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    frames_out = []
    for f in range(frames):
        scale = factor ** f
        coords = np.stack([(ys - cy) / scale + cy, (xs - cx) / scale + cx])
        frame = np.stack(
            [ndimage.map_coordinates(ch, coords, order=1, mode="reflect") for ch in tex]
        )
        frames_out.append(frame)
    arr = np.stack(frames_out)
    return torch.from_numpy(arr.astype(np.float32))


def colorful_clip(seed, frames=8, size=32):
    """High-colorfulness, high-contrast moving pattern."""
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0, 2 * np.pi, size=3)
    ys, xs = np.mgrid[0:size, 0:size] / size
    out = np.empty((frames, 3, size, size))
    for f in range(frames):
        for c in range(3):
            out[f, c] = np.sign(
                np.sin(2 * np.pi * (3 * xs + (c + 1) * ys) + phase[c] + 0.7 * f)
            ) * 0.9
    return torch.from_numpy(out.astype(np.float32))


FIXTURE_SPECS = (
    ("zoom", "camera pushes into a forest path", zoom_clip, {}),
    ("translation", "a train passes from left to right", translation_clip, {}),
    ("blocky", "a heavily compressed city timelapse", blocky_clip, {}),
    ("flat", "an empty gray wall", None, {}),
    ("colorful_a", "a parrot in a blooming garden", colorful_clip, {}),
    ("colorful_b", "fireworks over a harbor at night", colorful_clip, {}),
    ("texture_a", "waves rolling onto a sandy beach", translation_clip, {"shift": 1}),
    ("texture_b", "clouds drifting over mountains", translation_clip, {"shift": 3}),
    ("noise", "confetti falling at a street parade", noise_clip, {}),
    ("colorful_c", "a field of tulips swaying in the wind", colorful_clip, {}),
)


def build_fixture_set(directory, frames=8, fps=8.0):
    """Write the 10-record synthetic manifest; returns the records."""
    from pathlib import Path

    Path(directory).mkdir(parents=True, exist_ok=True)
    records = []
    for i, (name, prompt, maker, kwargs) in enumerate(FIXTURE_SPECS):
        if maker is None:
            clip = flat_clip(frames=frames)
        else:
            clip = maker(seed=100 + i, frames=frames, **kwargs)
        path = f"{directory}/{name}.hbvid"
        clip_io.write_clip(path, clip)
        records.append(VideoRecord(id=name, path=path, prompt=prompt, fps=fps))
    write_manifest(f"{directory}/manifest.jsonl", records)
    return records
