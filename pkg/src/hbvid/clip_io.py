"""Bit-exact raw clip container (.hbvid).

Layout: magic b"HBV1", four little-endian uint32 (N, C, H, W), then
N*C*H*W little-endian float32 values in frame-major, channel-next,
row-major order.
"""

import struct

import numpy as np
import torch

MAGIC = b"HBV1"
_HEADER = struct.Struct("<4sIIII")


class ClipFormatError(ValueError):
    pass


def write_clip(path, clip):
    """Write an (N, C, H, W) tensor or array as float32."""
    arr = np.ascontiguousarray(_as_array(clip), dtype="<f4")
    if arr.ndim != 4:
        raise ClipFormatError(f"expected 4D clip, got shape {arr.shape}")
    n, c, h, w = arr.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, n, c, h, w))
        f.write(arr.tobytes())


def read_clip(path):
    """Read a .hbvid file into a float32 torch tensor of shape (N, C, H, W)."""
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ClipFormatError(f"truncated header in {path}")
        magic, n, c, h, w = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ClipFormatError(f"bad magic {magic!r} in {path}")
        payload = f.read(4 * n * c * h * w)
    if len(payload) != 4 * n * c * h * w:
        raise ClipFormatError(f"truncated payload in {path}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(n, c, h, w)
    return torch.from_numpy(arr.copy())


def _as_array(clip):
    if isinstance(clip, torch.Tensor):
        return clip.detach().cpu().numpy()
    return np.asarray(clip)


def validate_video(clip, tol=1e-6):
    """Check VideoTensor invariants: 3 channels, finite, values in [-1, 1]."""
    if clip.ndim != 4 or clip.shape[1] != 3:
        raise ClipFormatError(f"expected (N, 3, H, W) video, got {tuple(clip.shape)}")
    if not torch.isfinite(clip).all():
        raise ClipFormatError("video contains non-finite values")
    if clip.abs().max().item() > 1.0 + tol:
        raise ClipFormatError("video values exceed [-1, 1]")
