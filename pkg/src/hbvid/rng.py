"""Portable deterministic random streams.

Everything that must be bit-reproducible across runs and platforms
(codec basis, text embeddings, reward projections) is generated from a
splitmix64 stream rather than a library PRNG, so the byte-level output
is pinned by this file alone.
"""

import hashlib

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(seed):
    """Yield an endless stream of 64-bit integers from a 64-bit seed."""
    state = seed & _MASK
    while True:
        state = (state + 0x9E3779B97F4A7C15) & _MASK
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        yield z ^ (z >> 31)


def uniforms(seed, n):
    """n doubles in (0, 1), each built from the top 53 bits of one draw."""
    gen = splitmix64(seed)
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        # +1 keeps the value strictly positive for log() downstream
        out[i] = ((next(gen) >> 11) + 1) * 2.0 ** -53
    return out


def gaussians(seed, n):
    """n standard normal doubles via Box-Muller on the splitmix stream."""
    m = (n + 1) // 2
    u = uniforms(seed, 2 * m)
    r = np.sqrt(-2.0 * np.log(u[:m]))
    theta = 2.0 * np.pi * u[m:]
    z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
    return z[:n]


def seed_from_text(text):
    """Stable 64-bit seed derived from a string (blake2b, first 8 bytes)."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")
