"""Tiny spatio-temporal epsilon-prediction U-Net.

The architecture is deliberately shaped so the structural pruning rule
(residual blocks per resolution level, bottleneck middle blocks) is
meaningful: channel changes happen only in the down/up transition
convs, every block within a level keeps its channel count, and levels
are joined by additive skips. That keeps all tensor interfaces intact
when blocks are removed.

Frames interact only through temporal attention; text conditioning
enters every block through single-head cross-attention over a small
set of text tokens; timestep and fps enter as summed sinusoidal
embeddings pushed through a shared MLP.
"""

import math
from dataclasses import dataclass

import torch
from torch import nn


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class UNetConfig:
    levels: int = 2
    base_channels: int = 32
    channel_mults: tuple = (1, 2)
    blocks_per_level: tuple = (2, 2)
    middle_blocks: int = 2
    temporal_attention: bool = True
    text_dim: int = 16
    text_tokens: int = 4
    time_embed_dim: int = 32
    fps_embed: bool = True
    latent_channels: int = 48
    up_blocks_per_level: tuple = None  # defaults to mirroring the down path

    def __post_init__(self):
        if self.levels < 1:
            raise ConfigError("levels must be >= 1")
        if len(self.channel_mults) != self.levels or len(self.blocks_per_level) != self.levels:
            raise ConfigError("channel_mults and blocks_per_level must have one entry per level")
        if any(b < 1 for b in self.blocks_per_level):
            raise ConfigError("blocks_per_level entries must be >= 1")
        if self.up_blocks_per_level is not None:
            if len(self.up_blocks_per_level) != self.levels:
                raise ConfigError("up_blocks_per_level must have one entry per level")
            if any(b < 1 for b in self.up_blocks_per_level):
                raise ConfigError("up_blocks_per_level entries must be >= 1")
        if self.middle_blocks < 0:
            raise ConfigError("middle_blocks must be >= 0")
        if self.base_channels < 1 or any(m < 1 for m in self.channel_mults):
            raise ConfigError("channel counts must be positive")
        if self.text_dim % self.text_tokens:
            raise ConfigError("text_dim must divide into text_tokens")
        if self.time_embed_dim % 2:
            raise ConfigError("time_embed_dim must be even")

    @property
    def level_channels(self):
        return tuple(self.base_channels * m for m in self.channel_mults)

    @property
    def up_blocks(self):
        return self.up_blocks_per_level or self.blocks_per_level


def _num_groups(channels):
    for g in (8, 4, 2):
        if channels % g == 0:
            return g
    return 1


def sinusoidal_embedding(value, dim, dtype=torch.float32):
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half - 1, 1)
    )
    angles = float(value) * freqs
    return torch.cat([torch.sin(angles), torch.cos(angles)]).to(dtype)


class ResBlock(nn.Module):
    def __init__(self, channels, emb_dim):
        super().__init__()
        g = _num_groups(channels)
        self.norm1 = nn.GroupNorm(g, channels)
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, channels)
        self.norm2 = nn.GroupNorm(g, channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x, emb):
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        h = h + self.emb_proj(emb).view(1, -1, 1, 1)
        h = self.conv2(torch.nn.functional.silu(self.norm2(h)))
        return x + h


class CrossAttention(nn.Module):
    """Single-head attention from spatial positions to text tokens."""

    def __init__(self, channels, token_dim):
        super().__init__()
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(token_dim, channels, bias=False)
        self.to_v = nn.Linear(token_dim, channels, bias=False)
        self.to_out = nn.Linear(channels, channels)
        self.scale = channels ** -0.5

    def forward(self, x, tokens):
        n, c, h, w = x.shape
        q = self.to_q(x.permute(0, 2, 3, 1).reshape(-1, c))
        k = self.to_k(tokens)
        v = self.to_v(tokens)
        attn = torch.softmax(q @ k.T * self.scale, dim=-1)
        out = self.to_out(attn @ v)
        return x + out.reshape(n, h, w, c).permute(0, 3, 1, 2)


class TemporalAttention(nn.Module):
    """Single-head self-attention across frames at each spatial location."""

    def __init__(self, channels):
        super().__init__()
        self.to_qkv = nn.Linear(channels, 3 * channels, bias=False)
        self.to_out = nn.Linear(channels, channels)
        self.scale = channels ** -0.5

    def forward(self, x):
        n, c, h, w = x.shape
        seq = x.permute(2, 3, 0, 1).reshape(h * w, n, c)
        q, k, v = self.to_qkv(seq).chunk(3, dim=-1)
        attn = torch.softmax(q @ k.transpose(1, 2) * self.scale, dim=-1)
        out = self.to_out(attn @ v)
        return x + out.reshape(h, w, n, c).permute(2, 3, 0, 1)


class BlockUnit(nn.Module):
    """Residual block plus optional temporal attention plus cross-attention."""

    def __init__(self, channels, emb_dim, token_dim, temporal):
        super().__init__()
        self.res = ResBlock(channels, emb_dim)
        self.tattn = TemporalAttention(channels) if temporal else None
        self.xattn = CrossAttention(channels, token_dim)

    def forward(self, x, emb, tokens):
        x = self.res(x, emb)
        if self.tattn is not None:
            x = self.tattn(x)
        return self.xattn(x, tokens)


class Level(nn.Module):
    def __init__(self, n_blocks, channels, emb_dim, token_dim, temporal):
        super().__init__()
        self.blocks = nn.ModuleList(
            BlockUnit(channels, emb_dim, token_dim, temporal) for _ in range(n_blocks)
        )

    def forward(self, x, emb, tokens):
        for block in self.blocks:
            x = block(x, emb, tokens)
        return x


class VideoUNet(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        chans = config.level_channels
        token_dim = config.text_dim // config.text_tokens
        emb = config.time_embed_dim

        # frame conditions always enter as extra channels (zeros when absent)
        self.in_conv = nn.Conv2d(3 * config.latent_channels, chans[0], 3, padding=1)
        self.time_mlp = nn.Sequential(
            nn.Linear(emb, emb), nn.SiLU(), nn.Linear(emb, emb)
        )
        self.null_text = nn.Parameter(torch.zeros(config.text_dim))

        self.down = nn.ModuleList(
            Level(config.blocks_per_level[i], chans[i], emb, token_dim, config.temporal_attention)
            for i in range(config.levels)
        )
        self.downsample = nn.ModuleList(
            nn.Conv2d(chans[i], chans[i + 1], 3, stride=2, padding=1)
            for i in range(config.levels - 1)
        )
        self.mid = nn.ModuleList(
            BlockUnit(chans[-1], emb, token_dim, config.temporal_attention)
            for _ in range(config.middle_blocks)
        )
        self.up = nn.ModuleList(
            Level(config.up_blocks[i], chans[i], emb, token_dim, config.temporal_attention)
            for i in range(config.levels)
        )
        self.upsample = nn.ModuleList(
            nn.Conv2d(chans[i + 1], chans[i], 3, padding=1)
            for i in range(config.levels - 1)
        )
        self.out_norm = nn.GroupNorm(_num_groups(chans[0]), chans[0])
        self.out_conv = nn.Conv2d(chans[0], config.latent_channels, 3, padding=1)
        # time-gated linear path from the noisy input straight to the output:
        # the epsilon target is dominated by a timestep-dependent multiple of
        # z_t, which the normalized conv trunk represents poorly on its own
        self.skip_conv = nn.Conv2d(config.latent_channels, config.latent_channels, 1)
        self.skip_gate = nn.Linear(config.time_embed_dim, config.latent_channels)

    def _dtype(self):
        return self.in_conv.weight.dtype

    def _embedding(self, t, fps):
        dtype = self._dtype()
        emb = sinusoidal_embedding(t, self.config.time_embed_dim, dtype)
        if self.config.fps_embed:
            emb = emb + sinusoidal_embedding(fps, self.config.time_embed_dim, dtype)
        return self.time_mlp(emb)

    def _tokens(self, cond):
        if cond.null_flag:
            vec = self.null_text
        else:
            vec = cond.text_embedding.to(self._dtype())
        return vec.reshape(self.config.text_tokens, -1)

    def forward(self, z_t, t, cond):
        cfg = self.config
        n, c, h, w = z_t.shape
        if c != cfg.latent_channels:
            raise ConfigError(f"expected {cfg.latent_channels} latent channels, got {c}")
        if (h % (1 << (cfg.levels - 1))) or (w % (1 << (cfg.levels - 1))):
            raise ConfigError(f"latent size {h}x{w} not divisible across {cfg.levels} levels")
        dtype = self._dtype()
        z_t = z_t.to(dtype)

        def frame_cond(latent):
            if latent is None:
                return torch.zeros(n, c, h, w, dtype=dtype)
            return latent.to(dtype).unsqueeze(0).expand(n, -1, -1, -1)

        x = torch.cat(
            [z_t, frame_cond(cond.first_frame_latent), frame_cond(cond.last_frame_latent)],
            dim=1,
        )
        emb = self._embedding(t, cond.fps)
        tokens = self._tokens(cond)

        x = self.in_conv(x)
        skips = []
        for i in range(cfg.levels):
            x = self.down[i](x, emb, tokens)
            skips.append(x)
            if i < cfg.levels - 1:
                x = self.downsample[i](x)
        for block in self.mid:
            x = block(x, emb, tokens)
        for i in reversed(range(cfg.levels)):
            if i < cfg.levels - 1:
                x = torch.nn.functional.interpolate(x, scale_factor=2, mode="nearest")
                x = self.upsample[i](x)
                x = x + skips[i]
            x = self.up[i](x, emb, tokens)
        x = torch.nn.functional.silu(self.out_norm(x))
        gate = (1.0 + self.skip_gate(emb)).view(1, -1, 1, 1)
        return self.out_conv(x) + gate * self.skip_conv(z_t)


def init_params(config, seed):
    """Deterministic parameter store: fan-in Gaussians for weights, zeros for
    biases, the null text embedding and the final output projection."""
    module = VideoUNet(config)
    gen = torch.Generator().manual_seed(seed)
    store = {}
    for name, p in module.named_parameters():
        t = torch.empty_like(p)
        if (name == "null_text" or name.startswith("out_conv")
                or name.startswith("skip_conv") or name.startswith("skip_gate")
                or name.endswith(".bias") or name.endswith("to_out.weight")):
            # attention blocks start as identities so the residual trunk
            # trains first; attention is pulled in by its own gradient
            t.zero_()
        elif p.ndim == 1:
            t.fill_(1.0)  # norm scales
        else:
            fan_in = p.numel() // p.shape[0]
            t.normal_(0.0, fan_in ** -0.5, generator=gen)
        store[name] = t
    return store


def param_count(config):
    module = VideoUNet(config)
    return sum(p.numel() for p in module.parameters())


def build_unet(config, store, dtype=torch.float32):
    """Instantiate a VideoUNet and load a parameter store into it."""
    module = VideoUNet(config)
    module.load_state_dict({k: v for k, v in store.items()})
    return module.to(dtype)


def export_store(module):
    return {k: v.detach().clone() for k, v in module.state_dict().items()}
