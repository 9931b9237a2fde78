"""Benchmark-style score aggregation: seven quality sub-metrics with
analytic built-ins, pluggable semantic providers, and the weighted
Quality/Semantic/Total rollup.

Normalization constants (0.25 for temporal differences, 0.2 for
gradient energy, 1 px flow for "dynamic") are toy scale choices and
documented here rather than claims about any external benchmark.
"""

import json
from dataclasses import dataclass

import numpy as np
import torch

from . import curation


class MetricConfigError(ValueError):
    pass


QUALITY_METRICS = (
    "subject_consistency",
    "background_consistency",
    "temporal_flickering",
    "motion_smoothness",
    "aesthetic_quality",
    "dynamic_degree",
    "imaging_quality",
)


def _pixels01(video):
    return (np.asarray(video, dtype=np.float64) + 1.0) / 2.0


def _frame_features(video, border_only=False):
    """Per-frame 8x8 grayscale downsample, optionally masked to the border ring."""
    px = _pixels01(video).mean(axis=1)  # grayscale (N, H, W)
    n, h, w = px.shape
    t = torch.from_numpy(px).unsqueeze(1)
    feat = torch.nn.functional.adaptive_avg_pool2d(t, 8).squeeze(1).numpy()
    if border_only:
        mask = np.zeros((8, 8), dtype=bool)
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
        feat = feat[:, mask]
    return feat.reshape(n, -1)


def _mean_cosine_to_first(feats):
    if feats.shape[0] < 2:
        return 1.0
    ref = feats[0]
    sims = []
    for f in feats[1:]:
        denom = np.linalg.norm(ref) * np.linalg.norm(f)
        sims.append((ref @ f) / denom if denom > 0 else 1.0)
    return float(np.clip(np.mean(sims), 0.0, 1.0))


def subject_consistency(video):
    return _mean_cosine_to_first(_frame_features(video))


def background_consistency(video):
    return _mean_cosine_to_first(_frame_features(video, border_only=True))


def temporal_flickering(video):
    px = _pixels01(video)
    if px.shape[0] < 2:
        return 1.0
    diff = np.abs(np.diff(px, axis=0)).mean()
    return float(1.0 - np.clip(diff / 0.25, 0.0, 1.0))


def motion_smoothness(video):
    px = _pixels01(video)
    if px.shape[0] < 3:
        return 1.0
    second = np.abs(np.diff(px, n=2, axis=0)).mean()
    return float(1.0 - np.clip(second / 0.25, 0.0, 1.0))


def aesthetic_quality(video):
    return curation.score_quality(video).aesthetic


def dynamic_degree(video, block=8, radius=4):
    if video.shape[0] < 2:
        return 0.0
    flows = curation.block_flow(video, block=block, radius=radius)
    mags = np.linalg.norm(flows, axis=-1)
    return float((mags > 1.0).mean())


def imaging_quality(video):
    px = _pixels01(video).mean(axis=1)
    grads = np.concatenate(
        [np.abs(np.diff(px, axis=1)).ravel(), np.abs(np.diff(px, axis=2)).ravel()]
    )
    return float(np.clip(grads.mean() / 0.2, 0.0, 1.0))


_BUILTINS = {
    "subject_consistency": subject_consistency,
    "background_consistency": background_consistency,
    "temporal_flickering": temporal_flickering,
    "motion_smoothness": motion_smoothness,
    "aesthetic_quality": aesthetic_quality,
    "dynamic_degree": dynamic_degree,
    "imaging_quality": imaging_quality,
}


def quality_sub_metrics(video, providers=None):
    """The seven named quality scores; any entry may be overridden."""
    providers = dict(providers or {})
    scores = {}
    for name in QUALITY_METRICS:
        fn = providers.pop(name, _BUILTINS[name])
        if fn is None:
            raise MetricConfigError(f"no provider for sub-metric {name!r}")
        scores[name] = float(fn(video))
    if providers:
        raise MetricConfigError(f"unknown sub-metrics: {sorted(providers)}")
    return scores


def overall_consistency(video, text_embedding, reward_model):
    """The built-in semantic provider: rescaled video-text reward."""
    frames = video if isinstance(video, torch.Tensor) else torch.as_tensor(video)
    s = float(reward_model.score_video(frames.to(torch.float64), text_embedding))
    return (s + 1.0) / 2.0


@dataclass
class MetricReport:
    quality_sub_scores: dict
    semantic_sub_scores: dict
    quality_weights: dict
    total_weights: dict          # {"quality": w_q, "semantic": w_s}
    quality_score: float
    semantic_score: float
    total_score: float

    def to_json(self):
        return json.dumps(vars(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def aggregate(quality_scores, semantic_scores, quality_weights=None, w_q=4.0, w_s=1.0):
    """Quality = weighted mean of the seven quality scores; Semantic =
    unweighted mean of the supplied providers; Total = their weighted mean."""
    if set(quality_scores) != set(QUALITY_METRICS):
        raise MetricConfigError("quality scores must cover exactly the seven sub-metrics")
    quality_weights = quality_weights or {name: 1.0 for name in QUALITY_METRICS}
    if set(quality_weights) != set(QUALITY_METRICS):
        raise MetricConfigError("quality weights must cover exactly the seven sub-metrics")
    for name, s in {**quality_scores, **semantic_scores}.items():
        if not 0.0 <= s <= 1.0:
            raise MetricConfigError(f"score {name!r}={s} outside [0, 1]")
    if any(w < 0 for w in quality_weights.values()) or w_q < 0 or w_s < 0:
        raise MetricConfigError("weights must be nonnegative")
    wsum = sum(quality_weights.values())
    if wsum <= 0 or w_q + w_s <= 0:
        raise MetricConfigError("at least one weight per group must be positive")
    if not semantic_scores and w_s > 0:
        raise MetricConfigError("semantic weight is positive but no semantic provider given")

    quality = sum(quality_weights[k] * quality_scores[k] for k in QUALITY_METRICS) / wsum
    semantic = (
        sum(semantic_scores.values()) / len(semantic_scores) if semantic_scores else 0.0
    )
    total = (w_q * quality + w_s * semantic) / (w_q + w_s)
    return MetricReport(
        quality_sub_scores=dict(quality_scores),
        semantic_sub_scores=dict(semantic_scores),
        quality_weights=dict(quality_weights),
        total_weights={"quality": w_q, "semantic": w_s},
        quality_score=quality,
        semantic_score=semantic,
        total_score=total,
    )
