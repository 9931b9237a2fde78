"""Data curation: quality scoring, motion analysis, recaptioning, filtering.

Quality uses analytic proxies (Hasler-Susstrunk colorfulness + contrast
for the aesthetic score, 8-pixel grid blockiness for the compression
score). Motion uses exhaustive SAD block matching; clips whose flow is
predominantly radial (dolly zoom) are flagged. Recaptioning goes to an
HTTP endpoint when configured and otherwise to a deterministic stub;
failures keep the original prompt instead of dropping the record.
"""

import json
import logging
import re
from dataclasses import dataclass
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)

STUB_SUFFIX = ", highly detailed, cinematic lighting, smooth motion"
CAPTION_MAX_CHARS = 200


class ManifestError(ValueError):
    pass


@dataclass
class QualityReport:
    aesthetic: float
    compression: float


@dataclass
class MotionReport:
    mean_flow_magnitude: float
    dolly_zoom_score: float
    dolly_zoom: bool


@dataclass
class VideoRecord:
    id: str
    path: str
    prompt: str
    fps: float = 8.0
    quality: Optional[QualityReport] = None
    motion: Optional[MotionReport] = None
    recaption: Optional[str] = None
    keep: Optional[bool] = None

    def to_json(self):
        doc = {"id": self.id, "path": self.path, "prompt": self.prompt, "fps": self.fps}
        if self.quality is not None:
            doc["quality"] = vars(self.quality)
        if self.motion is not None:
            doc["motion"] = vars(self.motion)
        if self.recaption is not None:
            doc["recaption"] = self.recaption
        if self.keep is not None:
            doc["keep"] = self.keep
        return doc

    @classmethod
    def from_json(cls, doc):
        rec = cls(id=doc["id"], path=doc["path"], prompt=doc["prompt"],
                  fps=doc.get("fps", 8.0))
        if "quality" in doc:
            rec.quality = QualityReport(**doc["quality"])
        if "motion" in doc:
            rec.motion = MotionReport(**doc["motion"])
        rec.recaption = doc.get("recaption")
        rec.keep = doc.get("keep")
        return rec


def read_manifest(path):
    records = []
    seen = set()
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = VideoRecord.from_json(json.loads(line))
            if rec.id in seen:
                raise ManifestError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    return records


def write_manifest(path, records):
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")


# --- quality -----------------------------------------------------------

def score_quality(video):
    """Aesthetic (colorfulness + contrast) and compression (1 - blockiness)."""
    if video.ndim != 4 or video.shape[1] != 3:
        raise ManifestError(f"expected (N, 3, H, W) video, got {tuple(video.shape)}")
    px = (np.asarray(video, dtype=np.float64) + 1.0) / 2.0  # map to [0, 1]
    aesthetics = []
    for frame in px:
        r, g, b = frame
        rg = r - g
        yb = (r + g) / 2.0 - b
        colorfulness = np.sqrt(rg.std() ** 2 + yb.std() ** 2) \
            + 0.3 * np.sqrt(rg.mean() ** 2 + yb.mean() ** 2)
        contrast = frame.mean(axis=0).std()
        aesthetics.append(np.clip(0.5 * colorfulness / 0.3 + 0.5 * contrast / 0.25, 0.0, 1.0))
    gray = px.mean(axis=1)
    b_edge, b_inner = _grid_gradients(gray, 8)
    compression = 1.0 - np.clip((b_edge - b_inner) / 0.1, 0.0, 1.0)
    return QualityReport(aesthetic=float(np.mean(aesthetics)), compression=float(compression))


def _grid_gradients(gray, grid):
    """Mean |gradient| on 8-pixel block boundaries vs everywhere else."""
    edge_vals, inner_vals = [], []
    h_diff = np.abs(np.diff(gray, axis=2))  # between columns i and i+1
    v_diff = np.abs(np.diff(gray, axis=1))
    for diffs, axis_len in ((h_diff, gray.shape[2]), (v_diff, gray.shape[1])):
        idx = np.arange(axis_len - 1)
        boundary = (idx + 1) % grid == 0
        take = (lambda m: diffs[:, :, m]) if diffs is h_diff else (lambda m: diffs[:, m, :])
        edge_vals.append(take(boundary).ravel())
        inner_vals.append(take(~boundary).ravel())
    edge = np.concatenate(edge_vals)
    inner = np.concatenate(inner_vals)
    b_edge = edge.mean() if edge.size else 0.0
    b_inner = inner.mean() if inner.size else 0.0
    return float(b_edge), float(b_inner)


# --- motion ------------------------------------------------------------

def estimate_motion(video, block=8, radius=4,
                    score_threshold=0.7, magnitude_threshold=0.5):
    """Exhaustive SAD block matching between adjacent frames.

    Ties are broken toward zero displacement, then lexicographically in
    (dy, dx). The dolly-zoom score is the radial projection of the flow
    normalized by total flow magnitude.
    """
    h, w = video.shape[2], video.shape[3]
    if h < block or w < block:
        raise ManifestError(f"frames {h}x{w} smaller than block size {block}")
    flows = block_flow(video, block, radius)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    radial_sum = 0.0
    mag_sum = 0.0
    n_blocks = 0
    for f in range(flows.shape[0]):
        for i in range(flows.shape[1]):
            for j in range(flows.shape[2]):
                dy, dx = flows[f, i, j]
                py = i * block + (block - 1) / 2.0
                px_ = j * block + (block - 1) / 2.0
                ry, rx = py - cy, px_ - cx
                rnorm = (ry * ry + rx * rx) ** 0.5
                if rnorm > 0:
                    radial_sum += (dy * ry + dx * rx) / rnorm
                mag_sum += (dy * dy + dx * dx) ** 0.5
                n_blocks += 1
    magnitude = mag_sum / n_blocks
    score = radial_sum / (mag_sum + 1e-8)
    flagged = abs(score) > score_threshold and magnitude > magnitude_threshold
    return MotionReport(
        mean_flow_magnitude=float(magnitude),
        dolly_zoom_score=float(np.clip(score, -1.0, 1.0)),
        dolly_zoom=bool(flagged),
    )


def block_flow(video, block=8, radius=4):
    """Per-pair, per-block integer flow field (for tests and dynamic-degree)."""
    n = video.shape[0]
    if n < 2:
        raise ManifestError("flow needs at least 2 frames")
    gray = np.asarray(video, dtype=np.float64).mean(axis=1)
    h, w = gray.shape[1:]
    candidates = sorted(
        ((dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)),
        key=lambda d: (d[0] * d[0] + d[1] * d[1], d[0], d[1]),
    )
    flows = np.zeros((n - 1, h // block, w // block, 2))
    for f in range(n - 1):
        cur, nxt = gray[f], gray[f + 1]
        for i, by in enumerate(range(0, h - block + 1, block)):
            for j, bx in enumerate(range(0, w - block + 1, block)):
                ref = cur[by:by + block, bx:bx + block]
                best, best_d = None, (0, 0)
                for dy, dx in candidates:
                    ty, tx = by + dy, bx + dx
                    if ty < 0 or tx < 0 or ty + block > h or tx + block > w:
                        continue
                    sad = np.abs(ref - nxt[ty:ty + block, tx:tx + block]).sum()
                    if best is None or sad < best:
                        best, best_d = sad, (dy, dx)
                flows[f, i, j] = best_d
    return flows


# --- recaption ---------------------------------------------------------

RECAPTION_TEMPLATE = (
    "Rewrite this video caption with richer visual detail, one sentence: {prompt}"
)


class StubRecaptionClient:
    """Deterministic in-process stand-in for the text-generation service."""

    def generate(self, request):
        prompt = _prompt_from_request(request)
        return {"text": prompt + STUB_SUFFIX}


class HttpRecaptionClient:
    """POSTs {"prompt": ...} to the configured endpoint, expects {"text": ...}."""

    def __init__(self, endpoint, timeout=5.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def generate(self, request):
        import requests

        resp = requests.post(self.endpoint, json=request, timeout=self.timeout)
        resp.raise_for_status()
        return resp.json()


def _prompt_from_request(request):
    instruction = request["prompt"]
    m = re.search(r": (.*)$", instruction, flags=re.DOTALL)
    return m.group(1) if m else instruction


def sanitize_caption(text):
    text = re.sub(r"\s+", " ", text).strip()
    return text[:CAPTION_MAX_CHARS]


def recaption(prompt, client):
    if not prompt.strip():
        raise ManifestError("prompt must be nonempty")
    request = {"prompt": RECAPTION_TEMPLATE.format(prompt=prompt)}
    try:
        reply = client.generate(request)
        return sanitize_caption(reply["text"])
    except Exception as exc:  # one bad item never aborts the pipeline
        log.warning("recaption failed for %r: %s", prompt, exc)
        return prompt


# --- filtering ---------------------------------------------------------

@dataclass(frozen=True)
class FilterThresholds:
    aesthetic_min: float = 0.0
    compression_min: float = 0.0
    magnitude_min: float = 0.0


def filter_manifest(records, thresholds):
    """Set keep flags: quality gates first, then the dolly-zoom filter."""
    out = []
    for rec in records:
        if rec.quality is None or rec.motion is None:
            raise ManifestError(f"record {rec.id!r} is not fully scored")
        quality_ok = (
            rec.quality.aesthetic >= thresholds.aesthetic_min
            and rec.quality.compression >= thresholds.compression_min
            and rec.motion.mean_flow_magnitude >= thresholds.magnitude_min
        )
        rec.keep = bool(quality_ok and not rec.motion.dolly_zoom)
        out.append(rec)
    return out
