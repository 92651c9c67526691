"""Temporal sentence localization: video-text local interaction, the
convolutional relevance head, losses, segment decoding, and recall metrics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .interaction import (
    CGMI,
    BilinearAttention,
    InteractionTensor,
    ModalityBundle,
    PMIEncoder,
)
from .layers import Embedding, InstanceNorm, Layer, Linear
from .rng import Rng
from .tensor import Tensor


# --------------------------------------------------------------------------
# Data plumbing: annotations, masks, subsampling
# --------------------------------------------------------------------------


@dataclass
class Annotation:
    video_id: str
    start: float
    end: float
    duration: float
    sentence: str


@dataclass
class GroundTruth:
    boundary: np.ndarray  # (start, end) as fractions of duration
    mask: np.ndarray      # length-N binary relevance mask


def read_annotations(path) -> list[Annotation]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise ValueError(f"{path}:{line_no}: expected 5 tab-separated fields")
            records.append(Annotation(parts[0], float(parts[1]), float(parts[2]),
                                       float(parts[3]), parts[4]))
    return records


def write_annotations(path, records: Sequence[Annotation]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(f"{r.video_id}\t{r.start}\t{r.end}\t{r.duration}\t{r.sentence}\n")


def write_predictions(path, rows) -> None:
    """Rows of (video_id, pred_start, pred_end, relevance vector)."""
    with open(path, "w", encoding="utf-8") as fh:
        for video_id, ps, pe, rvec in rows:
            rstr = ",".join(f"{v:.6f}" for v in np.asarray(rvec).reshape(-1))
            fh.write(f"{video_id}\t{ps:.6f}\t{pe:.6f}\t{rstr}\n")


def read_predictions(path):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            video_id, ps, pe, rstr = line.split("\t")
            rows.append((video_id, float(ps), float(pe),
                         np.array([float(v) for v in rstr.split(",")])))
    return rows


def relevance_mask(start: float, end: float, duration: float, n: int) -> np.ndarray:
    """Binary mask over n positions whose center time lies inside [start, end]."""
    centers = (np.arange(n) + 0.5) / n * duration
    mask = ((centers >= start) & (centers <= end)).astype(np.float64)
    if mask.sum() < 1:
        raise ValueError(
            f"ground-truth segment [{start}, {end}] covers no positions at N={n}")
    return mask


def ground_truth(ann: Annotation, n: int) -> GroundTruth:
    boundary = np.array([ann.start / ann.duration, ann.end / ann.duration])
    return GroundTruth(boundary, relevance_mask(ann.start, ann.end, ann.duration, n))


def subsample(features: np.ndarray, n: int) -> np.ndarray:
    """Nearest-index temporal subsampling to length n."""
    n0 = features.shape[0]
    idx = np.minimum((np.floor((np.arange(n) + 0.5) * n0 / n)).astype(np.int64), n0 - 1)
    return features[idx]


# --------------------------------------------------------------------------
# Model pieces
# --------------------------------------------------------------------------


def local_window(x: Tensor, t: int, w: int) -> Tensor:
    """Rows t-w .. t+w with edge indices clamped (replication padding)."""
    n = x.shape[0]
    if not 0 <= t < n:
        raise T.ShapeError(f"window center {t} outside sequence of length {n}")
    idx = np.clip(np.arange(t - w, t + w + 1), 0, n - 1)
    return T.gather_rows(x, idx)


def window_indices(n: int, w: int) -> np.ndarray:
    offsets = np.arange(-w, w + 1)
    return np.clip(np.arange(n)[:, None] + offsets[None, :], 0, n - 1)


class MMUnit(Layer):
    """Multimodal processing unit: W^T [a || b || a*b || a+b]."""

    def __init__(self, d: int, rng: Rng, bias: bool = False):
        self.proj = Linear(4 * d, d, rng, bias=bias)
        self.d = d

    def __call__(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape or a.shape[-1] != self.d:
            raise T.ShapeError(f"mm unit dims disagree: {a.shape} vs {b.shape}")
        squeeze = a.ndim == 1
        if squeeze:
            a, b = a.reshape(1, self.d), b.reshape(1, self.d)
        out = self.proj(T.concat([a, b, a * b, a + b], axis=1))
        return out.reshape(self.d) if squeeze else out


class VTLI(Layer):
    """Video-text local interaction around every temporal position.

    Both directions run through bilinear attention with a single-row query
    side (pooled local window or pooled sentence), followed by an MM unit;
    the two d-vectors are summed per position.
    """

    def __init__(self, d: int, d_low: int, heads: int, rng: Rng, w: int):
        self.ba_xy = BilinearAttention(d, d_low, heads, rng)
        self.mm_xy = MMUnit(d, rng)
        self.ba_yx = BilinearAttention(d, d_low, heads, rng)
        self.mm_yx = MMUnit(d, rng)
        self.w = w
        self.d = d

    def __call__(self, x_hat: Tensor, y_hat: Tensor) -> Tensor:
        n = x_hat.shape[0]
        if n == 0 or y_hat.shape[0] == 0:
            raise T.ShapeError("vtli needs non-empty video and text sequences")
        idx = window_indices(n, self.w)
        avg = np.zeros((n, n))
        np.add.at(avg, (np.repeat(np.arange(n), idx.shape[1]), idx.reshape(-1)),
                  1.0 / idx.shape[1])
        pooled = T.matmul(Tensor(avg), x_hat)

        z_xy, _ = self.ba_xy(pooled, y_hat, use_relpos=False)
        out_xy = self.mm_xy(z_xy, pooled)

        y_mean = y_hat.mean(axis=0).reshape(1, self.d)
        z_yx = self.ba_yx.attend_windows(y_mean, x_hat, idx)
        y_rep = T.matmul(Tensor(np.ones((n, 1))), y_mean)
        out_yx = self.mm_yx(z_yx, y_rep)
        return out_xy + out_yx


def default_channel_plan(d: int, k_layers: int) -> list[int]:
    plan = [max(1, d >> (k + 1)) for k in range(k_layers - 1)]
    return plan + [1]


class ConvHead(Layer):
    """Light-weight temporal conv stack producing relevance and boundaries.

    Every layer convolves the channel-concatenation of the previous output
    and the pooled sentence vector; instance norm plus LeakyReLU follow all
    but the last layer.  The final single-channel output is softmaxed into
    the relevance distribution r, and a two-unit linear layer on r regresses
    the normalized boundary pair.

    The boundary layer is initialized structurally: predicted start/end
    begin at the relevance center of mass minus/plus a prior half-width, so
    an untrained head emits prior-shaped proposals and training starts from
    a boundary estimate already tied to r.
    """

    def __init__(self, d: int, k_layers: int, kernel: int, seq_len: int,
                 rng: Rng, channel_plan: Optional[list[int]] = None,
                 leaky_slope: float = 0.01, boundary_half: float = 0.175):
        plan = channel_plan if channel_plan is not None else default_channel_plan(d, k_layers)
        if len(plan) != k_layers or plan[-1] != 1 or any(c < 1 for c in plan):
            raise ValueError(f"channel plan {plan} inconsistent with K={k_layers}")
        self.plan = plan
        self.convs = []
        self.norms = []
        in_ch = d
        for k, out_ch in enumerate(plan):
            self.convs.append(Linear(kernel * (in_ch + d), out_ch, rng))
            if k < k_layers - 1:
                self.norms.append(InstanceNorm(out_ch))
            in_ch = out_ch
        self.boundary = Linear(seq_len, 2, rng)
        centers = (np.arange(seq_len) + 0.5) / seq_len
        self.boundary.W.data[:, 0] = centers - boundary_half
        self.boundary.W.data[:, 1] = centers + boundary_half
        self.boundary.b.data[:] = 0.0
        self.kernel = kernel
        self.k_layers = k_layers
        self.leaky_slope = leaky_slope
        self.seq_len = seq_len
        self._conv_idx = window_indices(seq_len, kernel // 2).reshape(-1)

    def __call__(self, z: Tensor, y_mean: Tensor,
                 ) -> tuple[list[Tensor], Tensor, Tensor]:
        n = z.shape[0]
        if n != self.seq_len:
            raise T.ShapeError(f"head built for N={self.seq_len}, got {n}")
        y_rep = T.matmul(Tensor(np.ones((n, 1))), y_mean.reshape(1, y_mean.size))
        current = z
        raw_outputs = []
        for k in range(self.k_layers):
            stacked = T.concat([current, y_rep], axis=1)
            windows = T.gather_rows(stacked, self._conv_idx)
            raw = self.convs[k](windows.reshape(n, self.kernel * stacked.shape[1]))
            raw_outputs.append(raw)
            if k < self.k_layers - 1:
                current = self.norms[k](raw).leaky_relu(self.leaky_slope)
        relevance = T.softmax_axis(raw_outputs[-1].reshape(n), axis=0)
        boundary = self.boundary(relevance)
        return raw_outputs, relevance, boundary


class SentenceEncoder(Layer):
    """Word embeddings projected to the interaction width and self-interacted."""

    def __init__(self, vocab_size: int, d_w: int, d: int, d_low: int, d_c: int,
                 heads: int, k_max: int, rng: Rng,
                 table: Optional[np.ndarray] = None, trainable: bool = False):
        self.embed = Embedding(vocab_size, d_w, rng, trainable=trainable, table=table)
        self.proj = Linear(d_w, d, rng)
        self.block = CGMI(d, d_low, d_c, heads, k_max, rng)

    def __call__(self, token_ids) -> tuple[Tensor, Tensor]:
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.size == 0:
            raise ValueError("empty sentence")
        y = self.embed(ids)
        y_hat, _, _, _ = self.block(self.proj(y), self.proj(y))
        return y, y_hat


@dataclass
class LocalizationOutput:
    relevance: Tensor              # r over N positions (sums to 1)
    boundary: Tensor               # unconstrained (start, end) fractions
    conv_outputs: list[Tensor]     # raw C^k per head layer
    encoded: InteractionTensor
    z: Tensor


class PMILocalizer(Layer):
    """Full sentence localization model over a modality bundle and a query."""

    def __init__(self, tags: list[str], dims: list[int], vocab_size: int,
                 d_w: int, seq_len: int, rng: Rng, d: int = 512,
                 d_low: int = 256, d_c: int = 64, heads: int = 8,
                 k_max: int = 16, k_layers: int = 3, kernel: int = 3,
                 window: int = 2, mode: str = "full",
                 fusion_kind: str = "weighted",
                 fusion_per_position: bool = False, use_vtli: bool = True,
                 embedding_table: Optional[np.ndarray] = None,
                 train_embeddings: bool = False, boundary_half: float = 0.175):
        self.encoder = PMIEncoder(tags, dims, d, d_low, d_c, heads, k_max, rng,
                                  mode=mode, fusion_kind=fusion_kind,
                                  fusion_per_position=fusion_per_position,
                                  seq_len=seq_len)
        self.sentence = SentenceEncoder(vocab_size, d_w, d, d_low, d_c, heads,
                                        k_max, rng, table=embedding_table,
                                        trainable=train_embeddings)
        self.vtli = VTLI(d, d_low, heads, rng, window) if use_vtli else None
        self.head = ConvHead(d, k_layers, kernel, seq_len, rng,
                             boundary_half=boundary_half)
        self.seq_len = seq_len

    def __call__(self, bundle: ModalityBundle, token_ids) -> LocalizationOutput:
        encoded = self.encoder(bundle)
        _, y_hat = self.sentence(token_ids)
        z = self.vtli(encoded.fused, y_hat) if self.vtli is not None else encoded.fused
        conv_outputs, relevance, boundary = self.head(z, y_hat.mean(axis=0))
        return LocalizationOutput(relevance, boundary, conv_outputs, encoded, z)


# --------------------------------------------------------------------------
# Losses
# --------------------------------------------------------------------------


def norm_loss(conv_outputs: Sequence[Tensor], betas: Sequence[float]) -> Tensor:
    """Sum over layers and positions of (||C_n^k||_2 - beta_k)^2."""
    if len(conv_outputs) != len(betas):
        raise ValueError(f"{len(conv_outputs)} layers but {len(betas)} targets")
    total = None
    for c, beta in zip(conv_outputs, betas):
        if beta <= 0:
            raise ValueError(f"norm target must be positive, got {beta}")
        norms = (c * c).sum(axis=1).sqrt()
        dev = norms - beta
        term = (dev * dev).sum()
        total = term if total is None else total + term
    return total if total is not None else T.zeros(())


def pred_loss(boundary: Tensor, relevance: Tensor, gt: GroundTruth,
              lambda_r: float = 5.0, delta: float = 1.0) -> Tensor:
    """Huber boundary loss plus mask-averaged negative log relevance."""
    mask = np.asarray(gt.mask, dtype=np.float64)
    if mask.sum() < 1:
        raise ValueError("ground-truth relevance mask is empty")
    hub = T.huber(boundary - Tensor(gt.boundary), delta=delta).sum()
    picked = (Tensor(mask) * relevance.log()).sum()
    return hub - picked * (lambda_r / mask.sum())


def total_loss(pred: Tensor, norm: Tensor, lambda_n: float = 0.001) -> Tensor:
    return pred + lambda_n * norm


# --------------------------------------------------------------------------
# Decoding and metrics
# --------------------------------------------------------------------------


def decode_segment(boundary: np.ndarray, duration: float) -> tuple[float, float]:
    """Clamp to [0, 1], order, and scale to seconds."""
    b = np.clip(np.asarray(boundary, dtype=np.float64).reshape(2), 0.0, 1.0)
    start, end = (b[1], b[0]) if b[0] > b[1] else (b[0], b[1])
    return float(start * duration), float(end * duration)


def temporal_iou(a: tuple[float, float], b: tuple[float, float]) -> float:
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def recall_at_iou(preds: Sequence[tuple[float, float]],
                  truths: Sequence[tuple[float, float]], threshold: float) -> float:
    """Percentage of sentences whose prediction exceeds the IoU threshold."""
    if len(preds) != len(truths):
        raise ValueError(f"{len(preds)} predictions vs {len(truths)} truths")
    hits = sum(1 for p, t in zip(preds, truths) if temporal_iou(p, t) > threshold)
    return 100.0 * hits / len(preds)


def mc_random_baseline(truths: Sequence[tuple[float, float]],
                       durations: Sequence[float],
                       frac_range: tuple[float, float],
                       thresholds: Sequence[float], rng: Rng,
                       trials: int = 200) -> dict[float, float]:
    """Monte-Carlo recall of random proposals drawn from annotation statistics.

    Proposals share the generator's segment law: length fraction uniform in
    ``frac_range``, start uniform over the feasible positions.
    """
    lo, hi = frac_range
    totals = {m: 0.0 for m in thresholds}
    for _ in range(trials):
        preds = []
        for duration in durations:
            frac = rng.uniform(lo, hi)
            start = rng.uniform(0.0, 1.0 - frac)
            preds.append((start * duration, (start + frac) * duration))
        for m in thresholds:
            totals[m] += recall_at_iou(preds, truths, m)
    return {m: totals[m] / trials for m in thresholds}
