"""Deterministic synthetic multimodal benchmarks with planted ground truth.

The localization sets are built so that finding the queried segment provably
requires combining two modalities: the timeline is tiled with constant-bit
blocks, the query sentence encodes the XOR of the two modalities' bits, and
only the ground-truth block carries the queried XOR value.  Either modality
alone is independent of the sentence class, which the linear-probe
certificate below checks on every generated set.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .localization import Annotation, write_annotations
from .rng import Rng

MAGIC = b"PMIF"
VERSION = 1
HEADER = struct.Struct("<4sHHII")  # magic, version, reserved, N, d

DEDICATED_CHANNELS = 8


class FeatureFileError(ValueError):
    """Malformed feature file (bad magic, version, or payload length)."""


def write_feature(path, matrix: np.ndarray) -> None:
    """Atomically write an N x d float32 feature file."""
    matrix = np.asarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise ValueError(f"feature matrix must be rank 2, got {matrix.shape}")
    n, d = matrix.shape
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, 0, n, d))
        fh.write(matrix.astype("<f4").tobytes(order="C"))
    os.replace(tmp, path)


def read_feature(path) -> np.ndarray:
    """Read a feature file into a float64 N x d matrix."""
    with open(path, "rb") as fh:
        header = fh.read(HEADER.size)
        if len(header) < HEADER.size:
            raise FeatureFileError(f"{path}: truncated header")
        magic, version, _, n, d = HEADER.unpack(header)
        if magic != MAGIC:
            raise FeatureFileError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise FeatureFileError(f"{path}: unsupported version {version}")
        payload = fh.read()
    expected = n * d * 4
    if len(payload) != expected:
        raise FeatureFileError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype="<f4").reshape(n, d).astype(np.float64)


def write_manifest(path, rows: Sequence[tuple[str, list[str]]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for video_id, rel_paths in rows:
            fh.write("\t".join([video_id] + list(rel_paths)) + "\n")


def read_manifest(path) -> list[tuple[str, list[str]]]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            rows.append((parts[0], parts[1:]))
    return rows


DEFAULT_TEMPLATES = (
    "the two streams agree during this moment",
    "the two streams disagree during this moment",
)

OBJECTS = ["dog", "cat", "car", "bird", "train"]
ACTIONS = ["runs", "jumps", "rolls", "spins", "slides"]
SOUNDS = ["barking", "meowing", "honking", "chirping", "whistling"]
CAPTION_TEMPLATE = "the {obj} {act} while the {snd} sound plays"


@dataclass
class SynthSpec:
    seed: int = 0
    num_videos: int = 100
    n_positions: int = 128
    modality_dims: tuple[int, ...] = (32, 32)
    segment_frac: tuple[float, float] = (0.2, 0.5)
    noise: float = 0.3
    coupling: str = "xor_pair"  # xor_pair | single_modality | all_modality
    lag: int = 8
    duration_range: tuple[float, float] = (24.0, 40.0)
    word_dim: int = 16
    templates: tuple[str, str] = DEFAULT_TEMPLATES

    def __post_init__(self):
        lo, hi = self.segment_frac
        if not (0.0 < lo <= hi < 1.0):
            raise ValueError(f"segment range {self.segment_frac} must fit inside (0, 1)")
        if lo * self.n_positions < 2.0:
            raise ValueError(
                f"segments of fraction {lo} cover fewer than 2 of {self.n_positions} positions")
        if self.noise < 0:
            raise ValueError("noise level must be non-negative")
        if self.coupling not in ("xor_pair", "single_modality", "all_modality"):
            raise ValueError(f"unknown coupling mode '{self.coupling}'")
        if self.coupling == "xor_pair" and len(self.modality_dims) < 2:
            raise ValueError("xor_pair coupling needs at least 2 modalities")
        if any(d < DEDICATED_CHANNELS for d in self.modality_dims):
            raise ValueError(
                f"modality dims must allow {DEDICATED_CHANNELS} dedicated channels")
        if self.lag < 0 or self.lag >= self.n_positions // 2:
            raise ValueError(f"lag {self.lag} out of range for N={self.n_positions}")


@dataclass
class VideoTruth:
    video_id: str
    duration: float
    start: float
    end: float
    label: int
    bits: list[int]  # per-modality bit inside the ground-truth block


@dataclass
class LocalizationSet:
    out_dir: str
    manifest_path: str
    annotation_path: str
    embedding_path: str
    tags: list[str]
    truths: list[VideoTruth]
    lag: int = 0


def _tile_blocks(rng: Rng, lo: float, hi: float) -> tuple[list[tuple[float, float]], int]:
    """Partition [0, 1] into blocks; returns (blocks, index of gt block)."""
    gt_len = rng.uniform(lo, hi)
    gt_start = rng.uniform(0.0, 1.0 - gt_len)
    blocks = []
    cursor = 0.0
    while cursor < gt_start - 1e-9:
        length = min(rng.uniform(lo, hi), gt_start - cursor)
        blocks.append((cursor, cursor + length))
        cursor += length
    gt_index = len(blocks)
    blocks.append((gt_start, gt_start + gt_len))
    cursor = gt_start + gt_len
    while cursor < 1.0 - 1e-9:
        length = min(rng.uniform(lo, hi), 1.0 - cursor)
        blocks.append((cursor, cursor + length))
        cursor += length
    return blocks, gt_index


def _block_bits(rng: Rng, coupling: str, label: int, is_gt: bool,
                n_modalities: int) -> list[int]:
    """Per-modality bit values (+-1) for one block.

    xor_pair: the gt block's bits satisfy a XOR b == label; every distractor
    block carries the opposite XOR, so the queried pattern is unique.
    single_modality / all_modality plant the label directly in modality 1
    (or all), again with distractors inverted.
    """
    want = label if is_gt else 1 - label
    if coupling == "xor_pair":
        a = rng.randint(0, 2)
        b = a ^ want
        bits = [a, b] + [rng.randint(0, 2) for _ in range(n_modalities - 2)]
    elif coupling == "single_modality":
        bits = [want] + [rng.randint(0, 2) for _ in range(n_modalities - 1)]
    else:  # all_modality
        bits = [want] * n_modalities
    return [2 * b - 1 for b in bits]


def _render_features(rng: Rng, spec: SynthSpec,
                     blocks: list[tuple[float, float]],
                     block_bits: list[list[int]]) -> list[np.ndarray]:
    """Dedicated channels carry the per-block bit of each modality.

    In xor_pair coupling the bits ride on a shared random carrier: modality
    one uses carrier c(n), modality two uses c(n + lag).  Any window
    narrower than the lag then sees two independent sign sequences with no
    usable joint statistic, so the planted pattern is only recoverable by
    relating positions at least ``lag`` apart across the two modalities.
    The other coupling modes plant plain constant bits.
    """
    n = spec.n_positions
    centers = (np.arange(n) + 0.5) / n
    per_block = np.zeros((n, len(spec.modality_dims)))
    for (lo, hi), bits in zip(blocks, block_bits):
        inside = (centers >= lo) & (centers < hi)
        per_block[inside] = bits

    use_carrier = spec.coupling == "xor_pair" and spec.lag > 0
    if use_carrier:
        carrier = np.array([
            [2 * rng.randint(0, 2) - 1 for _ in range(DEDICATED_CHANNELS)]
            for _ in range(n + spec.lag)], dtype=np.float64)

    feats = []
    for m, dim in enumerate(spec.modality_dims):
        base = rng.normal(0.0, spec.noise, size=(n, dim))
        signal = per_block[:, m:m + 1]
        if use_carrier and m < 2:
            shift = spec.lag if m == 1 else 0
            base[:, :DEDICATED_CHANNELS] += signal * carrier[shift:shift + n]
        else:
            base[:, :DEDICATED_CHANNELS] += signal
        feats.append(base)
    return feats


def _write_embeddings(path, tokens: list[str], dim: int, rng: Rng) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for token in tokens:
            vec = rng.normal(0.0, 1.0, size=dim)
            fh.write(token + " " + " ".join(f"{v:.6f}" for v in vec) + "\n")


def _modality_tags(count: int) -> list[str]:
    return ["visual", "motion", "audio", "latent"][:count]


def gen_localization_set(spec: SynthSpec, out_dir) -> LocalizationSet:
    out_dir = str(out_dir)
    feat_dir = os.path.join(out_dir, "features")
    os.makedirs(feat_dir, exist_ok=True)
    tags = _modality_tags(len(spec.modality_dims))

    manifest_rows = []
    annotations = []
    truths = []
    for v in range(spec.num_videos):
        rng = Rng(spec.seed, stream=v + 1)
        video_id = f"video{v:04d}"
        duration = rng.uniform(*spec.duration_range)
        label = rng.randint(0, 2)
        blocks, gt_index = _tile_blocks(rng, *spec.segment_frac)
        bits = [_block_bits(rng, spec.coupling, label, i == gt_index,
                            len(spec.modality_dims))
                for i in range(len(blocks))]
        feats = _render_features(rng, spec, blocks, bits)

        rel_paths = []
        for tag, feat in zip(tags, feats):
            rel = os.path.join("features", f"{video_id}_{tag}.pmif")
            write_feature(os.path.join(out_dir, rel), feat)
            rel_paths.append(rel)
        manifest_rows.append((video_id, rel_paths))

        gt_lo, gt_hi = blocks[gt_index]
        start, end = gt_lo * duration, gt_hi * duration
        annotations.append(Annotation(video_id, start, end, duration,
                                      spec.templates[label]))
        truths.append(VideoTruth(video_id, duration, start, end, label,
                                 bits[gt_index]))

    manifest_path = os.path.join(out_dir, "manifest.tsv")
    annotation_path = os.path.join(out_dir, "annotations.tsv")
    embedding_path = os.path.join(out_dir, "embeddings.txt")
    write_manifest(manifest_path, manifest_rows)
    write_annotations(annotation_path, annotations)
    vocab = sorted({tok for t in spec.templates for tok in t.split()})
    _write_embeddings(embedding_path, vocab, spec.word_dim, Rng(spec.seed, stream=0))
    with open(os.path.join(out_dir, "modalities.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(tags) + "\n")
    lag = spec.lag if spec.coupling == "xor_pair" else 0
    with open(os.path.join(out_dir, "meta.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"coupling = {spec.coupling}\nlag = {lag}\n"
                 f"segment_lo = {spec.segment_frac[0]}\n"
                 f"segment_hi = {spec.segment_frac[1]}\n"
                 f"noise = {spec.noise}\nseed = {spec.seed}\n")
    return LocalizationSet(out_dir, manifest_path, annotation_path,
                           embedding_path, tags, truths, lag=lag)


@dataclass
class CaptionSet:
    out_dir: str
    manifest_path: str
    corpus_path: str
    tags: list[str]
    factors: list[tuple[int, int, int]]
    factor_words: dict[str, list[str]] = field(default_factory=dict)


def _factor_codes(rng: Rng, count: int) -> np.ndarray:
    """Distinct +-1 codes over the dedicated channels, one per factor value."""
    codes: list[tuple[int, ...]] = []
    while len(codes) < count:
        cand = tuple(2 * rng.randint(0, 2) - 1 for _ in range(DEDICATED_CHANNELS))
        if cand not in codes:
            codes.append(cand)
    return np.array(codes, dtype=np.float64)


def gen_caption_set(spec: SynthSpec, out_dir, include_audio: bool = True) -> CaptionSet:
    """Caption corpus whose sound word is only recoverable from audio.

    Visual features carry object and action codes on dedicated channel
    groups; audio features carry the sound code.  Reference sentences are
    template renderings of the three factors.
    """
    if len(spec.modality_dims) < 2:
        raise ValueError("caption generation needs visual and audio modalities")
    out_dir = str(out_dir)
    feat_dir = os.path.join(out_dir, "features")
    os.makedirs(feat_dir, exist_ok=True)
    tags = ["visual", "audio"] if include_audio else ["visual"]
    dims = list(spec.modality_dims[:2])
    if dims[0] < 2 * DEDICATED_CHANNELS:
        raise ValueError("visual dim must fit object and action channel groups")

    code_rng = Rng(spec.seed, stream=0)
    obj_codes = _factor_codes(code_rng, len(OBJECTS))
    act_codes = _factor_codes(code_rng, len(ACTIONS))
    snd_codes = _factor_codes(code_rng, len(SOUNDS))

    manifest_rows = []
    corpus_lines = []
    factors = []
    for v in range(spec.num_videos):
        rng = Rng(spec.seed, stream=v + 1)
        video_id = f"clip{v:04d}"
        obj = rng.randint(0, len(OBJECTS))
        act = rng.randint(0, len(ACTIONS))
        snd = rng.randint(0, len(SOUNDS))
        factors.append((obj, act, snd))

        visual = rng.normal(0.0, spec.noise, size=(spec.n_positions, dims[0]))
        visual[:, :DEDICATED_CHANNELS] += obj_codes[obj]
        visual[:, DEDICATED_CHANNELS:2 * DEDICATED_CHANNELS] += act_codes[act]
        audio = rng.normal(0.0, spec.noise, size=(spec.n_positions, dims[1]))
        audio[:, :DEDICATED_CHANNELS] += snd_codes[snd]

        feats = {"visual": visual, "audio": audio}
        rel_paths = []
        for tag in tags:
            rel = os.path.join("features", f"{video_id}_{tag}.pmif")
            write_feature(os.path.join(out_dir, rel), feats[tag])
            rel_paths.append(rel)
        manifest_rows.append((video_id, rel_paths))
        sentence = CAPTION_TEMPLATE.format(obj=OBJECTS[obj], act=ACTIONS[act],
                                           snd=SOUNDS[snd])
        corpus_lines.append(f"{video_id}\t{sentence}")

    manifest_path = os.path.join(out_dir, "manifest.tsv")
    corpus_path = os.path.join(out_dir, "captions.tsv")
    write_manifest(manifest_path, manifest_rows)
    with open(corpus_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(corpus_lines) + "\n")
    with open(os.path.join(out_dir, "modalities.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(tags) + "\n")
    return CaptionSet(out_dir, manifest_path, corpus_path, tags, factors,
                      {"object": OBJECTS, "action": ACTIONS, "sound": SOUNDS})


def read_caption_corpus(path) -> list[tuple[str, str]]:
    """Caption corpus rows, lowercased at load."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            video_id, sentence = line.split("\t", 1)
            rows.append((video_id, sentence.lower()))
    return rows


# --------------------------------------------------------------------------
# Planted-signal certificate helpers
# --------------------------------------------------------------------------


def segment_mean_features(dataset: LocalizationSet, probe: str) -> tuple[np.ndarray, np.ndarray]:
    """Per-video mean of dedicated channels inside the ground-truth segment.

    probe: 'modality0', 'modality1', or 'product'.  The product probe pairs
    modality one at position n + lag with modality two at position n, which
    is where the xor construction plants its cross-modal pattern (lag 0
    degenerates to the plain position-wise product).
    """
    manifest = dict(read_manifest(dataset.manifest_path))
    xs, ys = [], []
    for truth in dataset.truths:
        rels = manifest[truth.video_id]
        feats = [read_feature(os.path.join(dataset.out_dir, rel))[:, :DEDICATED_CHANNELS]
                 for rel in rels[:2]]
        n = feats[0].shape[0]
        centers = (np.arange(n) + 0.5) / n * truth.duration
        inside = (centers >= truth.start) & (centers <= truth.end)
        if probe == "modality0":
            vec = feats[0][inside].mean(axis=0)
        elif probe == "modality1":
            vec = feats[1][inside].mean(axis=0)
        elif probe == "product":
            lag = dataset.lag
            idx = np.where(inside)[0]
            idx = idx[idx + lag < n]
            pairs = inside[idx + lag] if lag else np.ones(len(idx), dtype=bool)
            idx = idx[pairs]  # both endpoints inside the segment
            if len(idx) == 0:
                raise ValueError(f"{truth.video_id}: segment shorter than the lag")
            vec = (feats[0][idx + lag] * feats[1][idx]).mean(axis=0)
        else:
            raise ValueError(f"unknown probe '{probe}'")
        xs.append(vec)
        ys.append(truth.label)
    return np.array(xs), np.array(ys)


def lda_auc(features: np.ndarray, labels: np.ndarray) -> float:
    """AUC of the class-mean-difference direction (best linear probe proxy)."""
    pos = features[labels == 1]
    neg = features[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("both classes must be present")
    w = pos.mean(axis=0) - neg.mean(axis=0)
    scores = features @ w
    s_pos = scores[labels == 1]
    s_neg = scores[labels == 0]
    greater = (s_pos[:, None] > s_neg[None, :]).sum()
    ties = (s_pos[:, None] == s_neg[None, :]).sum()
    return (greater + 0.5 * ties) / (len(s_pos) * len(s_neg))
