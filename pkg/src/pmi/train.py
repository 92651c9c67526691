"""Dataset loading, training loops, evaluation, ablation, and explain dumps."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .captioning import PMICaptioner, Vocabulary
from .checkpoint import apply_checkpoint, load_checkpoint, save_checkpoint
from .config import Config
from .interaction import ModalityBundle
from .layers import load_embedding_table
from .localization import (
    Annotation,
    GroundTruth,
    PMILocalizer,
    decode_segment,
    ground_truth,
    norm_loss,
    pred_loss,
    read_annotations,
    recall_at_iou,
    subsample,
    total_loss,
    write_predictions,
)
from .optim import Adam, clip_global_norm
from .rng import Rng
from .synth import read_caption_corpus, read_feature, read_manifest
from .tensor import Graph
from .text_metrics import bleu, cider

IOU_THRESHOLDS = (0.3, 0.5, 0.7)


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


# --------------------------------------------------------------------------
# Datasets
# --------------------------------------------------------------------------


def _read_tags(data_dir) -> list[str]:
    path = os.path.join(data_dir, "modalities.txt")
    with open(path, "r", encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def _load_bundles(data_dir, tags, seq_len) -> dict[str, list[np.ndarray]]:
    bundles = {}
    for video_id, rel_paths in read_manifest(os.path.join(data_dir, "manifest.tsv")):
        feats = [read_feature(os.path.join(data_dir, rel)) for rel in rel_paths]
        feats = [subsample(f, seq_len) if f.shape[0] != seq_len else f for f in feats]
        if len(feats) != len(tags):
            raise ValueError(f"{video_id}: {len(feats)} feature files for "
                             f"{len(tags)} modalities")
        bundles[video_id] = feats
    return bundles


@dataclass
class LocExample:
    annotation: Annotation
    features: list[np.ndarray]
    token_ids: list[int]
    gt: GroundTruth

    def bundle(self, tags) -> ModalityBundle:
        return ModalityBundle(list(zip(tags, self.features)))


class LocDataset:
    """Feature bundles plus sentence annotations for localization."""

    def __init__(self, data_dir, seq_len: int, embeddings_path: Optional[str] = None):
        self.data_dir = str(data_dir)
        self.tags = _read_tags(data_dir)
        self.seq_len = seq_len
        emb_path = embeddings_path or os.path.join(data_dir, "embeddings.txt")
        tokens, table = load_embedding_table(emb_path)
        self.vocab = Vocabulary(tokens)
        reserved = np.zeros((4, table.shape[1]))
        self.embedding_table = np.concatenate([reserved, table], axis=0)
        self.word_dim = table.shape[1]

        bundles = _load_bundles(data_dir, self.tags, seq_len)
        self.examples = []
        for ann in read_annotations(os.path.join(data_dir, "annotations.tsv")):
            ids = self.vocab.encode(ann.sentence, add_eos=False)
            self.examples.append(LocExample(ann, bundles[ann.video_id], ids,
                                            ground_truth(ann, seq_len)))
        if not self.examples:
            raise ValueError(f"{data_dir}: no annotations")

    @property
    def dims(self) -> list[int]:
        return [f.shape[1] for f in self.examples[0].features]

    def __len__(self) -> int:
        return len(self.examples)


@dataclass
class CapExample:
    video_id: str
    features: list[np.ndarray]
    sentence: str
    token_ids: list[int]

    def bundle(self, tags) -> ModalityBundle:
        return ModalityBundle(list(zip(tags, self.features)))


class CapDataset:
    """Feature bundles plus reference captions."""

    def __init__(self, data_dir, seq_len: int, vocab: Optional[Vocabulary] = None,
                 min_count: int = 1):
        self.data_dir = str(data_dir)
        self.tags = _read_tags(data_dir)
        corpus = read_caption_corpus(os.path.join(data_dir, "captions.tsv"))
        if vocab is None:
            vocab = Vocabulary.from_sentences([s for _, s in corpus],
                                              min_count=min_count)
        self.vocab = vocab
        bundles = _load_bundles(data_dir, self.tags, seq_len)
        self.examples = [CapExample(vid, bundles[vid], sent,
                                    vocab.encode(sent, add_eos=True))
                         for vid, sent in corpus]
        self.references: dict[str, list[list[str]]] = {}
        for vid, sent in corpus:
            self.references.setdefault(vid, []).append(sent.split())
        self.video_ids = list(dict.fromkeys(vid for vid, _ in corpus))

    @property
    def dims(self) -> list[int]:
        return [f.shape[1] for f in self.examples[0].features]

    def __len__(self) -> int:
        return len(self.examples)


# --------------------------------------------------------------------------
# Model builders
# --------------------------------------------------------------------------


def build_localizer(cfg: Config, dataset: LocDataset, rng: Rng) -> PMILocalizer:
    mode = cfg.interaction if cfg.pmi else "baseline_concat"
    model = PMILocalizer(
        tags=dataset.tags, dims=dataset.dims, vocab_size=len(dataset.vocab),
        d_w=dataset.word_dim, seq_len=cfg.resolved_seq_len(), rng=rng,
        d=cfg.d, d_low=cfg.d_low, d_c=cfg.d_c, heads=cfg.heads, k_max=cfg.k_max,
        k_layers=cfg.conv_layers, kernel=cfg.conv_kernel, window=cfg.window,
        mode=mode, fusion_kind=cfg.fusion,
        fusion_per_position=cfg.fusion_per_position, use_vtli=cfg.vtli,
        embedding_table=dataset.embedding_table,
        train_embeddings=cfg.train_embeddings, boundary_half=cfg.boundary_half)
    model.head.convs[-1].W.data *= cfg.final_gain
    return model


def build_captioner(cfg: Config, dataset: CapDataset, rng: Rng) -> PMICaptioner:
    mode = cfg.interaction if cfg.pmi else "baseline_concat"
    return PMICaptioner(
        tags=dataset.tags, dims=dataset.dims, vocab_size=len(dataset.vocab),
        rng=rng, d=cfg.d, d_low=cfg.d_low, d_c=cfg.d_c, heads=cfg.heads,
        k_max=cfg.k_max, d_word=cfg.word_dim, dec_hidden=cfg.dec_hidden,
        enc_hidden=cfg.resolved_enc_hidden(), mode=mode, fusion_kind=cfg.fusion,
        attend_fused=cfg.attend_fused, max_len=cfg.max_len)


# --------------------------------------------------------------------------
# Localization training / evaluation
# --------------------------------------------------------------------------


def _loc_example_loss(model: PMILocalizer, example: LocExample, tags, cfg: Config):
    out = model(example.bundle(tags), example.token_ids)
    pred = pred_loss(out.boundary, out.relevance, example.gt,
                     lambda_r=cfg.lambda_r, delta=cfg.huber_delta)
    if cfg.norm_reg and cfg.conv_layers > 1:
        norm = norm_loss(out.conv_outputs[:-1], [cfg.beta] * (cfg.conv_layers - 1))
        return total_loss(pred, norm, cfg.lambda_n), float(pred.item()), float(norm.item())
    return pred, float(pred.item()), 0.0


def train_localizer(cfg: Config, out_dir) -> str:
    """Train and return the final checkpoint path; writes run.log."""
    os.makedirs(out_dir, exist_ok=True)
    dataset = LocDataset(cfg.train_dir, cfg.resolved_seq_len(),
                         embeddings_path=cfg.embeddings or None)
    model = build_localizer(cfg, dataset, Rng(cfg.seed, stream=1))
    params = model.named_parameters()
    opt = Adam(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    sampler = Rng(cfg.seed, stream=2)
    ckpt_path = os.path.join(out_dir, "model.pmic")
    log_path = os.path.join(out_dir, "run.log")

    start = time.time()
    with open(log_path, "w", encoding="utf-8") as log:
        for step in range(1, cfg.steps + 1):
            batch = sampler.choice(len(dataset), cfg.batch_size, replace=True)
            opt.zero_grad()
            with Graph() as graph:
                total = None
                pred_sum = norm_sum = 0.0
                for idx in batch:
                    loss, p, n = _loc_example_loss(model, dataset.examples[idx],
                                                   dataset.tags, cfg)
                    total = loss if total is None else total + loss
                    pred_sum += p
                    norm_sum += n
                total = total * (1.0 / cfg.batch_size)
                value = total.item()
                if not np.isfinite(value):
                    raise NumericalError(
                        f"non-finite loss at step {step}; last checkpoint kept")
                graph.backward(total)
            grad_norm = clip_global_norm(params, cfg.clip_norm)
            opt.step()
            if step % cfg.log_every == 0 or step == cfg.steps:
                log.write(f"step={step} loss={value:.17g} "
                          f"pred={pred_sum / cfg.batch_size:.17g} "
                          f"norm={norm_sum / cfg.batch_size:.17g} "
                          f"grad_norm={grad_norm:.6g} "
                          f"time={time.time() - start:.3f}\n")
            if step % cfg.checkpoint_every == 0:
                save_checkpoint(ckpt_path, params)
    save_checkpoint(ckpt_path, params)
    return ckpt_path


def eval_localizer(cfg: Config, ckpt_path, out_dir) -> dict[float, float]:
    """Recall@1 at the standard IoU thresholds plus a prediction dump."""
    os.makedirs(out_dir, exist_ok=True)
    emb = cfg.embeddings or os.path.join(cfg.train_dir or cfg.test_dir,
                                         "embeddings.txt")
    dataset = LocDataset(cfg.test_dir, cfg.resolved_seq_len(), embeddings_path=emb)
    model = build_localizer(cfg, dataset, Rng(cfg.seed, stream=1))
    if ckpt_path is not None:
        apply_checkpoint(model.named_parameters(), load_checkpoint(ckpt_path))

    preds, truths, rows = [], [], []
    with T.no_grad():
        for ex in dataset.examples:
            out = model(ex.bundle(dataset.tags), ex.token_ids)
            seg = decode_segment(out.boundary.data, ex.annotation.duration)
            preds.append(seg)
            truths.append((ex.annotation.start, ex.annotation.end))
            rows.append((ex.annotation.video_id, seg[0], seg[1],
                         out.relevance.data))
    write_predictions(os.path.join(out_dir, "predictions.tsv"), rows)
    recalls = {m: recall_at_iou(preds, truths, m) for m in IOU_THRESHOLDS}
    with open(os.path.join(out_dir, "metrics.txt"), "w", encoding="utf-8") as fh:
        fh.write("IoU " + " ".join(str(m) for m in IOU_THRESHOLDS) + "\n")
        fh.write("R@1 " + " ".join(f"{recalls[m]:.2f}" for m in IOU_THRESHOLDS) + "\n")
    return recalls


# --------------------------------------------------------------------------
# Captioning training / evaluation
# --------------------------------------------------------------------------


def train_captioner(cfg: Config, out_dir) -> str:
    os.makedirs(out_dir, exist_ok=True)
    dataset = CapDataset(cfg.train_dir, cfg.resolved_seq_len(),
                         min_count=cfg.vocab_min_count)
    model = build_captioner(cfg, dataset, Rng(cfg.seed, stream=1))
    params = model.named_parameters()
    opt = Adam(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    sampler = Rng(cfg.seed, stream=2)
    ckpt_path = os.path.join(out_dir, "model.pmic")
    log_path = os.path.join(out_dir, "run.log")

    start = time.time()
    with open(log_path, "w", encoding="utf-8") as log:
        for step in range(1, cfg.steps + 1):
            batch = sampler.choice(len(dataset), cfg.batch_size, replace=True)
            opt.zero_grad()
            with Graph() as graph:
                total = None
                for idx in batch:
                    ex = dataset.examples[idx]
                    loss = model.caption_loss(ex.bundle(dataset.tags), ex.token_ids)
                    total = loss if total is None else total + loss
                total = total * (1.0 / cfg.batch_size)
                value = total.item()
                if not np.isfinite(value):
                    raise NumericalError(
                        f"non-finite loss at step {step}; last checkpoint kept")
                graph.backward(total)
            grad_norm = clip_global_norm(params, cfg.clip_norm)
            opt.step()
            if step % cfg.log_every == 0 or step == cfg.steps:
                log.write(f"step={step} loss={value:.17g} "
                          f"grad_norm={grad_norm:.6g} "
                          f"time={time.time() - start:.3f}\n")
            if step % cfg.checkpoint_every == 0:
                save_checkpoint(ckpt_path, params)
    save_checkpoint(ckpt_path, params)
    return ckpt_path


def eval_captioner(cfg: Config, ckpt_path, out_dir) -> dict[str, float]:
    os.makedirs(out_dir, exist_ok=True)
    train_set = CapDataset(cfg.train_dir, cfg.resolved_seq_len(),
                           min_count=cfg.vocab_min_count)
    dataset = CapDataset(cfg.test_dir, cfg.resolved_seq_len(), vocab=train_set.vocab)
    model = build_captioner(cfg, dataset, Rng(cfg.seed, stream=1))
    if ckpt_path is not None:
        apply_checkpoint(model.named_parameters(), load_checkpoint(ckpt_path))

    by_video = {ex.video_id: ex for ex in dataset.examples}
    candidates, references, rows = [], [], []
    mode = "beam" if cfg.beam > 1 else "greedy"
    for vid in dataset.video_ids:
        ex = by_video[vid]
        ids = model.generate(ex.bundle(dataset.tags), mode=mode, beam=cfg.beam)
        sentence = dataset.vocab.decode(ids)
        rows.append(f"{vid}\t{sentence}")
        candidates.append(sentence.split())
        references.append(dataset.references[vid])
    with open(os.path.join(out_dir, "captions_pred.tsv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")
    b = bleu(candidates, references)
    c = cider(candidates, references)
    metrics = {"B@1": b[0], "B@2": b[1], "B@3": b[2], "B@4": b[3], "CIDEr": c}
    with open(os.path.join(out_dir, "metrics.txt"), "w", encoding="utf-8") as fh:
        fh.write(" ".join(metrics.keys()) + "\n")
        fh.write(" ".join(f"{v:.2f}" for v in metrics.values()) + "\n")
    return metrics


# --------------------------------------------------------------------------
# Ablation
# --------------------------------------------------------------------------

ABLATION_AXES = {
    "fusion": [("concat", {"fusion": "concat"}),
               ("sum", {"fusion": "sum"}),
               ("weighted", {"fusion": "weighted"})],
    "interaction": [("baseline_concat", {"interaction": "baseline_concat"}),
                    ("concat_interact", {"interaction": "concat_interact"}),
                    ("intra_only", {"interaction": "intra_only"}),
                    ("inter_only", {"interaction": "inter_only"}),
                    ("full", {"interaction": "full"})],
    "loc_components": [("none", {"pmi": False, "vtli": False, "norm_reg": False}),
                       ("pmi", {"pmi": True, "vtli": False, "norm_reg": False}),
                       ("pmi+vtli", {"pmi": True, "vtli": True, "norm_reg": False}),
                       ("pmi+vtli+norm", {"pmi": True, "vtli": True, "norm_reg": True})],
}


def run_ablation(cfg: Config, axis: str, out_dir, n_seeds: int = 3) -> list[dict]:
    """Train each variant with shared seeds; rows follow the axis order."""
    if axis not in ABLATION_AXES:
        raise ValueError(f"unknown ablation axis '{axis}'")
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for name, overrides in ABLATION_AXES[axis]:
        seeds = [cfg.seed + k for k in range(n_seeds)]
        per_seed = []
        for seed in seeds:
            variant = Config(**{**vars(cfg), **overrides, "seed": seed})
            variant.validate()
            run_dir = os.path.join(out_dir, f"{axis}_{name}_seed{seed}")
            ckpt = train_localizer(variant, run_dir)
            recalls = eval_localizer(variant, ckpt, run_dir)
            per_seed.append(recalls)
        mean = {m: sum(r[m] for r in per_seed) / n_seeds for m in IOU_THRESHOLDS}
        rows.append({"variant": name, "seeds": seeds, "per_seed": per_seed,
                     "mean": mean})
    table_path = os.path.join(out_dir, f"ablation_{axis}.txt")
    with open(table_path, "w", encoding="utf-8") as fh:
        fh.write("variant seeds " +
                 " ".join(f"R@1_IoU{m}" for m in IOU_THRESHOLDS) + "\n")
        for row in rows:
            seeds = ",".join(str(s) for s in row["seeds"])
            vals = " ".join(f"{row['mean'][m]:.2f}" for m in IOU_THRESHOLDS)
            fh.write(f"{row['variant']} {seeds} {vals}\n")
    return rows


# --------------------------------------------------------------------------
# Explain dumps
# --------------------------------------------------------------------------


def explain(cfg: Config, ckpt_path, example_id: str, out_dir) -> list[str]:
    """Dump fusion weights, attention maps, gate stats, and relevance."""
    os.makedirs(out_dir, exist_ok=True)
    emb = cfg.embeddings or os.path.join(cfg.train_dir or cfg.test_dir,
                                         "embeddings.txt")
    dataset = LocDataset(cfg.test_dir, cfg.resolved_seq_len(), embeddings_path=emb)
    model = build_localizer(cfg, dataset, Rng(cfg.seed, stream=1))
    if ckpt_path is not None:
        apply_checkpoint(model.named_parameters(), load_checkpoint(ckpt_path))

    example = next((ex for ex in dataset.examples
                    if ex.annotation.video_id == example_id), None)
    if example is None:
        raise ValueError(f"example '{example_id}' not found in {cfg.test_dir}")
    with T.no_grad():
        out = model(example.bundle(dataset.tags), example.token_ids)

    written = []

    def dump(name, matrix, header=""):
        path = os.path.join(out_dir, name)
        np.savetxt(path, np.asarray(matrix), fmt="%.6f",
                   header=header, comments="# ")
        written.append(path)

    if out.encoded.alpha is not None:
        dump("alpha.txt", out.encoded.alpha.data,
             header="pairs: " + " ".join(f"{p}-{q}" for p, q in out.encoded.pair_order))
    for (p, q), maps in out.encoded.details.attention.items():
        dump(f"attention_{p}_{q}.txt", np.mean(maps, axis=0),
             header=f"head-averaged attention for pair ({p}, {q})")
    gate_rows = []
    for (p, q), gate in out.encoded.details.gates.items():
        gate_rows.append((p, q, gate.mean(), gate.std(), gate.min(), gate.max()))
    path = os.path.join(out_dir, "gate_stats.txt")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("pair mean std min max\n")
        for p, q, mean, std, lo, hi in gate_rows:
            fh.write(f"{p}-{q} {mean:.6f} {std:.6f} {lo:.6f} {hi:.6f}\n")
    written.append(path)
    dump("relevance.txt", out.relevance.data.reshape(-1, 1))
    return written
