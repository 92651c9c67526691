"""Finite-difference verification suite over every layer and both models.

All components run at tiny dims so central differences stay cheap.  Each
functional carries a small output scale: the relative-error formula floors
its denominator at 1e-8, so keeping |f| small keeps evaluation roundoff for
structurally-zero gradients (e.g. the softmax-dead fusion bias) below the
pass threshold without touching real gradient comparisons.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .captioning import EOS, CaptionDecoder, PMICaptioner, TemporalAttention
from .gradcheck import finite_diff_check
from .interaction import CGMI, BilinearAttention, ChannelGate, Fusion, \
    ModalityBundle, PMIEncoder
from .layers import FFN, BiLSTM, Embedding, InstanceNorm, Linear, LSTMCell
from .localization import (
    ConvHead,
    MMUnit,
    VTLI,
    GroundTruth,
    PMILocalizer,
    norm_loss,
    pred_loss,
    total_loss,
)
from .rng import Rng
from .tensor import Tensor

PASS_THRESHOLD = 1e-4
EPS = 1e-5
SCALE = 0.01


def _check_matmul():
    rng = Rng(101)
    a = T.parameter(rng.normal(size=(3, 4)))
    b = T.parameter(rng.normal(size=(4, 2)))
    return finite_diff_check(lambda: T.matmul(a, b).sum() * SCALE,
                             {"a": a, "b": b}, eps=EPS)


def _check_elementwise():
    rng = Rng(102)
    x = T.parameter(rng.normal(size=(3, 3)) + 0.2)
    y = T.parameter(rng.normal(size=(3, 3)) + 3.0)

    def f():
        out = (x * y).tanh() + (x + y).sigmoid() + y.log() + y.sqrt()
        return (out + T.huber(x, delta=1.0)).sum() * SCALE

    return finite_diff_check(f, {"x": x, "y": y}, eps=EPS,
                             kinks={"x": [-1.0, 0.0, 1.0]})


def _check_softmax():
    rng = Rng(103)
    x = T.parameter(rng.normal(size=(4, 5)))
    w = Tensor(rng.normal(size=(4, 5)))
    return finite_diff_check(lambda: (T.softmax_axis(x, 1) * w).sum() * SCALE,
                             {"x": x}, eps=EPS)


def _check_reduce():
    rng = Rng(104)
    x = T.parameter(rng.normal(size=(4, 3)))
    return finite_diff_check(
        lambda: (x.mean(axis=0) * x.sum(axis=1).sum()).sum() * SCALE,
        {"x": x}, eps=EPS)


def _check_concat_gather():
    rng = Rng(105)
    a = T.parameter(rng.normal(size=(3, 2)))
    b = T.parameter(rng.normal(size=(3, 3)))

    def f():
        joined = T.concat([a, b], axis=1)
        picked = T.gather_rows(joined, [2, 0, 2, 1])
        return T.narrow(picked, 1, 1, 3).sum() * SCALE

    return finite_diff_check(f, {"a": a, "b": b}, eps=EPS)


def _check_linear():
    lin = Linear(5, 3, Rng(106))
    x = T.parameter(Rng(107).normal(size=(4, 5)))
    return finite_diff_check(lambda: lin(x).sum() * SCALE,
                             {"x": x, **lin.named_parameters("linear")}, eps=EPS)


def _check_ffn():
    ffn = FFN(4, 4, 3, Rng(108))
    x = T.parameter(Rng(109).normal(size=(3, 4)))
    return finite_diff_check(lambda: ffn(x).sum() * SCALE,
                             {"x": x, **ffn.named_parameters("ffn")}, eps=EPS)


def _check_recurrent():
    cell = LSTMCell(3, 4, Rng(110))
    xs = T.parameter(Rng(111).normal(size=(3, 3)))

    def f():
        h, c = cell.initial_state()
        for t in range(3):
            h, c = cell.step(T.narrow(xs, 0, t, 1), h, c)
        return h.sum() * SCALE

    return finite_diff_check(f, {"xs": xs, **cell.named_parameters("lstm")}, eps=EPS)


def _check_bidirectional():
    enc = BiLSTM(3, 2, Rng(112))
    x = T.parameter(Rng(113).normal(size=(4, 3)))
    return finite_diff_check(lambda: enc(x).sum() * SCALE,
                             {"x": x, **enc.named_parameters("bilstm")}, eps=EPS)


def _check_instance_norm():
    norm = InstanceNorm(3)
    x = T.parameter(Rng(114).normal(size=(5, 3)))
    w = Tensor(Rng(115).normal(size=(5, 3)))
    return finite_diff_check(lambda: (norm(x) * w).sum() * SCALE,
                             {"x": x, **norm.named_parameters("inorm")}, eps=EPS)


def _check_embedding():
    emb = Embedding(6, 3, Rng(116))
    w = Tensor(Rng(117).normal(size=(4, 3)))
    return finite_diff_check(lambda: (emb([2, 4, 2, 5]) * w).sum() * SCALE,
                             emb.named_parameters("embed"), eps=EPS)


def _check_bilinear_attention():
    ba = BilinearAttention(6, 2, 2, Rng(118), k_max=2)
    xp = T.parameter(Rng(119).normal(size=(4, 6)))
    xq = T.parameter(Rng(120).normal(size=(4, 6)))
    return finite_diff_check(lambda: ba(xp, xq)[0].sum() * SCALE,
                             {"xp": xp, "xq": xq, **ba.named_parameters("ba")},
                             eps=EPS)


def _check_channel_gate():
    gate = ChannelGate(5, 3, Rng(121))
    xp = T.parameter(Rng(122).normal(size=(4, 5)))
    xq = T.parameter(Rng(123).normal(size=(4, 5)))
    return finite_diff_check(lambda: gate(xp, xq)[0].sum() * SCALE,
                             {"xp": xp, "xq": xq, **gate.named_parameters("cg")},
                             eps=EPS)


def _check_cgmi():
    block = CGMI(6, 2, 2, 1, 2, Rng(124))
    xp = T.parameter(Rng(125).normal(size=(4, 6)))
    xq = T.parameter(Rng(126).normal(size=(4, 6)))
    return finite_diff_check(lambda: block(xp, xq)[0].sum() * SCALE,
                             {"xp": xp, "xq": xq, **block.named_parameters("cgmi")},
                             eps=EPS)


def _check_fusion():
    fusion = Fusion(4, 3, "weighted", Rng(127))
    slots = [T.parameter(Rng(128 + i).normal(size=(3, 4))) for i in range(3)]
    params = {f"slot{i}": s for i, s in enumerate(slots)}
    params.update(fusion.named_parameters("fusion"))
    return finite_diff_check(lambda: fusion(slots)[0].sum() * SCALE, params, eps=EPS)


def _check_pmi_encoder():
    enc = PMIEncoder(["visual", "motion"], [3, 3], 6, 2, 2, 1, 2, Rng(131))
    feats = [Rng(132 + i).normal(size=(3, 3)) for i in range(2)]

    def f():
        bundle = ModalityBundle([("visual", feats[0]), ("motion", feats[1])])
        return enc(bundle).fused.sum() * SCALE

    return finite_diff_check(f, enc.named_parameters("encoder"), eps=EPS)


def _check_mm_unit():
    mm = MMUnit(4, Rng(134))
    a = T.parameter(Rng(135).normal(size=(3, 4)))
    b = T.parameter(Rng(136).normal(size=(3, 4)))
    return finite_diff_check(lambda: mm(a, b).sum() * SCALE,
                             {"a": a, "b": b, **mm.named_parameters("mm")}, eps=EPS)


def _check_vtli():
    vtli = VTLI(6, 2, 1, Rng(137), w=1)
    x = T.parameter(Rng(138).normal(size=(4, 6)))
    y = T.parameter(Rng(139).normal(size=(3, 6)))
    return finite_diff_check(lambda: vtli(x, y).sum() * SCALE,
                             {"x": x, "y": y, **vtli.named_parameters("vtli")},
                             eps=EPS)


def _check_conv_head():
    head = ConvHead(4, 2, 3, 6, Rng(140), channel_plan=[2, 1])
    z = T.parameter(Rng(141).normal(size=(6, 4)))
    y = T.parameter(Rng(142).normal(size=(4,)))

    def f():
        conv_outputs, relevance, boundary = head(z, y)
        return ((relevance * Tensor(Rng(143).normal(size=6))).sum()
                + boundary.sum() + conv_outputs[0].sum()) * SCALE

    return finite_diff_check(f, {"z": z, "y": y, **head.named_parameters("head")},
                             eps=EPS)


def _check_loc_losses():
    rng = Rng(144)
    c1 = T.parameter(rng.normal(size=(5, 3)))
    boundary = T.parameter(rng.normal(0.5, 0.2, size=2))
    scores = T.parameter(rng.normal(size=5))
    gt = GroundTruth(np.array([0.2, 0.6]), np.array([0.0, 1.0, 1.0, 0.0, 0.0]))

    def f():
        relevance = T.softmax_axis(scores, axis=0)
        pred = pred_loss(boundary, relevance, gt, lambda_r=5.0, delta=1.0)
        norm = norm_loss([c1], [1.0])
        return total_loss(pred, norm, lambda_n=0.001) * SCALE

    kink = [float(gt.boundary[0]) - 1.0, float(gt.boundary[0]) + 1.0,
            float(gt.boundary[1]) - 1.0, float(gt.boundary[1]) + 1.0]
    return finite_diff_check(f, {"c1": c1, "boundary": boundary, "scores": scores},
                             eps=EPS, kinks={"boundary": kink})


def _check_temporal_attention():
    attn = TemporalAttention(4, 3, 4, Rng(145))
    h = T.parameter(Rng(146).normal(size=(1, 4)))
    video = T.parameter(Rng(147).normal(size=(5, 3)))
    return finite_diff_check(lambda: attn(h, video)[0].sum() * SCALE,
                             {"h": h, "video": video,
                              **attn.named_parameters("attn")}, eps=EPS)


def _check_decoder_step():
    dec = CaptionDecoder(vocab_size=8, d_word=4, d_video=4, hidden=4, rng=Rng(148))
    video = T.parameter(Rng(149).normal(size=(3, 4)))

    def f():
        state = dec.initial_state()
        logits, state, _ = dec.step(state, video)
        state.prev_token = 5
        logits2, _, _ = dec.step(state, video)
        return (logits.sum() + logits2.sum()) * SCALE

    return finite_diff_check(f, {"video": video, **dec.named_parameters("dec")},
                             eps=EPS)


def _check_localizer_end_to_end():
    rng = Rng(150)
    feats = [rng.normal(size=(4, 3)), rng.normal(size=(4, 3))]
    table = rng.normal(0.0, 0.5, size=(7, 3))
    model = PMILocalizer(
        tags=["visual", "motion"], dims=[3, 3], vocab_size=7, d_w=3, seq_len=4,
        rng=Rng(151), d=6, d_low=2, d_c=2, heads=1, k_max=1, k_layers=2,
        kernel=3, window=1, embedding_table=table, train_embeddings=True,
        boundary_half=0.2)
    gt = GroundTruth(np.array([0.25, 0.75]), np.array([0.0, 1.0, 1.0, 0.0]))

    def f():
        bundle = ModalityBundle([("visual", feats[0]), ("motion", feats[1])])
        out = model(bundle, [4, 5, 6])
        pred = pred_loss(out.boundary, out.relevance, gt)
        norm = norm_loss(out.conv_outputs[:-1], [1.0])
        return total_loss(pred, norm) * 0.002

    return finite_diff_check(f, model.named_parameters("loc"), eps=EPS)


def _check_captioner_end_to_end():
    rng = Rng(152)
    feats = [rng.normal(size=(3, 3)), rng.normal(size=(3, 3))]
    model = PMICaptioner(
        tags=["visual", "audio"], dims=[3, 3], vocab_size=8, rng=Rng(153),
        d=6, d_low=2, d_c=2, heads=1, k_max=1, d_word=4, dec_hidden=4,
        enc_hidden=3, max_len=6)

    def f():
        bundle = ModalityBundle([("visual", feats[0]), ("audio", feats[1])])
        return model.caption_loss(bundle, [5, 6, EOS]) * 0.002

    return finite_diff_check(f, model.named_parameters("cap"), eps=EPS)


COMPONENTS: list[tuple[str, Callable[[], float]]] = [
    ("matmul", _check_matmul),
    ("elementwise", _check_elementwise),
    ("softmax", _check_softmax),
    ("reduce", _check_reduce),
    ("concat_gather", _check_concat_gather),
    ("linear", _check_linear),
    ("ffn", _check_ffn),
    ("recurrent_cell", _check_recurrent),
    ("bidirectional_encoder", _check_bidirectional),
    ("instance_norm", _check_instance_norm),
    ("embedding", _check_embedding),
    ("bilinear_attention", _check_bilinear_attention),
    ("channel_gate", _check_channel_gate),
    ("cgmi_block", _check_cgmi),
    ("fusion", _check_fusion),
    ("pmi_encoder", _check_pmi_encoder),
    ("mm_unit", _check_mm_unit),
    ("vtli", _check_vtli),
    ("conv_head", _check_conv_head),
    ("localization_losses", _check_loc_losses),
    ("temporal_attention", _check_temporal_attention),
    ("decoder_step", _check_decoder_step),
    ("localizer_end_to_end", _check_localizer_end_to_end),
    ("captioner_end_to_end", _check_captioner_end_to_end),
]


def run_gradcheck_suite(report=print) -> bool:
    """Run every component check; returns True iff all pass."""
    all_ok = True
    for name, check in COMPONENTS:
        try:
            err = check()
        except Exception as exc:  # non-finite values surface here
            report(f"{name}: FAIL ({exc})")
            all_ok = False
            continue
        ok = err < PASS_THRESHOLD
        all_ok = all_ok and ok
        report(f"{name}: max_rel_err={err:.3e} {'PASS' if ok else 'FAIL'}")
    return all_ok
