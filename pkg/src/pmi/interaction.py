"""Channel-gated pairwise modality interaction and weighted fusion.

One interaction block couples an ordered pair of feature sequences: a
low-rank bilinear attention mixes positions of the second sequence into the
first (sequence level), a gate derived from channel statistics modulates the
result elementwise (channel level), and a residual plus position-wise FFN
closes the block.  The encoder tiles the block over every ordered modality
pair and fuses the pair outputs with learned importance weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .layers import FFN, Layer, Linear, RelPosTable
from .rng import Rng
from .tensor import Tensor

MODALITY_TAGS = ("visual", "motion", "audio", "latent", "text")


@dataclass
class ModalityBundle:
    """Ordered per-modality feature sequences sharing a common length."""

    items: list[tuple[str, np.ndarray]]

    def __post_init__(self):
        if not 1 <= len(self.items) <= 5:
            raise ValueError(f"bundle must hold 1..5 modalities, got {len(self.items)}")
        tags = [tag for tag, _ in self.items]
        if len(set(tags)) != len(tags):
            raise ValueError(f"duplicate modality tags: {tags}")
        for tag in tags:
            if tag not in MODALITY_TAGS:
                raise ValueError(f"unknown modality tag '{tag}'")
        lengths = {feat.shape[0] for _, feat in self.items}
        if len(lengths) != 1:
            raise ValueError(f"modalities disagree on sequence length: {lengths}")

    @property
    def tags(self) -> list[str]:
        return [tag for tag, _ in self.items]

    @property
    def dims(self) -> list[int]:
        return [feat.shape[1] for _, feat in self.items]

    @property
    def length(self) -> int:
        return self.items[0][1].shape[0]

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class InteractionDetails:
    """Per-pair inspection data kept for tests and explain dumps."""

    attention: dict[tuple[str, str], list[np.ndarray]] = field(default_factory=dict)
    gates: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)
    channel_maps: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)


@dataclass
class InteractionTensor:
    """Tiled pair outputs plus fusion weights and the fused sequence."""

    pair_order: list[tuple[str, str]]
    slots: list[Tensor]
    alpha: Optional[Tensor]
    fused: Tensor
    details: InteractionDetails


class BilinearAttention(Layer):
    """Low-rank bilinear attention over all position pairs of two sequences.

    Attention logits for head h use the head's slice of the shared low-rank
    channels; each head mixes the full value rows, the heads are concatenated
    and merged back to the interaction width.  A clipped relative-position
    table is added on the value path when both sequences index the same
    timeline.
    """

    def __init__(self, d: int, d_low: int, heads: int, rng: Rng,
                 k_max: Optional[int] = None):
        if d_low >= d:
            raise ValueError(f"low-rank dim must satisfy d_low < d, got {d_low} >= {d}")
        if d_low % heads != 0:
            raise ValueError(f"heads must divide d_low ({heads} vs {d_low})")
        from .layers import xavier_uniform

        self.U_p = T.parameter(xavier_uniform(rng, d, d_low))
        self.U_q = T.parameter(xavier_uniform(rng, d, d_low))
        self.p = T.parameter(xavier_uniform(rng, 1, d_low).reshape(-1))
        self.W_q = T.parameter(xavier_uniform(rng, d, d))
        self.merge = Linear(heads * d, d, rng)
        self.relpos = RelPosTable(k_max, d, rng) if k_max is not None else None
        self.d = d
        self.d_low = d_low
        self.heads = heads

    def _head_logits(self, q_proj: Tensor, k_proj: Tensor, head: int) -> Tensor:
        per = self.d_low // self.heads
        lo = head * per
        q_h = T.narrow(q_proj, 1, lo, per)
        k_h = T.narrow(k_proj, 1, lo, per)
        p_h = T.narrow(self.p.reshape(1, self.d_low), 1, lo, per)
        return T.matmul(q_h * p_h, k_h.transpose())

    def __call__(self, x_p: Tensor, x_q: Tensor,
                 use_relpos: bool = True) -> tuple[Tensor, list[np.ndarray]]:
        n, nq = x_p.shape[0], x_q.shape[0]
        if n == 0 or nq == 0:
            raise T.ShapeError("bilinear attention needs non-empty sequences")
        q_proj = T.matmul(x_p, self.U_p).relu()
        k_proj = T.matmul(x_q, self.U_q).relu()
        values = T.matmul(x_q, self.W_q)

        bins = None
        if self.relpos is not None and use_relpos:
            bins = self.relpos.bin_matrix(n, nq)

        head_outs, attn_maps = [], []
        for h in range(self.heads):
            attn = T.softmax_axis(self._head_logits(q_proj, k_proj, h), axis=1)
            out_h = T.matmul(attn, values)
            if bins is not None:
                out_h = out_h + T.bin_mix(attn, self.relpos.table, bins)
            head_outs.append(out_h)
            attn_maps.append(attn.data)
        return self.merge(T.concat(head_outs, axis=1)), attn_maps

    def attend_windows(self, query_row: Tensor, keys: Tensor,
                       window_idx: np.ndarray) -> Tensor:
        """Shared-query attention over per-position local windows.

        ``query_row`` is 1 x d, ``keys`` is N x d, and ``window_idx`` is an
        N x (2w+1) matrix of clamped row indices; row t attends only over its
        window.  Relative positions are not applied (single-row query).
        """
        n, width = window_idx.shape
        q_proj = T.matmul(query_row, self.U_p).relu()
        k_proj = T.matmul(keys, self.U_q).relu()
        values = T.matmul(keys, self.W_q)
        flat_idx = window_idx.reshape(-1)

        head_outs = []
        for h in range(self.heads):
            scores = self._head_logits(q_proj, k_proj, h).reshape(keys.shape[0])
            win_scores = T.gather_rows(scores, flat_idx).reshape(n, width)
            attn = T.softmax_axis(win_scores, axis=1)
            win_vals = T.gather_rows(values, flat_idx).reshape(n, width, self.d)
            head_outs.append((attn.reshape(n, width, 1) * win_vals).sum(axis=1))
        return self.merge(T.concat(head_outs, axis=1))


class ChannelGate(Layer):
    """Sigmoid gate from channel-to-channel interaction of pooled features."""

    def __init__(self, d: int, d_c: int, rng: Rng):
        from .layers import xavier_uniform

        self.V_p = T.parameter(xavier_uniform(rng, d, d_c))
        self.V_q = T.parameter(xavier_uniform(rng, d, d_c))
        self.ffn = FFN(d_c, d_c, d, rng)
        self.d_c = d_c

    def __call__(self, x_p: Tensor, x_q: Tensor) -> tuple[Tensor, np.ndarray]:
        proj_p = T.matmul(x_p, self.V_p)
        proj_q = T.matmul(x_q, self.V_q)
        mean_p = proj_p.mean(axis=0).reshape(self.d_c, 1)
        mean_q = proj_q.mean(axis=0).reshape(1, self.d_c)
        diff = mean_p - mean_q
        channel_map = T.softmax_axis(-(diff * diff), axis=0)
        gate = self.ffn(T.matmul(proj_p, channel_map)).sigmoid()
        return gate, channel_map.data


class CGMI(Layer):
    """One ordered pair's interaction: FFN(BA(p,q) * CG(p,q) + X^p)."""

    def __init__(self, d: int, d_low: int, d_c: int, heads: int, k_max: int,
                 rng: Rng):
        self.ba = BilinearAttention(d, d_low, heads, rng, k_max=k_max)
        self.gate = ChannelGate(d, d_c, rng)
        self.out_ffn = FFN(d, d, d, rng)

    def __call__(self, x_p: Tensor, x_q: Tensor, use_relpos: bool = True,
                 ) -> tuple[Tensor, list[np.ndarray], np.ndarray, np.ndarray]:
        ba_out, attn_maps = self.ba(x_p, x_q, use_relpos=use_relpos)
        gate, channel_map = self.gate(x_p, x_q)
        out = self.out_ffn(ba_out * gate + x_p)
        return out, attn_maps, gate.data, channel_map


class InputProjector(Layer):
    """Maps each modality to the common interaction width."""

    def __init__(self, tags: list[str], dims: list[int], d: int, rng: Rng):
        self.projections = [Linear(dim, d, rng) for dim in dims]
        self.tags = list(tags)

    def __call__(self, bundle: ModalityBundle) -> list[tuple[str, Tensor]]:
        if bundle.tags != self.tags:
            raise ValueError(
                f"bundle tags {bundle.tags} do not match projector tags {self.tags}")
        return [(tag, proj(Tensor(feat)))
                for (tag, feat), proj in zip(bundle.items, self.projections)]


class Fusion(Layer):
    """Aggregates the tiled pair outputs into one sequence."""

    KINDS = ("weighted", "sum", "concat")

    def __init__(self, d: int, n_slots: int, kind: str, rng: Rng,
                 per_position: bool = False, seq_len: Optional[int] = None):
        if kind not in self.KINDS:
            raise ValueError(f"unknown fusion kind '{kind}'")
        self.kind = kind
        self.n_slots = n_slots
        self.per_position = per_position
        if kind == "weighted":
            if per_position:
                if seq_len is None:
                    raise ValueError("per-position fusion needs the sequence length")
                from .layers import xavier_uniform

                self.W_a = T.parameter(xavier_uniform(rng, seq_len, d))
                self.b_a = T.parameter(np.zeros(seq_len))
            else:
                self.score = Linear(d, 1, rng)
        elif kind == "concat":
            self.proj = Linear(n_slots * d, d, rng)

    def __call__(self, slots: list[Tensor]) -> tuple[Tensor, Optional[Tensor]]:
        n, d = slots[0].shape
        s = len(slots)
        if s != self.n_slots:
            raise ValueError(f"expected {self.n_slots} pair slots, got {s}")
        stacked = T.concat([t.reshape(n, 1, d) for t in slots], axis=1)
        if self.kind == "sum":
            return stacked.mean(axis=1), None
        if self.kind == "concat":
            return self.proj(stacked.reshape(n, s * d)), None
        if self.per_position:
            logits = (stacked * self.W_a.reshape(n, 1, d)).sum(axis=2) \
                + self.b_a.reshape(n, 1)
        else:
            logits = self.score(stacked.reshape(n * s, d)).reshape(n, s)
        alpha = T.softmax_axis(logits, axis=1)
        fused = (alpha.reshape(n, s, 1) * stacked).sum(axis=1)
        return fused, alpha


class PMIEncoder(Layer):
    """Pairwise interaction over a modality bundle with a configurable mode.

    Modes: ``full`` tiles every ordered pair; ``intra_only`` keeps (p, p)
    pairs; ``inter_only`` keeps p != q; ``concat_interact`` projects the
    feature-concatenated bundle to one sequence and self-interacts it;
    ``baseline_concat`` is the projection alone with no interaction.
    """

    MODES = ("full", "intra_only", "inter_only", "concat_interact",
             "baseline_concat")

    def __init__(self, tags: list[str], dims: list[int], d: int, d_low: int,
                 d_c: int, heads: int, k_max: int, rng: Rng,
                 mode: str = "full", fusion_kind: str = "weighted",
                 fusion_per_position: bool = False,
                 seq_len: Optional[int] = None):
        if mode not in self.MODES:
            raise ValueError(f"unknown interaction mode '{mode}'")
        m = len(tags)
        self.mode = mode
        self.tags = list(tags)
        if mode in ("concat_interact", "baseline_concat"):
            self.concat_proj = Linear(sum(dims), d, rng)
            if mode == "concat_interact":
                self.block = CGMI(d, d_low, d_c, heads, k_max, rng)
            self.pair_order: list[tuple[str, str]] = []
            return

        self.projector = InputProjector(tags, dims, d, rng)
        if mode == "full":
            pairs = [(i, j) for i in range(m) for j in range(m)]
        elif mode == "intra_only":
            pairs = [(i, i) for i in range(m)]
        else:
            pairs = [(i, j) for i in range(m) for j in range(m) if i != j]
            if not pairs:
                raise ValueError("inter_only needs at least two modalities")
        self.pair_index = pairs
        self.pair_order = [(tags[i], tags[j]) for i, j in pairs]
        self.blocks = [CGMI(d, d_low, d_c, heads, k_max, rng) for _ in pairs]
        self.fusion = Fusion(d, len(pairs), fusion_kind, rng,
                             per_position=fusion_per_position, seq_len=seq_len)

    def __call__(self, bundle: ModalityBundle) -> InteractionTensor:
        if self.mode in ("concat_interact", "baseline_concat"):
            joined = Tensor(np.concatenate([feat for _, feat in bundle.items], axis=1))
            projected = self.concat_proj(joined)
            details = InteractionDetails()
            if self.mode == "baseline_concat":
                return InteractionTensor([], [projected], None, projected, details)
            out, attn, gate, cmap = self.block(projected, projected)
            details.attention[("joint", "joint")] = attn
            details.gates[("joint", "joint")] = gate
            details.channel_maps[("joint", "joint")] = cmap
            return InteractionTensor([("joint", "joint")], [out], None, out, details)

        projected = self.projector(bundle)
        details = InteractionDetails()
        slots = []
        for (i, j), block in zip(self.pair_index, self.blocks):
            tag_p, feat_p = projected[i]
            tag_q, feat_q = projected[j]
            out, attn, gate, cmap = block(feat_p, feat_q)
            slots.append(out)
            details.attention[(tag_p, tag_q)] = attn
            details.gates[(tag_p, tag_q)] = gate
            details.channel_maps[(tag_p, tag_q)] = cmap
        fused, alpha = self.fusion(slots)
        return InteractionTensor(self.pair_order, slots, alpha, fused, details)
