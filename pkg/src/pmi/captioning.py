"""Event captioning: bi-directional encoding of the fused video sequence,
a two-layer recurrent decoder with temporal attention, teacher-forced
training, and greedy/beam decoding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .interaction import ModalityBundle, PMIEncoder
from .layers import BiLSTM, Embedding, Layer, Linear, LSTMCell, xavier_uniform
from .rng import Rng
from .tensor import Tensor

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ["<pad>", "<unk>", "<bos>", "<eos>"]


class Vocabulary:
    """Token/id maps with reserved PAD/UNK/BOS/EOS entries."""

    def __init__(self, tokens: list[str]):
        self.id_to_token = list(RESERVED) + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def from_sentences(cls, sentences: list[str], min_count: int = 1) -> "Vocabulary":
        counts: dict[str, int] = {}
        for s in sentences:
            for tok in s.lower().split():
                counts[tok] = counts.get(tok, 0) + 1
        kept = sorted(t for t, c in counts.items() if c >= min_count)
        return cls(kept)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, sentence: str, add_eos: bool = True) -> list[int]:
        ids = [self.token_to_id.get(t, UNK) for t in sentence.lower().split()]
        return ids + [EOS] if add_eos else ids

    def decode(self, ids) -> str:
        words = []
        for i in ids:
            if i == EOS:
                break
            if i in (PAD, BOS):
                continue
            words.append(self.id_to_token[i] if 0 <= i < len(self.id_to_token)
                         else RESERVED[UNK])
        return " ".join(words)


class TemporalAttention(Layer):
    """score_i = v . tanh(W_h h + W_x V_i + b); context = sum softmax_i V_i."""

    def __init__(self, d_hidden: int, d_video: int, d_attn: int, rng: Rng):
        self.W_h = T.parameter(xavier_uniform(rng, d_hidden, d_attn))
        self.W_x = T.parameter(xavier_uniform(rng, d_video, d_attn))
        self.v = T.parameter(xavier_uniform(rng, 1, d_attn).reshape(-1))
        self.b = T.parameter(np.zeros(d_attn))

    def __call__(self, h: Tensor, video: Tensor) -> tuple[Tensor, Tensor]:
        n = video.shape[0]
        base = T.matmul(h, self.W_h) + self.b
        pre = (T.matmul(video, self.W_x) + base).tanh()
        scores = T.matmul(pre, self.v.reshape(-1, 1)).reshape(n)
        weights = T.softmax_axis(scores, axis=0)
        context = T.matmul(weights.reshape(1, n), video)
        return context, weights


@dataclass
class DecoderState:
    h1: Tensor
    c1: Tensor
    h2: Tensor
    c2: Tensor
    prev_token: int
    step: int


class CaptionDecoder(Layer):
    """Two recurrent layers; attention context enters layer one with the
    previous word, layer two reads layer one, logits read layer two."""

    def __init__(self, vocab_size: int, d_word: int, d_video: int,
                 hidden: int, rng: Rng, d_attn: Optional[int] = None):
        self.embed = Embedding(vocab_size, d_word, rng)
        self.attn = TemporalAttention(hidden, d_video, d_attn or hidden, rng)
        self.cell1 = LSTMCell(d_word + d_video, hidden, rng)
        self.cell2 = LSTMCell(hidden, hidden, rng)
        self.out = Linear(hidden, vocab_size, rng)
        self.vocab_size = vocab_size

    def initial_state(self) -> DecoderState:
        h1, c1 = self.cell1.initial_state()
        h2, c2 = self.cell2.initial_state()
        return DecoderState(h1, c1, h2, c2, BOS, 0)

    def step(self, state: DecoderState, video: Tensor,
             ) -> tuple[Tensor, DecoderState, Tensor]:
        context, weights = self.attn(state.h2, video)
        word = self.embed([state.prev_token])
        h1, c1 = self.cell1.step(T.concat([word, context], axis=1),
                                 state.h1, state.c1)
        h2, c2 = self.cell2.step(h1, state.h2, state.c2)
        logits = self.out(h2).reshape(self.vocab_size)
        new_state = DecoderState(h1, c1, h2, c2, state.prev_token, state.step + 1)
        return logits, new_state, weights


def log_softmax_np(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def _step_nll(logits: Tensor, target: int) -> Tensor:
    """Cross-entropy via logsumexp with a detached max for stability."""
    shift = float(logits.data.max())
    z = (logits - shift).exp().sum().log() + shift
    return z - T.gather_rows(logits, [target]).sum()


class PMICaptioner(Layer):
    """Interaction encoder + bi-directional recurrence + caption decoder."""

    def __init__(self, tags: list[str], dims: list[int], vocab_size: int,
                 rng: Rng, d: int = 512, d_low: int = 256, d_c: int = 64,
                 heads: int = 8, k_max: int = 16, d_word: int = 512,
                 dec_hidden: int = 512, enc_hidden: Optional[int] = None,
                 mode: str = "full", fusion_kind: str = "weighted",
                 attend_fused: bool = False, max_len: int = 30):
        self.encoder = PMIEncoder(tags, dims, d, d_low, d_c, heads, k_max, rng,
                                  mode=mode, fusion_kind=fusion_kind)
        enc_hidden = enc_hidden or d // 2
        self.bilstm = BiLSTM(d, enc_hidden, rng)
        d_video = d if attend_fused else 2 * enc_hidden
        self.decoder = CaptionDecoder(vocab_size, d_word, d_video, dec_hidden, rng)
        self.attend_fused = attend_fused
        self.max_len = max_len

    def encode(self, bundle: ModalityBundle) -> Tensor:
        encoded = self.encoder(bundle)
        if self.attend_fused:
            return encoded.fused
        return self.bilstm(encoded.fused)

    def caption_loss(self, bundle: ModalityBundle, reference: list[int]) -> Tensor:
        """Teacher-forced mean cross-entropy over non-PAD steps."""
        if not reference:
            raise ValueError("empty reference caption")
        if reference[-1] != EOS:
            raise ValueError("reference must end with EOS")
        video = self.encode(bundle)
        state = self.decoder.initial_state()
        steps = 0
        total = None
        for target in reference:
            if target == PAD:
                continue
            logits, state, _ = self.decoder.step(state, video)
            nll = _step_nll(logits, target)
            total = nll if total is None else total + nll
            state.prev_token = target
            steps += 1
        return total * (1.0 / steps)

    def generate(self, bundle: ModalityBundle, mode: str = "greedy",
                 beam: int = 1) -> list[int]:
        with T.no_grad():
            video = self.encode(bundle)
            if mode == "greedy":
                return self._greedy(video)
            if mode == "beam":
                return self._beam(video, beam)
        raise ValueError(f"unknown generation mode '{mode}'")

    def _greedy(self, video: Tensor) -> list[int]:
        state = self.decoder.initial_state()
        out: list[int] = []
        for _ in range(self.max_len):
            logits, state, _ = self.decoder.step(state, video)
            token = int(np.argmax(self._mask_special(logits.data)))
            if token == EOS:
                break
            out.append(token)
            state.prev_token = token
        return out

    def _beam(self, video: Tensor, width: int) -> list[int]:
        if width < 1:
            raise ValueError("beam width must be >= 1")
        start = self.decoder.initial_state()
        live = [(0.0, [], start)]
        finished: list[tuple[float, list[int]]] = []
        for _ in range(self.max_len):
            candidates = []
            for logp, tokens, state in live:
                logits, new_state, _ = self.decoder.step(state, video)
                logprobs = log_softmax_np(self._mask_special(logits.data))
                order = np.argsort(-logprobs, kind="stable")[:width]
                for token in order:
                    candidates.append((logp + float(logprobs[token]),
                                       tokens + [int(token)], new_state))
            candidates.sort(key=lambda c: c[0], reverse=True)
            live = []
            for logp, tokens, state in candidates:
                if tokens[-1] == EOS:
                    finished.append((logp / len(tokens), tokens[:-1]))
                elif len(live) < width:
                    s = DecoderState(state.h1, state.c1, state.h2, state.c2,
                                     tokens[-1], state.step)
                    live.append((logp, tokens, s))
                if len(live) >= width and len(finished) >= width:
                    break
            if not live:
                break
        for logp, tokens, _ in live:
            finished.append((logp / max(1, len(tokens)), tokens))
        finished.sort(key=lambda c: c[0], reverse=True)
        return finished[0][1] if finished else []

    @staticmethod
    def _mask_special(logits: np.ndarray) -> np.ndarray:
        masked = logits.copy()
        masked[PAD] = -np.inf
        masked[BOS] = -np.inf
        masked[UNK] = -np.inf
        return masked
