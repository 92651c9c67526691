"""Parameterized building blocks shared by the interaction, localization,
and captioning models.

Layers are plain Python objects holding parameter tensors; ``named_parameters``
walks attributes (including lists of sublayers) to produce the flat
``name -> Tensor`` map used by the optimizer, the checkpoint format, and the
gradient-check suite.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from . import tensor as T
from .rng import Rng
from .tensor import Tensor


def xavier_uniform(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Layer:
    """Base class providing recursive parameter discovery."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            full = f"{prefix}{name}" if not prefix else f"{prefix}.{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    out[full] = value
            elif isinstance(value, Layer):
                out.update(value.named_parameters(full))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    sub = f"{full}.{i}"
                    if isinstance(item, Tensor):
                        if item.requires_grad:
                            out[sub] = item
                    elif isinstance(item, Layer):
                        out.update(item.named_parameters(sub))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def _as_matrix(x: Tensor) -> tuple[Tensor, tuple[int, ...]]:
    """Flatten leading axes so the last axis is the feature axis."""
    if x.ndim == 1:
        return x.reshape(1, x.shape[0]), ()
    if x.ndim == 2:
        return x, x.shape[:1]
    lead = x.shape[:-1]
    return x.reshape(int(np.prod(lead)), x.shape[-1]), lead


class Linear(Layer):
    """x @ W + b over the last axis; inputs of any rank >= 1."""

    def __init__(self, d_in: int, d_out: int, rng: Rng, bias: bool = True):
        self.W = T.parameter(xavier_uniform(rng, d_in, d_out))
        self.b = T.parameter(np.zeros(d_out)) if bias else None
        self.d_in = d_in
        self.d_out = d_out

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise T.ShapeError(
                f"linear expects last dim {self.d_in}, got {x.shape}")
        flat, lead = _as_matrix(x)
        out = T.matmul(flat, self.W)
        if self.b is not None:
            out = out + self.b
        if x.ndim == 1:
            return out.reshape(self.d_out)
        if x.ndim == 2:
            return out
        return out.reshape(*lead, self.d_out)


class FFN(Layer):
    """Position-wise two-layer network: linear -> ReLU -> linear."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: Rng):
        self.lin1 = Linear(d_in, d_hidden, rng)
        self.lin2 = Linear(d_hidden, d_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(self.lin1(x).relu())


class LSTMCell(Layer):
    """Standard gated recurrent cell (input/forget/output/candidate)."""

    def __init__(self, d_in: int, hidden: int, rng: Rng):
        self.W_x = T.parameter(xavier_uniform(rng, d_in, 4 * hidden))
        self.W_h = T.parameter(xavier_uniform(rng, hidden, 4 * hidden))
        self.b = T.parameter(np.zeros(4 * hidden))
        self.hidden = hidden

    def step(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        """One update; x is 1 x d_in, h and c are 1 x hidden."""
        z = T.matmul(x, self.W_x) + T.matmul(h, self.W_h) + self.b
        n = self.hidden
        i = T.narrow(z, 1, 0, n).sigmoid()
        f = T.narrow(z, 1, n, n).sigmoid()
        o = T.narrow(z, 1, 2 * n, n).sigmoid()
        g = T.narrow(z, 1, 3 * n, n).tanh()
        c_next = f * c + i * g
        h_next = o * c_next.tanh()
        return h_next, c_next

    def initial_state(self) -> tuple[Tensor, Tensor]:
        return T.zeros((1, self.hidden)), T.zeros((1, self.hidden))


class BiLSTM(Layer):
    """Forward and backward passes concatenated per position."""

    def __init__(self, d_in: int, hidden: int, rng: Rng):
        self.fwd = LSTMCell(d_in, hidden, rng)
        self.bwd = LSTMCell(d_in, hidden, rng)

    def __call__(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        if n < 1:
            raise T.ShapeError("bidirectional encoder needs a non-empty sequence")
        h, c = self.fwd.initial_state()
        fwd_rows = []
        for t in range(n):
            h, c = self.fwd.step(T.narrow(x, 0, t, 1), h, c)
            fwd_rows.append(h)
        h, c = self.bwd.initial_state()
        bwd_rows: list[Optional[Tensor]] = [None] * n
        for t in range(n - 1, -1, -1):
            h, c = self.bwd.step(T.narrow(x, 0, t, 1), h, c)
            bwd_rows[t] = h
        rows = [T.concat([fwd_rows[t], bwd_rows[t]], axis=1) for t in range(n)]
        return T.concat(rows, axis=0)


class InstanceNorm(Layer):
    """Per-channel normalization over the temporal axis of one instance."""

    def __init__(self, channels: int, eps: float = 1e-5):
        self.gain = T.parameter(np.ones(channels))
        self.bias = T.parameter(np.zeros(channels))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=0)
        centered = x - mu
        var = (centered * centered).mean(axis=0)
        inv = (var + self.eps).sqrt()
        return centered / inv * self.gain + self.bias


class Embedding(Layer):
    """Token-id row lookup with PAD row pinned at zero.

    Ids at or beyond the table size fall back to the reserved UNK index 1.
    The PAD row (index 0) is zero and receives no gradient.
    """

    PAD = 0
    UNK = 1

    def __init__(self, vocab_size: int, dim: int, rng: Rng,
                 trainable: bool = True, table: Optional[np.ndarray] = None):
        if table is None:
            table = rng.normal(0.0, 0.01, size=(vocab_size, dim))
        else:
            table = np.asarray(table, dtype=np.float64)
            if table.shape != (vocab_size, dim):
                raise T.ShapeError(
                    f"embedding table shape {table.shape} != {(vocab_size, dim)}")
            table = table.copy()
        table[self.PAD] = 0.0
        self.table = Tensor(table, requires_grad=trainable)
        self.vocab_size = vocab_size
        self.dim = dim

    def __call__(self, ids) -> Tensor:
        idx = np.asarray(ids, dtype=np.int64)
        idx = np.where((idx < 0) | (idx >= self.vocab_size), self.UNK, idx)
        rows = T.gather_rows(self.table, idx)
        mask = (idx != self.PAD).astype(np.float64).reshape(-1, 1)
        return rows * Tensor(mask)


class RelPosTable(Layer):
    """Clipped signed-distance embedding for the attention value path."""

    def __init__(self, k_max: int, dim: int, rng: Rng):
        self.table = T.parameter(rng.normal(0.0, 0.01, size=(2 * k_max + 1, dim)))
        self.k_max = k_max
        self.dim = dim
        self._bin_cache: dict[tuple[int, int], np.ndarray] = {}

    def bin_index(self, i: int, j: int) -> int:
        return int(np.clip(j - i, -self.k_max, self.k_max)) + self.k_max

    def bin_matrix(self, n_query: int, n_key: int) -> np.ndarray:
        key = (n_query, n_key)
        if key not in self._bin_cache:
            j = np.arange(n_key)[None, :]
            i = np.arange(n_query)[:, None]
            self._bin_cache[key] = np.clip(j - i, -self.k_max, self.k_max) + self.k_max
        return self._bin_cache[key]

    def lookup(self, i: int, j: int) -> Tensor:
        return T.gather_rows(self.table, [self.bin_index(i, j)]).reshape(self.dim)


def load_embedding_table(path) -> tuple[list[str], np.ndarray]:
    """Read a text embedding file: ``token v1 v2 ... v_dw`` per line."""
    tokens: list[str] = []
    rows: list[list[float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) < 2:
                raise ValueError(f"{path}:{line_no}: malformed embedding line")
            tokens.append(parts[0])
            rows.append([float(v) for v in parts[1:]])
    if not rows:
        raise ValueError(f"{path}: empty embedding file")
    width = len(rows[0])
    for line_no, row in enumerate(rows, start=1):
        if len(row) != width:
            raise ValueError(f"{path}: inconsistent width at entry {line_no}")
    return tokens, np.asarray(rows, dtype=np.float64)
