"""Self-describing binary checkpoints.

Layout: magic ``PMIC``, then one record per parameter:
(name length u32, name bytes utf-8, rank u32, dims u32 each, f64 payload LE).
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .tensor import Tensor

MAGIC = b"PMIC"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: dict[str, Tensor]) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        for name, tensor in params.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            arr = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.astype("<f8").tobytes(order="C"))
    os.replace(tmp, path)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path}: bad checkpoint magic")
        out: dict[str, np.ndarray] = {}
        while True:
            head = fh.read(4)
            if not head:
                break
            (name_len,) = struct.unpack("<I", head)
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            count = int(np.prod(dims)) if dims else 1
            payload = fh.read(8 * count)
            if len(payload) != 8 * count:
                raise CheckpointError(f"{path}: truncated payload for '{name}'")
            out[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    return out


def apply_checkpoint(params: dict[str, Tensor], state: dict[str, np.ndarray]) -> None:
    """Load saved arrays into model parameters; diffs name every mismatch."""
    problems = []
    for name, tensor in params.items():
        if name not in state:
            problems.append(f"missing from checkpoint: {name} {tensor.shape}")
        elif state[name].shape != tensor.data.shape:
            problems.append(
                f"shape mismatch: {name} model {tensor.data.shape} "
                f"vs checkpoint {state[name].shape}")
    for name in state:
        if name not in params:
            problems.append(f"unexpected in checkpoint: {name} {state[name].shape}")
    if problems:
        raise CheckpointError("; ".join(problems))
    for name, tensor in params.items():
        tensor.data[...] = state[name]
