"""Flat ``key = value`` configuration with sections.

Sections group keys for readability only; keys are globally unique.  Unknown
keys or sections are rejected outright so typos never silently fall back to
defaults.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from typing import Optional


class ConfigError(ValueError):
    pass


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: '{s}'")


def _parse_int_list(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.split(",") if v.strip())


@dataclass
class Config:
    # [run]
    task: str = "loc"
    seed: int = 0
    steps: int = 500
    batch_size: int = 32
    log_every: int = 10
    checkpoint_every: int = 100
    # [model]
    d: int = 512
    d_low: int = 256
    d_c: int = 64
    heads: int = 8
    k_max: int = 16
    conv_layers: int = 3
    conv_kernel: int = 3
    window: int = 2
    seq_len: int = 0  # 0 resolves to the task default (128 loc / 32 cap)
    word_dim: int = 512
    dec_hidden: int = 512
    enc_hidden: int = 0  # 0 resolves to d // 2
    max_len: int = 30
    beam: int = 1
    boundary_half: float = 0.175
    final_gain: float = 1.0
    train_embeddings: bool = False
    attend_fused: bool = False
    fusion_per_position: bool = False
    # [mode]
    pmi: bool = True
    vtli: bool = True
    norm_reg: bool = True
    fusion: str = "weighted"
    interaction: str = "full"
    # [loss]
    lambda_r: float = 5.0
    lambda_n: float = 0.001
    huber_delta: float = 1.0
    beta: float = 1.0
    # [optim]
    lr: float = 0.0001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    # [data]
    train_dir: str = ""
    test_dir: str = ""
    embeddings: str = ""
    vocab_min_count: int = 1
    # [synth]
    synth_task: str = "loc"
    num_train: int = 200
    num_test: int = 50
    positions: int = 128
    modality_dims: tuple[int, ...] = (32, 32)
    segment_lo: float = 0.2
    segment_hi: float = 0.5
    noise: float = 0.3
    coupling: str = "xor_pair"
    synth_word_dim: int = 16

    def resolved_seq_len(self) -> int:
        if self.seq_len > 0:
            return self.seq_len
        return 128 if self.task == "loc" else 32

    def resolved_enc_hidden(self) -> int:
        return self.enc_hidden if self.enc_hidden > 0 else self.d // 2

    def validate(self) -> None:
        if self.task not in ("loc", "cap"):
            raise ConfigError(f"task must be loc or cap, got '{self.task}'")
        if self.fusion not in ("weighted", "sum", "concat"):
            raise ConfigError(f"unknown fusion kind '{self.fusion}'")
        if self.interaction not in ("full", "intra_only", "inter_only",
                                    "concat_interact", "baseline_concat"):
            raise ConfigError(f"unknown interaction mode '{self.interaction}'")
        if not self.d_low < self.d:
            raise ConfigError(f"d_low must be < d ({self.d_low} vs {self.d})")
        if self.d_low % self.heads != 0:
            raise ConfigError("heads must divide d_low")
        if self.segment_lo > self.segment_hi:
            raise ConfigError("segment_lo must not exceed segment_hi")

    def require_paths(self, *keys: str) -> None:
        for key in keys:
            value = getattr(self, key)
            if not value:
                raise ConfigError(f"config key '{key}' is required but unset")
            if not os.path.exists(value):
                raise ConfigError(f"{key} path does not exist: {value}")


_SECTIONS = {
    "run": ("task", "seed", "steps", "batch_size", "log_every", "checkpoint_every"),
    "model": ("d", "d_low", "d_c", "heads", "k_max", "conv_layers", "conv_kernel",
              "window", "seq_len", "word_dim", "dec_hidden", "enc_hidden",
              "max_len", "beam", "boundary_half", "final_gain",
              "train_embeddings", "attend_fused", "fusion_per_position"),
    "mode": ("pmi", "vtli", "norm_reg", "fusion", "interaction"),
    "loss": ("lambda_r", "lambda_n", "huber_delta", "beta"),
    "optim": ("lr", "beta1", "beta2", "eps", "clip_norm"),
    "data": ("train_dir", "test_dir", "embeddings", "vocab_min_count"),
    "synth": ("synth_task", "num_train", "num_test", "positions", "modality_dims",
              "segment_lo", "segment_hi", "noise", "coupling", "synth_word_dim"),
}

_KEY_SECTION = {key: section for section, keys in _SECTIONS.items() for key in keys}

_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def _convert(key: str, raw: str):
    default = getattr(Config(), key)
    if isinstance(default, bool):
        return _parse_bool(raw)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return _parse_int_list(raw)
    return raw.strip()


def parse_config(text: str, source: str = "<config>") -> Config:
    cfg = Config()
    section: Optional[str] = None
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigError(f"{source}:{line_no}: unknown section '{section}'")
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{line_no}: expected 'key = value'")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _KEY_SECTION:
            raise ConfigError(f"{source}:{line_no}: unknown key '{key}'")
        if section is not None and _KEY_SECTION[key] != section:
            raise ConfigError(
                f"{source}:{line_no}: key '{key}' belongs to section "
                f"[{_KEY_SECTION[key]}], not [{section}]")
        try:
            value = _convert(key, raw)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{source}:{line_no}: bad value for '{key}': {exc}")
        setattr(cfg, key, value)
    cfg.validate()
    return cfg


def load_config(path) -> Config:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), source=str(path))


def dump_config(cfg: Config) -> str:
    lines = []
    for section, keys in _SECTIONS.items():
        lines.append(f"[{section}]")
        for key in keys:
            value = getattr(cfg, key)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)
