"""Finite-difference verification of recorded backward rules."""

from __future__ import annotations

from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .tensor import Graph, Tensor, no_grad


class GradcheckError(RuntimeError):
    """Raised when a gradient or function value is non-finite."""


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
    kinks: Optional[Mapping[str, Sequence[float]]] = None,
) -> float:
    """Compare analytic gradients of ``f`` against central differences.

    ``f`` must be a deterministic scalar function of the given parameter
    tensors (closed over them; it is re-evaluated under perturbation).
    Entries lying within ``eps`` of a listed kink location (points where the
    op is not differentiable, e.g. the huber corners) are skipped.

    Returns the max over all checked entries of
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps {eps} outside [1e-7, 1e-3]")

    with Graph() as graph:
        for p in params.values():
            p.zero_grad()
        loss = f()
        if loss.size != 1:
            raise ValueError(f"f must be scalar, got shape {loss.shape}")
        if not np.all(np.isfinite(loss.data)):
            raise GradcheckError(
                f"non-finite loss at unperturbed parameters {list(params)}")
        graph.backward(loss)

    analytic = {}
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise GradcheckError(f"non-finite analytic gradient in '{name}'")
        analytic[name] = g.copy()

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        kink_pts = np.asarray(kinks.get(name, ()), dtype=np.float64) if kinks else None
        for i in range(flat.size):
            if kink_pts is not None and kink_pts.size:
                if np.min(np.abs(flat[i] - kink_pts)) <= eps:
                    continue
            orig = flat[i]
            flat[i] = orig + eps
            hi = _eval_scalar(f, name)
            flat[i] = orig - eps
            lo = _eval_scalar(f, name)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            a = analytic[name].reshape(-1)[i]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if err > worst:
                worst = err
    return worst


def _eval_scalar(f: Callable[[], Tensor], name: str) -> float:
    with no_grad():
        value = f().item()
    if not np.isfinite(value):
        raise GradcheckError(f"non-finite value while perturbing '{name}'")
    return value
