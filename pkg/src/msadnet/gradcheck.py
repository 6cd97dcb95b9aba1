"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_gradient(f: Callable[[], float], arr: np.ndarray, h: float = 1e-5, indices=None) -> np.ndarray:
    """d f / d arr by central differences, perturbing ``arr`` in place.

    ``indices`` restricts the probe to a subset of flat positions (the rest
    of the returned array is NaN).
    """
    if not arr.flags.c_contiguous:
        raise ValueError("numerical_gradient perturbs in place and needs a C-contiguous array")
    flat = arr.reshape(-1)
    grad = np.full(flat.shape, np.nan) if indices is not None else np.zeros(flat.shape)
    for i in range(flat.size) if indices is None else indices:
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        grad[i] = (fp - fm) / (2 * h)
    return grad.reshape(arr.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||), with 0 when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    keep = ~np.isnan(n)
    a, n = a[keep], n[keep]
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def check_gradients(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    seed: int = 0,
    max_probes: int | None = None,
    aggregate: bool = False,
) -> list[float]:
    """Compare autodiff gradients of ``sum(fn(*inputs) * w)`` with finite differences.

    A fixed random weighting ``w`` keeps the check sensitive to every output
    element. Returns one relative error per input that requires a gradient,
    or with ``aggregate`` a single error over all gradients concatenated
    (useful for whole models, where some tensors have gradients at roundoff
    level and a per-tensor ratio is meaningless).
    """
    rng = np.random.default_rng(seed)
    out = fn(*inputs)
    weight = rng.standard_normal(out.shape)

    def scalar() -> float:
        return float((fn(*inputs).data * weight).sum())

    for t in inputs:
        t.grad = None
    out = fn(*inputs)
    out.backward(weight.astype(out.dtype))
    errors, pairs = [], []
    for t in inputs:
        if not t.requires_grad:
            continue
        idx = None
        if max_probes is not None and t.size > max_probes:
            idx = rng.choice(t.size, size=max_probes, replace=False)
        numeric = numerical_gradient(scalar, t.data, h=h, indices=idx)
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        errors.append(relative_error(analytic, numeric))
        pairs.append((analytic.ravel(), numeric.ravel()))
    if aggregate:
        return [relative_error(np.concatenate([a for a, _ in pairs]), np.concatenate([n for _, n in pairs]))]
    return errors
