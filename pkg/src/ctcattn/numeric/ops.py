"""Plain numpy primitives (no gradient tracking)."""

from __future__ import annotations

import numpy as np

from ..errors import InvalidArgument


def softmax_row(logits) -> np.ndarray:
    """Softmax of a single vector, computed with max subtraction."""
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise InvalidArgument("softmax_row expects a non-empty vector")
    e = np.exp(x - x.max())
    return e / e.sum()


def softmax(x, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def logsumexp(x, axis=None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis) if axis is not None else out.reshape(())


def linear_map(W, b, x) -> np.ndarray:
    """Affine map ``W x + b``.

    ``x`` may be a single vector (D,) or a stack of row vectors (..., D). Each
    output entry is reduced along the feature axis independently of the other
    rows, so a row gives bit-identical results whether mapped alone or
    inside a batch.
    """
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if W.ndim != 2 or b.shape != (W.shape[0],):
        raise InvalidArgument(f"bad affine parameters: W {W.shape}, b {b.shape}")
    if x.shape[-1:] != (W.shape[1],):
        raise InvalidArgument(f"input width {x.shape[-1:]} does not match W {W.shape}")
    return (x[..., None, :] * W).sum(axis=-1) + b


def layer_norm(x, gain, bias, eps: float = 1e-5) -> np.ndarray:
    if eps <= 0:
        raise InvalidArgument("eps must be positive")
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * np.asarray(gain) + np.asarray(bias)


def argmax_lowest(x, axis: int = -1) -> np.ndarray:
    """Argmax with ties broken toward the lowest index (numpy's own rule)."""
    return np.argmax(np.asarray(x), axis=axis)
