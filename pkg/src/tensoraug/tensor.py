"""Dense tensor primitives.

Tensors are plain ``numpy.ndarray`` objects in float64, stored row-major
(last index fastest).  Modes are 0-based in code: the mode written
``k`` in the usual 1-based math notation is ``mode=k-1`` here.

Unfolding follows the Kolda-Bader convention.  Entry ``(i_0, ..., i_{M-1})``
of ``t`` lands in row ``i_n`` and column

    j = sum_{k != n} i_k * J_k,   J_k = prod_{m < k, m != n} D_m

of the mode-``n`` unfolding, i.e. the remaining indices are enumerated with
the lowest mode varying fastest.
"""

from __future__ import annotations

from functools import reduce
from typing import Sequence

import numpy as np

from .errors import InvalidArgument, InvalidMode, ShapeError


def as_tensor(data, *, check_finite: bool = False) -> np.ndarray:
    """Validate ``data`` as a dense tensor and return a float64 array."""
    t = np.asarray(data, dtype=np.float64)
    if t.ndim < 1:
        raise ShapeError("tensor must have order >= 1")
    if any(d < 1 for d in t.shape):
        raise ShapeError(f"tensor extents must be >= 1, got {t.shape}")
    if check_finite and not np.all(np.isfinite(t)):
        raise InvalidArgument("tensor contains non-finite entries")
    return t


def _check_mode(t: np.ndarray, mode: int) -> int:
    if not isinstance(mode, (int, np.integer)) or not 0 <= mode < t.ndim:
        raise InvalidMode(f"mode {mode} out of range for order-{t.ndim} tensor")
    return int(mode)


def unfold(t, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding, shape ``D_mode x prod(other extents)``."""
    t = as_tensor(t)
    mode = _check_mode(t, mode)
    return np.reshape(np.moveaxis(t, mode, 0), (t.shape[mode], -1), order="F")


def fold(m, mode: int, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`unfold`."""
    m = np.asarray(m, dtype=np.float64)
    shape = tuple(int(d) for d in shape)
    if not 0 <= mode < len(shape):
        raise InvalidMode(f"mode {mode} out of range for order-{len(shape)} shape")
    rest = shape[:mode] + shape[mode + 1:]
    expected = (shape[mode], int(np.prod(rest, dtype=np.int64)))
    if m.shape != expected:
        raise ShapeError(f"matrix of shape {m.shape} cannot fold to {shape} along mode {mode}")
    full = np.reshape(m, (shape[mode],) + rest, order="F")
    return np.ascontiguousarray(np.moveaxis(full, 0, mode))


def mode_n_product(t, u, mode: int) -> np.ndarray:
    """``t x_mode u``: replace extent ``D_mode`` by ``u.shape[0]``."""
    t = as_tensor(t)
    u = np.asarray(u, dtype=np.float64)
    mode = _check_mode(t, mode)
    if u.ndim != 2 or u.shape[1] != t.shape[mode]:
        raise ShapeError(
            f"matrix of shape {u.shape} incompatible with mode {mode} of extent {t.shape[mode]}"
        )
    out = np.tensordot(u, t, axes=(1, mode))
    return np.ascontiguousarray(np.moveaxis(out, 0, mode))


def multi_mode_product(t, matrices, *, transpose: bool = False, skip=None) -> np.ndarray:
    """Apply ``t x_0 A_0 x_1 A_1 ...``; ``None`` entries and ``skip`` are left alone."""
    out = as_tensor(t)
    for mode, a in enumerate(matrices):
        if a is None or mode == skip:
            continue
        out = mode_n_product(out, a.T if transpose else a, mode)
    return out


def contract_feature_modes(x, w) -> np.ndarray:
    """Contract the trailing two modes of ``x`` against the leading two of ``w``.

    ``out[..., l, a] = sum_{i,j} x[..., l, i, j] * w[i, j, a]``; extra leading
    axes of ``x`` are treated as batch axes.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.ndim < 3 or w.ndim != 3 or x.shape[-2:] != w.shape[:2]:
        raise ShapeError(f"cannot contract x{x.shape} with w{w.shape}")
    return np.einsum("...lij,ija->...la", x, w)


def outer_product(vectors) -> np.ndarray:
    vectors = [np.asarray(v, dtype=np.float64).ravel() for v in vectors]
    if not vectors:
        raise InvalidArgument("outer_product needs at least one vector")
    if any(v.size == 0 for v in vectors):
        raise InvalidArgument("outer_product vectors must be non-empty")
    return reduce(np.multiply.outer, vectors)


def inner(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"inner product of mismatched shapes {a.shape} and {b.shape}")
    return float(np.dot(a.ravel(), b.ravel()))


def frobenius_norm(t) -> float:
    return float(np.linalg.norm(np.asarray(t, dtype=np.float64).ravel()))


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"elementwise op on mismatched shapes {a.shape} and {b.shape}")
    return a, b


def add(a, b) -> np.ndarray:
    a, b = _same_shape(a, b)
    return a + b


def sub(a, b) -> np.ndarray:
    a, b = _same_shape(a, b)
    return a - b


def scale(t, alpha: float) -> np.ndarray:
    return float(alpha) * np.asarray(t, dtype=np.float64)
