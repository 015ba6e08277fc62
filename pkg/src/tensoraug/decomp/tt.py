"""Tensor-Train decomposition by sequential truncated SVD."""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from ..errors import InvalidArgument, InvalidRank, ShapeError
from ..tensor import as_tensor, frobenius_norm
from ._svd import truncated_svd


@dataclass(frozen=True)
class TTFactors:
    """Chain of order-3 cores ``C_i`` of shape ``R_{i-1} x D_i x R_i``.

    ``R_0 == R_M == 1``.  The boundary core closing the chain is the
    ``1 x 1 x 1`` tensor of ones (see :attr:`terminal`).
    """

    cores: tuple

    def __post_init__(self):
        cores = tuple(np.asarray(c, dtype=np.float64) for c in self.cores)
        if not cores:
            raise InvalidArgument("TT chain needs at least one core")
        if any(c.ndim != 3 for c in cores):
            raise ShapeError("TT cores must be order-3")
        if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
            raise ShapeError("TT boundary ranks must be 1")
        for i in range(len(cores) - 1):
            if cores[i].shape[2] != cores[i + 1].shape[0]:
                raise ShapeError(f"rank mismatch between cores {i} and {i + 1}")
        object.__setattr__(self, "cores", cores)

    @property
    def ranks(self) -> tuple:
        return (1,) + tuple(c.shape[2] for c in self.cores)

    @property
    def shape(self) -> tuple:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def terminal(self) -> np.ndarray:
        return np.ones((self.cores[-1].shape[2], 1, 1))

    def n_stored(self) -> int:
        return sum(c.size for c in self.cores)


def tt_svd(t, max_ranks=None, eps=None) -> TTFactors:
    """TT-SVD sweep from the first mode to the last.

    With ``eps`` each step discards the largest singular-value tail whose
    norm stays below ``eps * ||t|| / sqrt(M - 1)``, so the total error is at
    most ``eps * ||t||``.  ``max_ranks`` (an int or one bound per internal
    bond) caps the ranks further.  If neither is given, ``eps=1e-12``.
    """
    t = as_tensor(t)
    shape = t.shape
    order = len(shape)
    if eps is None and max_ranks is None:
        eps = 1e-12
    if eps is not None and eps <= 0:
        raise InvalidArgument("eps must be positive")
    if max_ranks is None:
        caps = [None] * (order - 1)
    elif np.isscalar(max_ranks):
        caps = [int(max_ranks)] * (order - 1)
    else:
        caps = [int(r) for r in max_ranks]
        if len(caps) != order - 1:
            raise InvalidRank(f"need {order - 1} TT ranks, got {len(caps)}")
    if any(c is not None and c < 1 for c in caps):
        raise InvalidRank("TT ranks must be >= 1")

    delta = None
    if eps is not None:
        delta = eps * frobenius_norm(t) / math.sqrt(max(order - 1, 1))

    cores = []
    rest = t.reshape(shape[0], -1)
    r_prev = 1
    for i in range(order - 1):
        rest = rest.reshape(r_prev * shape[i], -1)
        u, s, vt = truncated_svd(rest)
        r = s.size
        if delta is not None:
            # tails[k] = norm of s[k:]
            tails = np.sqrt(np.cumsum((s ** 2)[::-1])[::-1])
            keep = np.nonzero(tails > delta)[0]
            r = int(keep[-1]) + 1 if keep.size else 1
        if caps[i] is not None:
            r = min(r, caps[i])
        cores.append(u[:, :r].reshape(r_prev, shape[i], r))
        rest = s[:r, None] * vt[:r]
        r_prev = r
    cores.append(rest.reshape(r_prev, shape[-1], 1))
    return TTFactors(cores)


def tt_element(f: TTFactors, index) -> float:
    """One entry evaluated as a product of core slices."""
    index = tuple(int(i) for i in index)
    if len(index) != len(f.cores):
        raise InvalidArgument(f"index of length {len(index)} for order-{len(f.cores)} TT tensor")
    row = np.ones((1,))
    for core, i in zip(f.cores, index):
        if not 0 <= i < core.shape[1]:
            raise InvalidArgument(f"index {index} out of range for shape {f.shape}")
        row = row @ core[:, i, :]
    return float(row @ f.terminal[:, 0, 0])


def tt_reconstruct(f: TTFactors) -> np.ndarray:
    full = f.cores[0].reshape(f.cores[0].shape[1], -1)
    for core in f.cores[1:]:
        full = full @ core.reshape(core.shape[0], -1)
        full = full.reshape(-1, core.shape[2])
    return full.reshape(f.shape)
