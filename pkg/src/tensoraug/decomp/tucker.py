"""Tucker decomposition: one-shot HOSVD and iterated HOOI."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidRank, ShapeError
from ..tensor import as_tensor, frobenius_norm, multi_mode_product, unfold
from ._svd import left_singular_vectors

DEFAULT_HOOI_TOL = 1e-8
DEFAULT_HOOI_MAX_ITER = 50


@dataclass(frozen=True)
class TuckerFactors:
    """Core tensor plus one orthonormal-column loading matrix per mode."""

    core: np.ndarray
    loadings: tuple

    def __post_init__(self):
        object.__setattr__(self, "core", np.asarray(self.core, dtype=np.float64))
        object.__setattr__(self, "loadings", tuple(np.asarray(u, dtype=np.float64) for u in self.loadings))
        if self.core.ndim != len(self.loadings):
            raise ShapeError(f"order-{self.core.ndim} core with {len(self.loadings)} loadings")
        for m, u in enumerate(self.loadings):
            if u.ndim != 2 or u.shape[1] != self.core.shape[m]:
                raise ShapeError(f"loading {m} of shape {u.shape} does not match core extent {self.core.shape[m]}")

    @property
    def ranks(self) -> tuple:
        return self.core.shape

    @property
    def shape(self) -> tuple:
        return tuple(u.shape[0] for u in self.loadings)

    def n_stored(self) -> int:
        return self.core.size + sum(u.size for u in self.loadings)


def check_ranks(shape, ranks) -> tuple:
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != len(shape):
        raise InvalidRank(f"{len(ranks)} ranks given for an order-{len(shape)} tensor")
    for m, (r, d) in enumerate(zip(ranks, shape)):
        if not 1 <= r <= d:
            raise InvalidRank(f"rank {r} for mode {m} must lie in [1, {d}]")
    return ranks


def hosvd(t, ranks) -> TuckerFactors:
    """Truncated higher-order SVD.

    Each loading holds the leading left singular vectors of the matching
    unfolding; the core is ``t`` projected onto all loadings.
    """
    t = as_tensor(t)
    ranks = check_ranks(t.shape, ranks)
    loadings = [left_singular_vectors(unfold(t, m), r)[0] for m, r in enumerate(ranks)]
    core = multi_mode_product(t, loadings, transpose=True)
    return TuckerFactors(core, loadings)


def tucker_reconstruct(f: TuckerFactors) -> np.ndarray:
    return multi_mode_product(f.core, f.loadings)


def tucker_fit(t, f: TuckerFactors) -> float:
    """``1 - ||t - reconstruct(f)|| / ||t||`` (1.0 for a zero tensor)."""
    norm = frobenius_norm(t)
    if norm == 0.0:
        return 1.0
    return 1.0 - frobenius_norm(t - tucker_reconstruct(f)) / norm


def hooi(t, ranks, max_iter: int = DEFAULT_HOOI_MAX_ITER, tol: float = DEFAULT_HOOI_TOL,
         return_history: bool = False):
    """Higher-order orthogonal iteration, initialised from :func:`hosvd`.

    Sweeps update one loading at a time from the leading left singular
    vectors of ``t`` projected on every other loading.  Iteration stops once
    the fit changes by less than ``tol`` or after ``max_iter`` sweeps.  The
    best iterate is returned; with ``return_history`` the per-sweep fits
    (starting with the HOSVD fit) are returned alongside.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    t = as_tensor(t)
    best = hosvd(t, ranks)
    loadings = list(best.loadings)
    best_fit = tucker_fit(t, best)
    fits = [best_fit]
    for _ in range(max_iter):
        for m, r in enumerate(best.ranks):
            y = multi_mode_product(t, loadings, transpose=True, skip=m)
            loadings[m] = left_singular_vectors(unfold(y, m), r)[0]
        f = TuckerFactors(multi_mode_product(t, loadings, transpose=True), loadings)
        fit = tucker_fit(t, f)
        fits.append(fit)
        if fit >= best_fit:
            best, best_fit = f, fit
        if abs(fits[-1] - fits[-2]) < tol:
            break
    if return_history:
        return best, fits
    return best


def batched_loadings(x, ranks, method: str = "hosvd", n_iter: int = 2):
    """Tucker loadings for every sample of a batch ``x[b, ...]``.

    Returns one stacked array ``(B, D_m, R_m)`` per non-batch mode.  ``hooi``
    runs a fixed number of sweeps so the whole batch stays in lockstep.
    """
    x = np.asarray(x, dtype=np.float64)
    shape = x.shape[1:]
    ranks = check_ranks(shape, ranks)
    order = len(shape)

    # Column order is irrelevant for left singular vectors, so a C-order reshape suffices.
    def unfold_batched(y, m):
        return np.moveaxis(y, m + 1, 1).reshape(y.shape[0], y.shape[m + 1], -1)

    loadings = [left_singular_vectors(unfold_batched(x, m), r)[0] for m, r in enumerate(ranks)]
    if method == "hosvd":
        return loadings
    if method != "hooi":
        raise ValueError(f"unknown Tucker method {method!r}")
    for _ in range(n_iter):
        for m, r in enumerate(ranks):
            y = x
            for k in range(order):
                if k != m:
                    y = batched_mode_product(y, np.swapaxes(loadings[k], -1, -2), k)
            loadings[m] = left_singular_vectors(unfold_batched(y, m), r)[0]
    return loadings


def batched_mode_product(x, u, mode: int):
    """Mode product on ``x[b, ...]`` with a per-sample matrix ``u[b]`` (or a shared one)."""
    u = np.asarray(u)
    moved = np.moveaxis(x, mode + 1, -1)
    if u.ndim == 2:
        out = moved @ u.T
    else:
        shape = moved.shape
        flat = moved.reshape(shape[0], -1, shape[-1])
        out = (flat @ np.swapaxes(u, -1, -2)).reshape(shape[:-1] + (u.shape[-2],))
    return np.moveaxis(out, -1, mode + 1)
