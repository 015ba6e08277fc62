"""CP (canonical polyadic) decomposition by alternating least squares."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidRank, ShapeError
from ..tensor import as_tensor, frobenius_norm, unfold
from ._svd import fix_signs, left_singular_vectors
from .tucker import TuckerFactors

RIDGE = 1e-10
DEFAULT_CP_TOL = 1e-8
DEFAULT_CP_MAX_ITER = 500

_LETTERS = "abcdefghijklmnopqrstuvwxy"


@dataclass(frozen=True)
class CPFactors:
    """Weights ``c_r`` and loadings whose columns have unit 2-norm."""

    weights: np.ndarray
    loadings: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        loadings = tuple(np.asarray(u, dtype=np.float64) for u in self.loadings)
        if w.size < 1:
            raise InvalidRank("CP rank must be >= 1")
        for m, u in enumerate(loadings):
            if u.ndim != 2 or u.shape[1] != w.size:
                raise ShapeError(f"loading {m} of shape {u.shape} does not have {w.size} columns")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "loadings", loadings)

    @property
    def rank(self) -> int:
        return self.weights.size

    @property
    def shape(self) -> tuple:
        return tuple(u.shape[0] for u in self.loadings)

    def n_stored(self) -> int:
        return self.weights.size + sum(u.size for u in self.loadings)


def cp_reconstruct(f: CPFactors) -> np.ndarray:
    order = len(f.loadings)
    idx = _LETTERS[:order]
    spec = "z," + ",".join(f"{c}z" for c in idx) + "->" + idx
    return np.einsum(spec, f.weights, *f.loadings)


def cp_to_tucker(f: CPFactors) -> TuckerFactors:
    """Tucker form with a super-diagonal ``R x ... x R`` core."""
    order = len(f.loadings)
    core = np.zeros((f.rank,) * order)
    diag = np.arange(f.rank)
    core[(diag,) * order] = f.weights
    return TuckerFactors(core, f.loadings)


def _mttkrp(t, loadings, mode):
    idx = _LETTERS[: t.ndim]
    others = [m for m in range(t.ndim) if m != mode]
    spec = idx + "," + ",".join(f"{idx[m]}z" for m in others) + f"->{idx[mode]}z"
    return np.einsum(spec, t, *(loadings[m] for m in others))


def _normalize(u, previous):
    norms = np.linalg.norm(u, axis=0)
    safe = norms > 0
    out = previous.copy()
    out[:, safe] = u[:, safe] / norms[safe]
    return out, np.where(safe, norms, 0.0)


def _initial_loadings(t, rank, rng, init):
    loadings = []
    for m, d in enumerate(t.shape):
        if init == "svd":
            k = min(rank, d)
            u = np.empty((d, rank))
            u[:, :k] = left_singular_vectors(unfold(t, m), k)[0]
            u[:, k:] = rng.standard_normal((d, rank - k))
        else:
            u = rng.standard_normal((d, rank))
        loadings.append(u / np.linalg.norm(u, axis=0))
    return loadings


def cp_als(t, rank: int, max_iter: int = DEFAULT_CP_MAX_ITER, tol: float = DEFAULT_CP_TOL,
           seed: int = 0, return_history: bool = False, init: str = "svd"):
    """Fit a rank-``rank`` CP model.

    With ``init="svd"`` each loading starts from the leading left singular
    vectors of the matching unfolding; columns beyond the mode extent (rank
    larger than the dimension) are seeded standard-normal draws.  Random
    starts stall in ALS swamps noticeably more often on exactly low-rank
    inputs.  ``init="random"`` draws every column from the seeded normal.

    Each sweep solves the per-mode least-squares problem through the
    ridge-stabilised normal equations, renormalises the columns, and folds
    their norms into the weights.  Stops when the relative residual moves by less than ``tol``.
    With ``return_history`` the relative residual after every sweep is also
    returned.
    """
    t = as_tensor(t)
    rank = int(rank)
    if rank < 1:
        raise InvalidRank("CP rank must be >= 1")
    if init not in ("svd", "random"):
        raise ValueError(f"unknown CP initialisation {init!r}")
    loadings = _initial_loadings(t, rank, np.random.default_rng(seed), init)
    weights = np.ones(rank)
    norm_t = frobenius_norm(t)
    history = []

    for _ in range(max_iter):
        for m in range(t.ndim):
            gram = np.ones((rank, rank))
            for k in range(t.ndim):
                if k != m:
                    gram *= loadings[k].T @ loadings[k]
            rhs = _mttkrp(t, loadings, m)
            u = np.linalg.solve(gram + RIDGE * np.eye(rank), rhs.T).T
            loadings[m], weights = _normalize(u, loadings[m])
        resid = frobenius_norm(t - cp_reconstruct(CPFactors(weights, loadings)))
        history.append(resid / norm_t if norm_t > 0 else resid)
        if len(history) > 1 and abs(history[-2] - history[-1]) < tol:
            break
        if history[-1] == 0.0:
            break

    # Sign convention on all but the last mode, compensated in the last one.
    signs_total = np.ones(rank)
    for m in range(t.ndim - 1):
        fixed = fix_signs(loadings[m])
        flips = np.sign(np.sum(fixed * loadings[m], axis=0))
        flips[flips == 0] = 1.0
        loadings[m] = fixed
        signs_total *= flips
    loadings[-1] = loadings[-1] * signs_total
    f = CPFactors(weights, loadings)
    if return_history:
        return f, history
    return f
