"""SVD helpers shared by the decomposition engines."""

import numpy as np

# Short dimension at or below which left singular vectors come from the Gram matrix.
GRAM_LIMIT = 64


def fix_signs(u, v=None):
    """Flip columns so each column's largest-magnitude entry is positive.

    Works on stacked matrices (``u[..., :, r]``).  When ``v`` is given its
    rows (``v[..., r, :]``) are flipped along with the matching columns.
    """
    u = np.asarray(u)
    idx = np.argmax(np.abs(u), axis=-2)
    pivots = np.take_along_axis(u, idx[..., None, :], axis=-2)
    signs = np.where(pivots < 0, -1.0, 1.0)
    u = u * signs
    if v is None:
        return u
    return u, v * np.swapaxes(signs, -1, -2)


def left_singular_vectors(a, rank):
    """Top-``rank`` left singular vectors and all singular values of ``a``.

    Accepts stacked matrices.  Singular values come back sorted descending.
    """
    a = np.asarray(a, dtype=np.float64)
    rows, cols = a.shape[-2:]
    if rows <= cols and rows <= GRAM_LIMIT:
        gram = a @ np.swapaxes(a, -1, -2)
        evals, evecs = np.linalg.eigh(gram)
        evals = evals[..., ::-1]
        evecs = evecs[..., ::-1]
        sv = np.sqrt(np.clip(evals, 0.0, None))
        u = evecs[..., :rank]
    else:
        u, sv, _ = np.linalg.svd(a, full_matrices=rank > min(rows, cols))
        u = u[..., :rank]
    return fix_signs(u), sv


def truncated_svd(a):
    """Thin SVD with the sign convention applied."""
    u, s, vt = np.linalg.svd(np.asarray(a, dtype=np.float64), full_matrices=False)
    u, vt = fix_signs(u, vt)
    return u, s, vt
