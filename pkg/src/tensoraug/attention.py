"""Tensor attention: single head, weighted multi-head, and layer stacks.

Inputs are ``(..., L, L_mdl, D_mdl)`` arrays; any leading axes are batch
axes.  A head contracts the two feature modes against weight tensors
``W_Q, W_K, W_V`` of shape ``(L_mdl, D_mdl, D_attn)`` and maps back through
``W_O`` of shape ``(D_attn, L_mdl, D_mdl)``:

    out = sigma(RowSoftmax(<x, W_Q> <x, W_K>^T) <x, W_V>) W_O

The activation sits between the attention-weighted sum and ``W_O``, not in
a separate feed-forward block.  Scores are not scaled by ``1/sqrt(D_attn)``
unless ``scale_scores=True`` is passed.

Every public ``*_forward`` wraps a private ``_fwd`` that also returns a cache consumed
by the matching ``_bwd`` adjoint rule.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .errors import InvalidArgument, ShapeError

MASK_VALUE = -1e30


@dataclass(frozen=True)
class Activation:
    """Elementwise activation with ``sigma(0) == 0``."""

    name: str = "relu"
    alpha: float = 0.01

    def __post_init__(self):
        if self.name not in ("relu", "leaky_relu", "identity"):
            raise InvalidArgument(f"unknown activation {self.name!r}")

    @classmethod
    def parse(cls, spec: str) -> "Activation":
        """``"relu"``, ``"identity"`` or ``"leaky_relu"`` / ``"leaky_relu:0.2"``."""
        name, _, alpha = spec.partition(":")
        return cls(name, float(alpha)) if alpha else cls(name)

    def __str__(self):
        return f"leaky_relu:{self.alpha}" if self.name == "leaky_relu" else self.name

    def __call__(self, z):
        if self.name == "relu":
            return np.maximum(z, 0.0)
        if self.name == "leaky_relu":
            return np.where(z > 0, z, self.alpha * z)
        return z

    def derivative(self, z):
        if self.name == "relu":
            return (z > 0).astype(np.float64)
        if self.name == "leaky_relu":
            return np.where(z > 0, 1.0, self.alpha)
        return np.ones_like(z)


RELU = Activation("relu")


@dataclass(frozen=True)
class HeadParams:
    W_Q: np.ndarray
    W_K: np.ndarray
    W_V: np.ndarray
    W_O: np.ndarray

    def __post_init__(self):
        shapes = [np.shape(w) for w in (self.W_Q, self.W_K, self.W_V)]
        if len(set(shapes)) != 1 or len(shapes[0]) != 3:
            raise ShapeError(f"query/key/value weights disagree: {shapes}")
        hidden, features, d_attn = shapes[0]
        if np.shape(self.W_O) != (d_attn, hidden, features):
            raise ShapeError(f"output weight {np.shape(self.W_O)} expected {(d_attn, hidden, features)}")

    @property
    def feature_shape(self):
        return np.shape(self.W_Q)[:2]

    @property
    def d_attn(self):
        return np.shape(self.W_Q)[2]


@dataclass(frozen=True)
class AttentionParams:
    heads: tuple
    w_H: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "heads", tuple(self.heads))
        object.__setattr__(self, "w_H", np.asarray(self.w_H, dtype=np.float64).ravel())
        if not self.heads:
            raise InvalidArgument("need at least one head")
        if self.w_H.size != len(self.heads):
            raise ShapeError(f"{len(self.heads)} heads but head weight vector of length {self.w_H.size}")

    @property
    def n_heads(self):
        return len(self.heads)

    @classmethod
    def init(cls, rng, hidden, features, d_attn, n_heads):
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight tensor."""
        def draw(shape, fan_in):
            bound = 1.0 / math.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        heads = []
        for _ in range(n_heads):
            qkv = [draw((hidden, features, d_attn), hidden * features) for _ in range(3)]
            heads.append(HeadParams(*qkv, draw((d_attn, hidden, features), d_attn)))
        return cls(heads, draw((n_heads,), n_heads))

    def zeros_like(self):
        heads = [HeadParams(*(np.zeros_like(w) for w in (h.W_Q, h.W_K, h.W_V, h.W_O))) for h in self.heads]
        return AttentionParams(heads, np.zeros_like(self.w_H))


def causal_mask(n_q: int, n_k: int | None = None) -> np.ndarray:
    """Boolean ``(n_q, n_k)`` array, True where query ``i`` may see key ``j <= i``."""
    n_k = n_q if n_k is None else n_k
    return np.tril(np.ones((n_q, n_k), dtype=bool))


def row_softmax(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    z = m - np.max(m, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def row_softmax_backward(dp, p):
    return p * (dp - np.sum(dp * p, axis=-1, keepdims=True))


def _check_input(x, head: HeadParams, name="x"):
    if x.ndim < 3 or x.shape[-2:] != head.feature_shape:
        raise ShapeError(f"{name} of shape {x.shape} does not match head feature modes {head.feature_shape}")


def _sha_fwd(x_q, x_kv, head: HeadParams, act: Activation, mask=None, scale_scores=False, counter=None):
    _check_input(x_q, head, "query input")
    _check_input(x_kv, head, "key/value input")
    l_q, l_k = x_q.shape[-3], x_kv.shape[-3]
    q = np.einsum("...lij,ija->...la", x_q, head.W_Q)
    k = np.einsum("...lij,ija->...la", x_kv, head.W_K)
    v = np.einsum("...lij,ija->...la", x_kv, head.W_V)
    s = q @ np.swapaxes(k, -1, -2)
    scale = 1.0 / math.sqrt(head.d_attn) if scale_scores else 1.0
    if scale_scores:
        s = s * scale
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (l_q, l_k):
            raise ShapeError(f"mask of shape {mask.shape} for scores {(l_q, l_k)}")
        s = np.where(mask, s, MASK_VALUE)
    p = row_softmax(s)
    z = p @ v
    h = act(z)
    out = np.einsum("...la,aij->...lij", h, head.W_O)
    if counter is not None:
        batch = int(np.prod(x_q.shape[:-3], dtype=np.int64))
        io = head.W_Q.size
        counter.add("qkv", batch * (q.shape[-2] + 2 * k.shape[-2]) * io)
        counter.add("scores", batch * s.shape[-2] * s.shape[-1] * q.shape[-1])
        counter.add("mix", batch * p.shape[-2] * p.shape[-1] * v.shape[-1])
        counter.add("output", batch * h.shape[-2] * head.W_O.size)
        counter.score_shapes.append(s.shape[-2:])
    cache = (x_q, x_kv, head, act, mask, scale, q, k, v, p, z, h)
    return out, cache


def _batch_einsum(spec, *operands):
    """``einsum`` whose leading ``z`` axis absorbs (and sums) all batch axes."""
    terms = spec.split("->")[0].split(",")
    flat = [np.reshape(a, (-1,) + a.shape[a.ndim - len(t) + 1:]) for a, t in zip(operands, terms)]
    return np.einsum(spec, *flat)


def _sha_bwd(dout, cache, same_input: bool):
    x_q, x_kv, head, act, mask, scale, q, k, v, p, z, h = cache
    dW_O = _batch_einsum("zla,zlij->aij", h, dout)
    dh = np.einsum("...lij,aij->...la", dout, head.W_O)
    dz = dh * act.derivative(z)
    dp = dz @ np.swapaxes(v, -1, -2)
    dv = np.swapaxes(p, -1, -2) @ dz
    ds = row_softmax_backward(dp, p)
    if mask is not None:
        ds = np.where(mask, ds, 0.0)
    ds = ds * scale
    dq = ds @ k
    dk = np.swapaxes(ds, -1, -2) @ q
    dW_Q = _batch_einsum("zlij,zla->ija", x_q, dq)
    dW_K = _batch_einsum("zlij,zla->ija", x_kv, dk)
    dW_V = _batch_einsum("zlij,zla->ija", x_kv, dv)
    dx_q = np.einsum("...la,ija->...lij", dq, head.W_Q)
    dx_kv = (np.einsum("...la,ija->...lij", dk, head.W_K)
             + np.einsum("...la,ija->...lij", dv, head.W_V))
    grads = HeadParams(dW_Q, dW_K, dW_V, dW_O)
    if same_input:
        return dx_q + dx_kv, None, grads
    return dx_q, dx_kv, grads


def sha_forward(x, head: HeadParams, act: Activation = RELU, mask=None, *, kv=None,
                scale_scores=False, counter=None):
    """Single tensor-attention head; ``kv`` switches to cross-attention."""
    x = np.asarray(x, dtype=np.float64)
    x_kv = x if kv is None else np.asarray(kv, dtype=np.float64)
    return _sha_fwd(x, x_kv, head, act, mask, scale_scores, counter)[0]


def _mha_fwd(x_q, x_kv, p: AttentionParams, act, mask=None, scale_scores=False, counter=None):
    outs, caches = [], []
    for head in p.heads:
        o, c = _sha_fwd(x_q, x_kv, head, act, mask, scale_scores, counter)
        outs.append(o)
        caches.append(c)
    stacked = np.stack(outs, axis=-1)
    # Fixed head order keeps the reduction bitwise deterministic.
    out = np.zeros_like(outs[0])
    for w, o in zip(p.w_H, outs):
        out = out + w * o
    if counter is not None:
        counter.add("heads", p.n_heads * outs[0].size)
    return out, (p, stacked, caches, x_kv is x_q)


def _mha_bwd(dout, cache):
    p, stacked, caches, same_input = cache
    dw_H = np.tensordot(stacked, dout, axes=(tuple(range(dout.ndim)), tuple(range(dout.ndim))))
    dx_q = 0.0
    dx_kv = None if same_input else 0.0
    heads = []
    for w, c in zip(p.w_H, caches):
        dq, dkv, g = _sha_bwd(w * dout, c, same_input)
        dx_q = dx_q + dq
        if not same_input:
            dx_kv = dx_kv + dkv
        heads.append(g)
    return dx_q, dx_kv, AttentionParams(heads, dw_H)


def mha_forward(x, p: AttentionParams, act: Activation = RELU, mask=None, *, kv=None,
                scale_scores=False, counter=None):
    """Weighted sum of head outputs, ``sum_h w_H[h] * sha_forward(x, head_h)``."""
    x = np.asarray(x, dtype=np.float64)
    x_kv = x if kv is None else np.asarray(kv, dtype=np.float64)
    return _mha_fwd(x, x_kv, p, act, mask, scale_scores, counter)[0]


def msa_forward(x, p: AttentionParams, act: Activation = RELU, mask=None, *, scale_scores=False,
                counter=None):
    """Multi-head self-attention: queries, keys and values all read ``x``."""
    return mha_forward(x, p, act, mask, scale_scores=scale_scores, counter=counter)


def stack_forward(x, layers, mask=None):
    """Compose ``msa_forward`` over ``layers`` of ``(AttentionParams, Activation)`` pairs."""
    out = np.asarray(x, dtype=np.float64)
    for p, act in layers:
        nxt = msa_forward(out, p, act, mask)
        if nxt.shape != out.shape:
            raise ShapeError("attention layer changed the tensor shape")
        out = nxt
    return out
