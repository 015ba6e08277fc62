"""Multiply-add accounting for tensor attention and Tucker compression.

Counts are multiply-adds (one fused multiply-add = 1).  Softmax
exponentials, normalisation and activations are not counted.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field


@dataclass
class FlopCounter:
    """Accumulates multiply-adds reported by instrumented forward passes.

    ``score_shapes`` records the (query, key) extent of every attention score
    matrix that was formed, so callers can check where attention ran.
    """

    counts: Counter = field(default_factory=Counter)
    score_shapes: list = field(default_factory=list)

    def add(self, kind: str, n: int) -> None:
        self.counts[kind] += int(n)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def reset(self) -> None:
        self.counts.clear()
        self.score_shapes.clear()


def sha_flops(l_q: int, l_k: int, hidden: int, features: int, d_attn: int) -> int:
    """One attention head; queries of length ``l_q`` over keys of length ``l_k``."""
    io = hidden * features * d_attn
    projections = l_q * io + 2 * l_k * io      # Q, K, V contractions
    scores = l_q * l_k * d_attn                 # Q K^T
    mixing = l_q * l_k * d_attn                 # A V
    output = l_q * io                           # contraction with W_O
    return projections + scores + mixing + output


def mha_flops(l: int, hidden: int, features: int, d_attn: int, heads: int, l_k: int | None = None) -> int:
    """``heads`` heads plus the head-weight combination."""
    l_k = l if l_k is None else l_k
    return heads * sha_flops(l, l_k, hidden, features, d_attn) + heads * l * hidden * features


def tucker_projection_flops(shape, ranks) -> int:
    """Cost of ``x x_1 U_1^T x_2 U_2^T x_3 ...`` applied mode by mode in order."""
    current = list(shape)
    total = 0
    for m, r in enumerate(ranks):
        rest = 1
        for k, d in enumerate(current):
            if k != m:
                rest *= d
        total += r * current[m] * rest
        current[m] = r
    return total


def tucker_reconstruction_flops(shape, ranks) -> int:
    """Cost of ``C x_1 U_1 x_2 U_2 ...`` applied mode by mode in order."""
    current = list(ranks)
    total = 0
    for m, d in enumerate(shape):
        rest = 1
        for k, e in enumerate(current):
            if k != m:
                rest *= e
        total += d * current[m] * rest
        current[m] = d
    return total


def attention_cost_report(seq_len, hidden, features, d_attn, heads, ranks) -> dict:
    """Closed-form counts for full attention versus attention on the Tucker core."""
    r1, r2, r3 = ranks
    full = mha_flops(seq_len, hidden, features, d_attn, heads)
    core = mha_flops(r1, r2, r3, d_attn, heads)
    shape = (seq_len, hidden, features)
    compression = tucker_projection_flops(shape, ranks) + tucker_reconstruction_flops(shape, ranks)
    return {
        "full_attention": full,
        "core_attention": core,
        "compression": compression,
        "core_total": core + compression,
        "ratio": core / full,
    }
