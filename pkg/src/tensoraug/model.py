"""Tensor-augmented encoder-decoder forecaster.

Shapes: a batch of raw windows ``(B, L, D_raw)`` is embedded to
``(B, L, L_mdl, D_mdl)``.  Each encoder layer Tucker-compresses its input to
an ``R_1 x R_2 x R_3`` core per sample, runs residual multi-head
self-attention plus layer norm on the core, and maps the result back with
the same loadings.  The loadings are refitted on every call and treated as
constants by the backward pass.

Parameters live in a flat ``dict[str, ndarray]`` (see :func:`init_params`);
the Tucker loadings never appear in it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
import math

import numpy as np

from .attention import (Activation, AttentionParams, HeadParams, _batch_einsum, _mha_bwd, _mha_fwd,
                        causal_mask)
from .decomp.tucker import batched_loadings, batched_mode_product
from .errors import InvalidRank, ShapeError

LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    seq_len: int = 24
    label_len: int = 12
    pred_len: int = 24
    n_features: int = 7
    model_len: int = 4
    d_model: int = 8
    d_attn: int = 4
    n_heads: int = 2
    enc_layers: int = 2
    dec_layers: int = 1
    ranks: tuple = (12, 2, 4)
    tucker_method: str = "hosvd"
    hooi_iters: int = 2
    tea_encoder: bool = True
    tea_decoder: bool = False
    activation: str = "relu"
    layer_norm: bool = True
    scale_scores: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ranks", tuple(int(r) for r in self.ranks))
        for name in ("seq_len", "label_len", "pred_len", "n_features", "model_len", "d_model",
                     "d_attn", "n_heads", "hooi_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.enc_layers < 0 or self.dec_layers < 0:
            raise ValueError("layer counts must be >= 0")
        if self.label_len > self.seq_len:
            raise ValueError("label_len cannot exceed seq_len")
        if self.tucker_method not in ("hosvd", "hooi"):
            raise ValueError(f"unknown tucker_method {self.tucker_method!r}")
        Activation.parse(self.activation)
        if len(self.ranks) != 3:
            raise InvalidRank("exactly three Tucker ranks (time, hidden, feature) are required")
        dims = (self.seq_len, self.model_len, self.d_model)
        for r, d in zip(self.ranks, dims):
            if not 1 <= r <= d:
                raise InvalidRank(f"Tucker ranks {self.ranks} must lie within {dims}")

    @property
    def dec_len(self) -> int:
        return self.label_len + self.pred_len

    @property
    def dec_ranks(self) -> tuple:
        r1, r2, r3 = self.ranks
        return (min(r1, self.dec_len), r2, r3)

    @property
    def act(self) -> Activation:
        return Activation.parse(self.activation)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "ranks" in d:
            d["ranks"] = tuple(d["ranks"])
        return cls(**d)

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class EmbeddingParams:
    """``x[l, i, j] = expand[i] * (raw[l] @ value)[j] + pos[l, i, j]``."""

    value: np.ndarray
    expand: np.ndarray
    pos: np.ndarray


@dataclass(frozen=True)
class TeaLayerParams:
    attention: AttentionParams
    gain: np.ndarray
    bias: np.ndarray
    ranks: tuple


# -- flat parameter dictionaries --------------------------------------------

def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def attention_view(params: dict, prefix: str) -> AttentionParams:
    w_H = params[f"{prefix}.w_H"]
    heads = [HeadParams(*(params[f"{prefix}.h{h}.{n}"] for n in ("W_Q", "W_K", "W_V", "W_O")))
             for h in range(w_H.size)]
    return AttentionParams(heads, w_H)


def attention_flat(p: AttentionParams, prefix: str) -> dict:
    out = {f"{prefix}.w_H": p.w_H}
    for h, head in enumerate(p.heads):
        for n in ("W_Q", "W_K", "W_V", "W_O"):
            out[f"{prefix}.h{h}.{n}"] = getattr(head, n)
    return out


def embedding_view(params: dict, prefix: str) -> EmbeddingParams:
    return EmbeddingParams(params[f"{prefix}.value"], params[f"{prefix}.expand"], params[f"{prefix}.pos"])


def _attn_init(rng, prefix, hidden, features, cfg):
    return attention_flat(AttentionParams.init(rng, hidden, features, cfg.d_attn, cfg.n_heads), prefix)


def _ln_init(prefix, shape):
    return {f"{prefix}.gain": np.ones(shape), f"{prefix}.bias": np.zeros(shape)}


def init_params(cfg: ModelConfig, seed: int | None = None) -> dict:
    """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.

    Layer-norm gains start at one and biases (including the output bias)
    at zero.  The positional tables behave like embedding lookups of a
    one-hot position, so their fan-in is one.
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    lm, dm, d_raw = cfg.model_len, cfg.d_model, cfg.n_features
    p = {}
    for prefix, length in (("enc_emb", cfg.seq_len), ("dec_emb", cfg.dec_len)):
        p[f"{prefix}.value"] = _uniform(rng, (d_raw, dm), d_raw)
        p[f"{prefix}.expand"] = _uniform(rng, (lm,), 1)
        p[f"{prefix}.pos"] = _uniform(rng, (length, lm, dm), 1)
    _, r2, r3 = cfg.ranks
    for layer in range(cfg.enc_layers):
        feat = (r2, r3) if cfg.tea_encoder else (lm, dm)
        p.update(_attn_init(rng, f"enc{layer}.attn", *feat, cfg))
        p.update(_ln_init(f"enc{layer}.ln", feat))
    for layer in range(cfg.dec_layers):
        feat = cfg.dec_ranks[1:] if cfg.tea_decoder else (lm, dm)
        p.update(_attn_init(rng, f"dec{layer}.self", *feat, cfg))
        p.update(_ln_init(f"dec{layer}.ln1", feat))
        p.update(_attn_init(rng, f"dec{layer}.cross", lm, dm, cfg))
        p.update(_ln_init(f"dec{layer}.ln2", (lm, dm)))
    p["head.weight"] = _uniform(rng, (dm, d_raw), dm)
    p["head.bias"] = np.zeros(d_raw)
    return p


# -- primitives with adjoints -------------------------------------------------

def _flatten_raw(raw, d_raw):
    raw = np.asarray(raw)
    if not np.issubdtype(raw.dtype, np.floating):
        raw = raw.astype(np.float64)
    if raw.shape[-1] == d_raw:
        return raw
    if raw.ndim >= 3 and raw.shape[-2] * raw.shape[-1] == d_raw:
        return raw.reshape(raw.shape[:-2] + (d_raw,))
    raise ShapeError(f"raw input of shape {raw.shape} does not carry {d_raw} features")


def _embed_fwd(raw, p: EmbeddingParams):
    raw = _flatten_raw(raw, p.value.shape[0])
    if raw.shape[-2] != p.pos.shape[0]:
        raise ShapeError(f"sequence of length {raw.shape[-2]} for positional table of {p.pos.shape[0]}")
    v = raw @ p.value
    x = p.expand[:, None] * v[..., None, :] + p.pos
    return x, (raw, v, p)


def _embed_bwd(dx, cache):
    raw, v, p = cache
    dv = np.einsum("...lij,i->...lj", dx, p.expand)
    lead = tuple(range(dx.ndim - 3))
    return {
        "value": _batch_einsum("zld,zlj->dj", raw, dv),
        "expand": _batch_einsum("zlij,zlj->i", dx, v),
        "pos": dx.sum(axis=lead) if lead else dx,
    }


def embed(raw, p: EmbeddingParams):
    """Raw ``(..., L, D_raw)`` or ``(..., L, D_1, D_2)`` to ``(..., L, L_mdl, D_mdl)``."""
    return _embed_fwd(raw, p)[0]


def _ln_fwd(x, gain, bias, enabled=True):
    if not enabled:
        return x, None
    mu = x.mean(axis=(-2, -1), keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=(-2, -1), keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv, gain)


def _ln_bwd(dy, cache):
    if cache is None:
        return dy, None, None
    xhat, inv, gain = cache
    lead = tuple(range(dy.ndim - 2))
    dgain = (dy * xhat).sum(axis=lead)
    dbias = dy.sum(axis=lead)
    dxhat = dy * gain
    dx = inv * (dxhat - dxhat.mean(axis=(-2, -1), keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=(-2, -1), keepdims=True))
    return dx, dgain, dbias


def layer_norm(x, gain, bias):
    """Normalise over the last two modes; an all-zero slice maps to ``bias``."""
    return _ln_fwd(np.asarray(x, dtype=np.float64), gain, bias)[0]


def compress(x, loadings):
    """Per-sample core ``x x_1 U_1^T x_2 U_2^T x_3 U_3^T`` for ``x[b]``."""
    for m, u in enumerate(loadings):
        x = batched_mode_product(x, np.swapaxes(u, -1, -2), m)
    return x


def expand_core(c, loadings):
    for m, u in enumerate(loadings):
        c = batched_mode_product(c, u, m)
    return c


def fit_loadings(x, ranks, cfg: ModelConfig):
    return batched_loadings(x, ranks, cfg.tucker_method, cfg.hooi_iters)


def _count_tucker(counter, x_shape, ranks):
    if counter is None:
        return
    from .flops import tucker_projection_flops, tucker_reconstruction_flops

    batch, shape = x_shape[0], x_shape[1:]
    counter.add("tucker", batch * (tucker_projection_flops(shape, ranks)
                                  + tucker_reconstruction_flops(shape, ranks)))


# -- layers -----------------------------------------------------------------

def _tea_block_fwd(x, attn, gain, bias, ranks, cfg, mask_fn=None, loadings=None, counter=None):
    """Compress, residual self-attention + layer norm on the core, expand."""
    if loadings is None:
        loadings = fit_loadings(x, ranks, cfg)
    c = compress(x, loadings)
    mask = mask_fn(c.shape[1]) if mask_fn is not None else None
    m, attn_cache = _mha_fwd(c, c, attn, cfg.act, mask, cfg.scale_scores, counter)
    c_hat, ln_cache = _ln_fwd(c + m, gain, bias, cfg.layer_norm)
    _count_tucker(counter, x.shape, ranks)
    return expand_core(c_hat, loadings), (loadings, attn_cache, ln_cache)


def _tea_block_bwd(dout, cache):
    loadings, attn_cache, ln_cache = cache
    dc_hat = compress(dout, loadings)
    dy, dgain, dbias = _ln_bwd(dc_hat, ln_cache)
    dc, _, dattn = _mha_bwd(dy, attn_cache)
    return expand_core(dy + dc, loadings), dattn, dgain, dbias


def _plain_block_fwd(x, attn, gain, bias, cfg, mask=None, kv=None, counter=None):
    x_kv = x if kv is None else kv
    m, attn_cache = _mha_fwd(x, x_kv, attn, cfg.act, mask, cfg.scale_scores, counter)
    y, ln_cache = _ln_fwd(x + m, gain, bias, cfg.layer_norm)
    return y, (attn_cache, ln_cache)


def _plain_block_bwd(dout, cache):
    attn_cache, ln_cache = cache
    dy, dgain, dbias = _ln_bwd(dout, ln_cache)
    dx, dkv, dattn = _mha_bwd(dy, attn_cache)
    return dy + dx, dkv, dattn, dgain, dbias


def tea_encoder_layer(x, p: TeaLayerParams, cfg: ModelConfig | None = None, *, loadings=None,
                      counter=None, return_loadings=False):
    """One encoder layer on a single ``(L, L_mdl, D_mdl)`` tensor or a batch."""
    cfg = cfg or ModelConfig()
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    xb = x[None] if single else x
    _check_ranks(xb.shape[1:], p.ranks)
    if loadings is not None and single:
        loadings = [u[None] for u in loadings]
    out, cache = _tea_block_fwd(xb, p.attention, p.gain, p.bias, p.ranks, cfg,
                                loadings=loadings, counter=counter)
    used = cache[0]
    if single:
        out = out[0]
        used = [u[0] for u in used]
    return (out, used) if return_loadings else out


def tea_decoder_layer(x_dec, x_enc, self_p: TeaLayerParams, cross: AttentionParams, gain2, bias2,
                      cfg: ModelConfig | None = None, *, mask=True, counter=None):
    """Ablation decoder layer: masked attention on the decoder core, then cross-attention."""
    cfg = cfg or ModelConfig()
    x_dec = np.asarray(x_dec, dtype=np.float64)
    x_enc = np.asarray(x_enc, dtype=np.float64)
    single = x_dec.ndim == 3
    xd = x_dec[None] if single else x_dec
    xe = x_enc[None] if single else x_enc
    _check_ranks(xd.shape[1:], self_p.ranks)
    mask_fn = causal_mask if mask else None
    y, _ = _tea_block_fwd(xd, self_p.attention, self_p.gain, self_p.bias, self_p.ranks, cfg,
                          mask_fn=mask_fn, counter=counter)
    out, _ = _plain_block_fwd(y, cross, gain2, bias2, cfg, kv=xe, counter=counter)
    return out[0] if single else out


def _check_ranks(shape, ranks):
    for r, d in zip(ranks, shape):
        if not 1 <= r <= d:
            raise InvalidRank(f"ranks {tuple(ranks)} exceed tensor shape {tuple(shape)}")


# -- whole model ------------------------------------------------------------

@dataclass
class Tape:
    """Caches recorded by :func:`forward` for :func:`backward`."""

    cfg: ModelConfig
    enc_emb: tuple = None
    dec_emb: tuple = None
    enc: list = field(default_factory=list)
    dec: list = field(default_factory=list)
    head_in: np.ndarray = None
    loadings: dict = field(default_factory=dict)


def decoder_input(enc_in, dec_seed, cfg: ModelConfig):
    """Decoder seed followed by ``pred_len`` zero placeholders."""
    dec_seed = _flatten_raw(dec_seed, cfg.n_features)
    if dec_seed.shape[-2] != cfg.label_len:
        raise ShapeError(f"decoder seed of length {dec_seed.shape[-2]}, expected {cfg.label_len}")
    pad = np.zeros(dec_seed.shape[:-2] + (cfg.pred_len, cfg.n_features))
    return np.concatenate([dec_seed, pad], axis=-2)


def forward(params: dict, enc_in, dec_seed, cfg: ModelConfig, *, loadings=None, counter=None,
            record=False):
    """Batched forecast ``(B, pred_len, D_raw)`` from ``enc_in (B, L, D_raw)``.

    ``loadings`` (a dict keyed ``"enc<k>"`` / ``"dec<k>"``) pins the Tucker
    factors instead of refitting them.  With ``record=True`` a :class:`Tape`
    is returned too.
    """
    enc_in = _flatten_raw(enc_in, cfg.n_features)
    if enc_in.ndim != 3 or enc_in.shape[1] != cfg.seq_len:
        raise ShapeError(f"encoder input {enc_in.shape}, expected (B, {cfg.seq_len}, {cfg.n_features})")
    dec_in = decoder_input(enc_in, dec_seed, cfg)
    tape = Tape(cfg)
    fixed = loadings or {}

    x, tape.enc_emb = _embed_fwd(enc_in, embedding_view(params, "enc_emb"))
    for k in range(cfg.enc_layers):
        attn = attention_view(params, f"enc{k}.attn")
        gain, bias = params[f"enc{k}.ln.gain"], params[f"enc{k}.ln.bias"]
        if cfg.tea_encoder:
            x, cache = _tea_block_fwd(x, attn, gain, bias, cfg.ranks, cfg,
                                      loadings=fixed.get(f"enc{k}"), counter=counter)
            tape.loadings[f"enc{k}"] = cache[0]
        else:
            x, cache = _plain_block_fwd(x, attn, gain, bias, cfg, counter=counter)
        tape.enc.append(cache)
    enc_out = x

    y, tape.dec_emb = _embed_fwd(dec_in, embedding_view(params, "dec_emb"))
    mask = causal_mask(cfg.dec_len)
    for k in range(cfg.dec_layers):
        self_attn = attention_view(params, f"dec{k}.self")
        g1, b1 = params[f"dec{k}.ln1.gain"], params[f"dec{k}.ln1.bias"]
        if cfg.tea_decoder:
            y, c1 = _tea_block_fwd(y, self_attn, g1, b1, cfg.dec_ranks, cfg, mask_fn=causal_mask,
                                   loadings=fixed.get(f"dec{k}"), counter=counter)
            tape.loadings[f"dec{k}"] = c1[0]
        else:
            y, c1 = _plain_block_fwd(y, self_attn, g1, b1, cfg, mask=mask, counter=counter)
        cross = attention_view(params, f"dec{k}.cross")
        g2, b2 = params[f"dec{k}.ln2.gain"], params[f"dec{k}.ln2.bias"]
        y, c2 = _plain_block_fwd(y, cross, g2, b2, cfg, kv=enc_out, counter=counter)
        tape.dec.append((c1, c2))

    h = y.mean(axis=-2)[:, -cfg.pred_len:, :]
    tape.head_in = h
    pred = h @ params["head.weight"] + params["head.bias"]
    return (pred, tape) if record else pred


def _put_attention(grads, prefix, g: AttentionParams):
    grads.update(attention_flat(g, prefix))


def backward(dpred, tape: Tape, params: dict) -> dict:
    """Adjoint of :func:`forward` for every entry of ``params``."""
    cfg = tape.cfg
    grads = {}
    grads["head.weight"] = np.einsum("bld,blr->dr", tape.head_in, dpred)
    grads["head.bias"] = dpred.sum(axis=(0, 1))
    dh = dpred @ params["head.weight"].T
    dy = np.zeros(dh.shape[:1] + (cfg.dec_len, cfg.model_len, cfg.d_model))
    dy[:, -cfg.pred_len:] = dh[:, :, None, :] / cfg.model_len

    d_enc = 0.0
    for k in reversed(range(cfg.dec_layers)):
        c1, c2 = tape.dec[k]
        dy, dkv, dattn, dg2, db2 = _plain_block_bwd(dy, c2)
        d_enc = d_enc + dkv
        _put_attention(grads, f"dec{k}.cross", dattn)
        grads[f"dec{k}.ln2.gain"], grads[f"dec{k}.ln2.bias"] = _ln_grads(dg2, db2, params, f"dec{k}.ln2")
        if cfg.tea_decoder:
            dy, dattn, dg1, db1 = _tea_block_bwd(dy, c1)
        else:
            dy, _, dattn, dg1, db1 = _plain_block_bwd(dy, c1)
        _put_attention(grads, f"dec{k}.self", dattn)
        grads[f"dec{k}.ln1.gain"], grads[f"dec{k}.ln1.bias"] = _ln_grads(dg1, db1, params, f"dec{k}.ln1")
    for name, g in _embed_bwd(dy, tape.dec_emb).items():
        grads[f"dec_emb.{name}"] = g

    dx = np.zeros((dh.shape[0], cfg.seq_len, cfg.model_len, cfg.d_model)) + d_enc
    for k in reversed(range(cfg.enc_layers)):
        if cfg.tea_encoder:
            dx, dattn, dg, db = _tea_block_bwd(dx, tape.enc[k])
        else:
            dx, _, dattn, dg, db = _plain_block_bwd(dx, tape.enc[k])
        _put_attention(grads, f"enc{k}.attn", dattn)
        grads[f"enc{k}.ln.gain"], grads[f"enc{k}.ln.bias"] = _ln_grads(dg, db, params, f"enc{k}.ln")
    for name, g in _embed_bwd(dx, tape.enc_emb).items():
        grads[f"enc_emb.{name}"] = g
    return grads


def _ln_grads(dg, db, params, prefix):
    if dg is None:
        return np.zeros_like(params[f"{prefix}.gain"]), np.zeros_like(params[f"{prefix}.bias"])
    return dg, db


def model_forward(window, params: dict, cfg: ModelConfig, **kwargs):
    """Forecast ``(pred_len, D_raw)`` for one :class:`~tensoraug.data.ForecastWindow`."""
    pred = forward(params, window.encoder_input[None], window.decoder_seed[None], cfg, **kwargs)
    return pred[0]
