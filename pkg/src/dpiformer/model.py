"""Byte-token transformer encoder with explicit forward and backward passes.

Post-norm blocks, learned absolute position embeddings, a two-row segment
table of which only row 0 is used, and a linear head on the final hidden
state at position 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Dict

import numpy as np

from . import numerics as nx
from .errors import (
    LabelOutOfRange,
    MissingCache,
    SequenceTooLong,
    ShapeMismatch,
    TokenOutOfRange,
)
from .tokenizer import VOCAB_SIZE

Parameters = Dict[str, np.ndarray]


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = VOCAB_SIZE
    hidden_size: int = 768
    num_layers: int = 12
    num_heads: int = 12
    intermediate_size: int = 3072
    max_positions: int = 730
    type_vocab_size: int = 2
    num_labels: int = 2
    dropout: float = 0.1
    layer_norm_eps: float = 1e-12
    init_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size != VOCAB_SIZE:
            raise ValueError(f"vocab_size must be {VOCAB_SIZE}")
        if self.type_vocab_size < 1:
            raise ValueError("type_vocab_size must be positive")
        if self.hidden_size < 1 or self.num_heads < 1 or self.hidden_size % self.num_heads:
            raise ValueError("hidden_size must be a positive multiple of num_heads")
        if self.num_layers < 0 or self.intermediate_size < 1 or self.max_positions < 1:
            raise ValueError("num_layers, intermediate_size and max_positions must be positive")
        if self.num_labels < 2:
            raise ValueError("num_labels must be at least 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.layer_norm_eps <= 0 or self.init_std <= 0:
            raise ValueError("layer_norm_eps and init_std must be positive")

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.num_heads

    @property
    def is_extension(self) -> bool:
        """True when num_labels is outside the binary / three-way setups."""
        return self.num_labels not in (2, 3)

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        base = dict(
            hidden_size=64, num_layers=2, num_heads=4, intermediate_size=128,
            max_positions=64, dropout=0.1,
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ModelConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def parameter_shapes(config: ModelConfig) -> Dict[str, tuple]:
    """Name -> shape for every tensor, in canonical (serialization) order."""
    h, i = config.hidden_size, config.intermediate_size
    shapes = {
        "embeddings.token": (config.vocab_size, h),
        "embeddings.position": (config.max_positions, h),
        "embeddings.segment": (config.type_vocab_size, h),
        "embeddings.ln.gamma": (h,),
        "embeddings.ln.beta": (h,),
    }
    for layer in range(config.num_layers):
        p = f"layers.{layer}."
        for proj in ("q", "k", "v", "o"):
            shapes[p + f"attn.{proj}.weight"] = (h, h)
            shapes[p + f"attn.{proj}.bias"] = (h,)
        shapes[p + "attn_ln.gamma"] = (h,)
        shapes[p + "attn_ln.beta"] = (h,)
        shapes[p + "ffn.in.weight"] = (h, i)
        shapes[p + "ffn.in.bias"] = (i,)
        shapes[p + "ffn.out.weight"] = (i, h)
        shapes[p + "ffn.out.bias"] = (h,)
        shapes[p + "ffn_ln.gamma"] = (h,)
        shapes[p + "ffn_ln.beta"] = (h,)
    shapes["classifier.weight"] = (h, config.num_labels)
    shapes["classifier.bias"] = (config.num_labels,)
    return shapes


def parameter_count(config: ModelConfig) -> int:
    return sum(math.prod(s) for s in parameter_shapes(config).values())


def init_parameters(config: ModelConfig, dtype=np.float32) -> Parameters:
    """Truncated-normal weights (cut at two standard deviations), zero biases, unit gains."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    std = config.init_std
    params: Parameters = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".gamma"):
            params[name] = np.ones(shape, dtype=dtype)
        elif name.endswith(".bias") or name.endswith(".beta"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            w = rng.standard_normal(shape)
            bad = np.abs(w) > 2.0
            while bad.any():
                w[bad] = rng.standard_normal(int(bad.sum()))
                bad = np.abs(w) > 2.0
            params[name] = (w * std).astype(dtype)
    return params


def _check_batch(config: ModelConfig, ids: np.ndarray, mask: np.ndarray):
    if ids.ndim != 2 or ids.shape != mask.shape:
        raise ShapeMismatch(f"ids {ids.shape} and mask {mask.shape} must be equal 2-D shapes")
    if ids.shape[0] == 0:
        raise ShapeMismatch("batch is empty")
    if ids.shape[1] > config.max_positions:
        raise SequenceTooLong(
            f"sequence length {ids.shape[1]} exceeds max_positions {config.max_positions}"
        )
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise TokenOutOfRange(f"token ids must lie in [0, {config.vocab_size})")


def _linear(x, params, name):
    return x @ params[name + ".weight"] + params[name + ".bias"]


def _split_heads(x, b, l, nh, d):
    return x.reshape(b, l, nh, d).transpose(0, 2, 1, 3)


def _merge_heads(x, b, l, h):
    return x.transpose(0, 2, 1, 3).reshape(b * l, h)


def embed(params: Parameters, config: ModelConfig, ids, mask, rng=None, cache=None):
    """Token + position + segment-0 embeddings, layer-normed, with dropout when ``rng`` is given.

    Returns a ``(batch * seq, hidden)`` matrix.
    """
    _check_batch(config, ids, mask)
    b, l = ids.shape
    e = params["embeddings.token"][ids] + params["embeddings.position"][:l] + params["embeddings.segment"][0]
    e = e.reshape(b * l, config.hidden_size)
    y, ln_cache = nx.layer_norm(e, params["embeddings.ln.gamma"], params["embeddings.ln.beta"],
                                config.layer_norm_eps)
    y, dmask = nx.dropout(y, config.dropout, rng)
    if cache is not None:
        cache["embed"] = (ids, ln_cache, dmask)
    return y


def self_attention_block(x, addmask, params: Parameters, config: ModelConfig, layer: int,
                         b: int, l: int, rng=None, cache=None):
    """One post-norm encoder block on ``x`` of shape ``(b * l, hidden)``.

    ``addmask`` is ``(b, l)`` with 0 on real tokens and the negative sentinel
    on padding.
    """
    h, nh, d = config.hidden_size, config.num_heads, config.head_dim
    if x.shape != (b * l, h) or addmask.shape != (b, l):
        raise ShapeMismatch(f"block input {x.shape} / mask {addmask.shape} vs ({b}*{l}, {h})")
    p = f"layers.{layer}."
    q = _split_heads(_linear(x, params, p + "attn.q"), b, l, nh, d)
    k = _split_heads(_linear(x, params, p + "attn.k"), b, l, nh, d)
    v = _split_heads(_linear(x, params, p + "attn.v"), b, l, nh, d)
    scale = x.dtype.type(1.0 / math.sqrt(d))
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    probs = nx.softmax_grouped(scores, addmask, nh * l)
    probs_d, pmask = nx.dropout(probs, config.dropout, rng)
    ctx = _merge_heads(probs_d @ v, b, l, h)
    attn = _linear(ctx, params, p + "attn.o")
    attn, amask = nx.dropout(attn, config.dropout, rng)
    h1, ln1 = nx.layer_norm(x + attn, params[p + "attn_ln.gamma"], params[p + "attn_ln.beta"],
                            config.layer_norm_eps)
    pre = _linear(h1, params, p + "ffn.in")
    act = nx.gelu(pre)
    ff = _linear(act, params, p + "ffn.out")
    ff, fmask = nx.dropout(ff, config.dropout, rng)
    h2, ln2 = nx.layer_norm(h1 + ff, params[p + "ffn_ln.gamma"], params[p + "ffn_ln.beta"],
                            config.layer_norm_eps)
    if cache is not None:
        cache[f"layer{layer}"] = dict(
            x=x, q=q, k=k, v=v, probs=probs, probs_d=probs_d, pmask=pmask, ctx=ctx,
            amask=amask, h1=h1, ln1=ln1, pre=pre, act=act, fmask=fmask, ln2=ln2, scale=scale,
        )
    return h2


def attention_mask(mask: np.ndarray, dtype) -> np.ndarray:
    return np.where(mask > 0, 0.0, nx.NEG_SENTINEL).astype(dtype)


def forward(params: Parameters, config: ModelConfig, ids, mask, mode: str = "eval", rng=None):
    """Logits of shape ``(batch, num_labels)`` and, in train mode, the backward cache.

    Train mode draws dropout masks from ``rng`` (no dropout when ``rng`` is None
    or the rate is zero); eval mode is deterministic and returns ``cache=None``.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    ids = np.asarray(ids)
    mask = np.asarray(mask)
    train = mode == "train"
    cache = {} if train else None
    drop_rng = rng if train else None
    b, l = ids.shape if ids.ndim == 2 else (0, 0)
    x = embed(params, config, ids, mask, drop_rng, cache)
    addmask = attention_mask(mask, x.dtype)
    for layer in range(config.num_layers):
        x = self_attention_block(x, addmask, params, config, layer, b, l, drop_rng, cache)
    pooled = x.reshape(b, l, config.hidden_size)[:, 0, :]
    logits = pooled @ params["classifier.weight"] + params["classifier.bias"]
    if train:
        cache["shape"] = (b, l)
        cache["pooled"] = pooled
    return logits, cache


def _linear_backward(dy, x, params, grads, name):
    grads[name + ".weight"] = x.T @ dy
    grads[name + ".bias"] = dy.sum(axis=0)
    return dy @ params[name + ".weight"].T


def backward(params: Parameters, config: ModelConfig, cache, dlogits) -> Parameters:
    """Exact gradients of every parameter given ``dloss/dlogits``."""
    if not cache:
        raise MissingCache("backward needs the cache of a train-mode forward")
    b, l = cache["shape"]
    h, nh, d = config.hidden_size, config.num_heads, config.head_dim
    if dlogits.shape != (b, config.num_labels):
        raise ShapeMismatch(f"dlogits {dlogits.shape} vs ({b}, {config.num_labels})")
    grads: Parameters = {}
    grads["classifier.weight"] = cache["pooled"].T @ dlogits
    grads["classifier.bias"] = dlogits.sum(axis=0)
    dx = np.zeros((b, l, h), dtype=dlogits.dtype)
    dx[:, 0, :] = dlogits @ params["classifier.weight"].T
    dx = dx.reshape(b * l, h)

    for layer in reversed(range(config.num_layers)):
        c = cache[f"layer{layer}"]
        p = f"layers.{layer}."
        dr2, grads[p + "ffn_ln.gamma"], grads[p + "ffn_ln.beta"] = nx.layer_norm_backward(dx, c["ln2"])
        dh1 = dr2.copy()
        dff = dr2 if c["fmask"] is None else dr2 * c["fmask"]
        dact = _linear_backward(dff, c["act"], params, grads, p + "ffn.out")
        dpre = nx.gelu_backward(c["pre"], dact)
        dh1 += _linear_backward(dpre, c["h1"], params, grads, p + "ffn.in")
        dr1, grads[p + "attn_ln.gamma"], grads[p + "attn_ln.beta"] = nx.layer_norm_backward(dh1, c["ln1"])
        dattn = dr1 if c["amask"] is None else dr1 * c["amask"]
        dctx = _linear_backward(dattn, c["ctx"], params, grads, p + "attn.o")
        dctx = _split_heads(dctx, b, l, nh, d)
        dprobs_d = dctx @ c["v"].transpose(0, 1, 3, 2)
        dv = c["probs_d"].transpose(0, 1, 3, 2) @ dctx
        dprobs = dprobs_d if c["pmask"] is None else dprobs_d * c["pmask"]
        dscores = nx.softmax_rows_backward(c["probs"], dprobs) * c["scale"]
        dq = dscores @ c["k"]
        dk = dscores.transpose(0, 1, 3, 2) @ c["q"]
        dxl = dr1.copy()
        for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
            dxl += _linear_backward(_merge_heads(dproj, b, l, h), c["x"], params, grads, p + f"attn.{name}")
        dx = dxl

    ids, ln_cache, dmask = cache["embed"]
    if dmask is not None:
        dx = dx * dmask
    de, grads["embeddings.ln.gamma"], grads["embeddings.ln.beta"] = nx.layer_norm_backward(dx, ln_cache)
    dtok = np.zeros_like(params["embeddings.token"])
    np.add.at(dtok, ids.reshape(-1), de)
    grads["embeddings.token"] = dtok
    dpos = np.zeros_like(params["embeddings.position"])
    dpos[:l] = de.reshape(b, l, h).sum(axis=0)
    grads["embeddings.position"] = dpos
    dseg = np.zeros_like(params["embeddings.segment"])
    dseg[0] = de.sum(axis=0)
    grads["embeddings.segment"] = dseg
    return {name: grads[name] for name in params}


def loss_and_grads(params: Parameters, config: ModelConfig, ids, mask, labels, rng=None):
    """Train-mode forward, cross-entropy, backward. Returns ``(loss, grads, logits)``."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= config.num_labels):
        raise LabelOutOfRange(f"labels must lie in [0, {config.num_labels})")
    logits, cache = forward(params, config, ids, mask, mode="train", rng=rng)
    loss, dlogits = nx.cross_entropy(logits, labels)
    return loss, backward(params, config, cache, dlogits), logits
