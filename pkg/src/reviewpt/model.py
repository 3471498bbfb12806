"""Transformer encoder at configurable size, plus the five output heads.

The encoder sums token/position/segment embeddings and applies
``num_layers`` blocks of multi-head self-attention (with a padding mask)
and a gelu feedforward, each followed by add&norm.  Heads read the final
hidden states only and never mutate parameters.

Single-example calls return an :class:`EncoderOutput` whose ``h`` is laid
out hidden-by-position (``r_h x |x|``); batched training paths work on
``[B, L, H]`` internally and share the same parameter tensors.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .tokenizer import PackedInput


@dataclass
class ModelConfig:
    num_layers: int
    hidden_size: int
    num_heads: int
    feedforward_size: int
    vocab_size: int
    max_positions: int = 320
    num_segments: int = 2
    dropout_rate: float = 0.1
    tie_mlm: bool = False

    def __post_init__(self):
        if self.hidden_size % self.num_heads != 0:
            raise ValueError(
                f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}"
            )

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "ModelConfig":
        return cls(**json.loads(s))


# Desk-scale presets; "base" mirrors the full-size setting but is not
# expected to be trained here.
PRESETS = {
    "tiny": dict(num_layers=2, hidden_size=64, num_heads=2, feedforward_size=256),
    "small": dict(num_layers=4, hidden_size=128, num_heads=4, feedforward_size=512),
    "base": dict(num_layers=12, hidden_size=768, num_heads=12, feedforward_size=3072),
}


def preset_config(name: str, vocab_size: int, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    kw = dict(PRESETS[name])
    kw.update(vocab_size=vocab_size)
    kw.update(overrides)
    return ModelConfig(**kw)


class ModelParameters:
    """All trainable weights, as an ordered name -> Tensor mapping."""

    def __init__(self, tensors: dict[str, Tensor], config: ModelConfig):
        self.tensors = tensors
        self.config = config

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def items(self):
        return self.tensors.items()

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def mlm_table(self) -> Tensor:
        return self.tensors["tok_emb"] if self.config.tie_mlm else self.tensors["mlm.proj"]

    def copy_data(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.tensors.items()}

    def load_data(self, blobs: dict[str, np.ndarray]) -> None:
        for name, arr in blobs.items():
            t = self.tensors[name]
            if t.data.shape != arr.shape:
                raise ValueError(f"shape mismatch for {name}: {t.data.shape} vs {arr.shape}")
            t.data = arr.astype(t.data.dtype, copy=True)


def init_parameters(config: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParameters:
    """Fresh parameters: normal(0, 0.02) weights, zero biases, unit norm gains."""
    rng = np.random.default_rng(seed)
    h, f, v = config.hidden_size, config.feedforward_size, config.vocab_size

    def w(*shape):
        return Tensor(rng.normal(0.0, 0.02, size=shape).astype(dtype), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    def ones(*shape):
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

    t: dict[str, Tensor] = {}
    t["tok_emb"] = w(v, h)
    t["pos_emb"] = w(config.max_positions, h)
    t["seg_emb"] = w(config.num_segments, h)
    for i in range(config.num_layers):
        p = f"layer{i}."
        for name in ("wq", "wk", "wv", "wo"):
            t[p + "attn." + name] = w(h, h)
        for name in ("bq", "bk", "bv", "bo"):
            t[p + "attn." + name] = zeros(h)
        t[p + "attn.norm_gain"] = ones(h)
        t[p + "attn.norm_bias"] = zeros(h)
        t[p + "ff.w_in"] = w(h, f)
        t[p + "ff.b_in"] = zeros(f)
        t[p + "ff.w_out"] = w(f, h)
        t[p + "ff.b_out"] = zeros(h)
        t[p + "ff.norm_gain"] = ones(h)
        t[p + "ff.norm_bias"] = zeros(h)
    if not config.tie_mlm:
        t["mlm.proj"] = w(v, h)
    t["mlm.bias"] = zeros(v)
    t["pair.w"] = w(2, h)
    t["pair.b"] = zeros(2)
    t["span.w1"] = w(1, h)
    t["span.b1"] = zeros(1)
    t["span.w2"] = w(1, h)
    t["span.b2"] = zeros(1)
    t["tag.w"] = w(3, h)
    t["tag.b"] = zeros(3)
    t["cls.w"] = w(3, h)
    t["cls.b"] = zeros(3)
    return ModelParameters(t, config)


@dataclass
class EncoderOutput:
    h: Tensor  # [r_h, |x|]
    h_cls: Tensor  # [r_h]
    packed: PackedInput


def encode_batch(
    params: ModelParameters,
    config: ModelConfig,
    ids: np.ndarray,
    segments: np.ndarray,
    pad_mask: np.ndarray,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Run the encoder over an id batch; returns hidden states [B, L, H]."""
    ids = np.asarray(ids, dtype=np.int64)
    segments = np.asarray(segments, dtype=np.int64)
    b, length = ids.shape
    if length > config.max_positions:
        raise ValueError(f"input length {length} exceeds max_positions {config.max_positions}")
    if ids.max() >= config.vocab_size:
        raise ValueError(f"token id {ids.max()} out of range for vocab_size {config.vocab_size}")
    if train_mode and config.dropout_rate > 0 and rng is None:
        rng = np.random.default_rng(0)

    t = params.tensors
    dtype = t["tok_emb"].dtype
    nh = config.num_heads
    dh = config.hidden_size // nh
    h = config.hidden_size

    pos = np.broadcast_to(np.arange(length), (b, length))
    x = ag.add(
        ag.add(ag.take_rows(t["tok_emb"], ids), ag.take_rows(t["pos_emb"], pos)),
        ag.take_rows(t["seg_emb"], segments),
    )
    x = ag.dropout(x, config.dropout_rate, rng, train=train_mode)

    # keys at padded positions are pushed to ~0 attention probability
    attn_bias = ((1.0 - np.asarray(pad_mask, dtype=dtype)) * ag.MASK_FILL)[:, None, None, :]

    def heads_view(y: Tensor) -> Tensor:
        return ag.transpose(ag.reshape(y, (b, length, nh, dh)), (0, 2, 1, 3))

    for i in range(config.num_layers):
        p = f"layer{i}."
        q = heads_view(ag.add(ag.matmul(x, t[p + "attn.wq"]), t[p + "attn.bq"]))
        k = heads_view(ag.add(ag.matmul(x, t[p + "attn.wk"]), t[p + "attn.bk"]))
        v = heads_view(ag.add(ag.matmul(x, t[p + "attn.wv"]), t[p + "attn.bv"]))
        scores = ag.add(ag.mul(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh)), attn_bias)
        attn = ag.dropout(ag.softmax_rows(scores, axis=-1), config.dropout_rate, rng, train=train_mode)
        ctx = ag.reshape(ag.transpose(ag.matmul(attn, v), (0, 2, 1, 3)), (b, length, h))
        attn_out = ag.add(ag.matmul(ctx, t[p + "attn.wo"]), t[p + "attn.bo"])
        attn_out = ag.dropout(attn_out, config.dropout_rate, rng, train=train_mode)
        x = ag.layer_norm(ag.add(x, attn_out), t[p + "attn.norm_gain"], t[p + "attn.norm_bias"])
        ff = ag.add(
            ag.matmul(ag.gelu(ag.add(ag.matmul(x, t[p + "ff.w_in"]), t[p + "ff.b_in"])), t[p + "ff.w_out"]),
            t[p + "ff.b_out"],
        )
        ff = ag.dropout(ff, config.dropout_rate, rng, train=train_mode)
        x = ag.layer_norm(ag.add(x, ff), t[p + "ff.norm_gain"], t[p + "ff.norm_bias"])
    return x


def forward(
    params: ModelParameters,
    config: ModelConfig,
    packed: PackedInput,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> EncoderOutput:
    """Encode one packed input; ``h`` comes back hidden-by-position."""
    hidden = encode_batch(
        params,
        config,
        packed.ids[None, :],
        packed.segments[None, :],
        packed.pad_mask[None, :],
        train_mode=train_mode,
        rng=rng,
    )
    h = ag.transpose(ag.take(hidden, 0), (1, 0))  # [H, L]
    h_cls = ag.take(h, (slice(None), 0))  # [H]
    return EncoderOutput(h=h, h_cls=h_cls, packed=packed)


# -- per-example heads -------------------------------------------------------


def _mask_term(valid_mask: np.ndarray, dtype) -> np.ndarray:
    return np.where(np.asarray(valid_mask, dtype=bool), 0.0, ag.MASK_FILL).astype(dtype)


def span_logits(params: ModelParameters, out: EncoderOutput, valid_mask) -> tuple[Tensor, Tensor]:
    """Start/end pointer distributions over the sequence, invalid positions ~0."""
    valid_mask = np.asarray(valid_mask, dtype=bool)
    if not valid_mask.any():
        raise ValueError("empty valid region")
    t = params.tensors
    bias = _mask_term(valid_mask, out.h.dtype)
    l1 = ag.reshape(ag.add(ag.add(ag.matmul(t["span.w1"], out.h), ag.reshape(t["span.b1"], (1, 1))), bias), (-1,))
    l2 = ag.reshape(ag.add(ag.add(ag.matmul(t["span.w2"], out.h), ag.reshape(t["span.b2"], (1, 1))), bias), (-1,))
    return ag.softmax_rows(l1, axis=-1), ag.softmax_rows(l2, axis=-1)


def tag_logits(params: ModelParameters, out: EncoderOutput) -> Tensor:
    """Per-position B/I/O distribution, shape [3, |x|]; softmax over labels."""
    t = params.tensors
    logits = ag.add(ag.matmul(t["tag.w"], out.h), ag.reshape(t["tag.b"], (3, 1)))
    return ag.softmax_rows(logits, axis=0)


def class_logits(params: ModelParameters, out: EncoderOutput) -> Tensor:
    """Polarity distribution over {positive, negative, neutral} from [CLS]."""
    t = params.tensors
    cls_col = ag.reshape(out.h_cls, (-1, 1))
    logits = ag.reshape(ag.add(ag.matmul(t["cls.w"], cls_col), ag.reshape(t["cls.b"], (3, 1))), (-1,))
    return ag.softmax_rows(logits, axis=-1)


def pair_logits(params: ModelParameters, out: EncoderOutput) -> Tensor:
    """Two-way same-review / cross-review distribution from [CLS]."""
    t = params.tensors
    cls_col = ag.reshape(out.h_cls, (-1, 1))
    logits = ag.reshape(ag.add(ag.matmul(t["pair.w"], cls_col), ag.reshape(t["pair.b"], (2, 1))), (-1,))
    return ag.softmax_rows(logits, axis=-1)


def mlm_logits(params: ModelParameters, out: EncoderOutput, masked_positions) -> Tensor:
    """Vocabulary distributions at the masked positions only, [|masked|, V]."""
    positions = np.asarray(masked_positions, dtype=np.int64)
    if positions.size == 0:
        return Tensor(np.zeros((0, params.config.vocab_size), dtype=out.h.dtype))
    t = params.tensors
    cols = ag.take(out.h, (slice(None), positions))  # [H, M]
    logits = ag.add(ag.matmul(params.mlm_table(), cols), ag.reshape(t["mlm.bias"], (-1, 1)))
    return ag.softmax_rows(ag.transpose(logits, (1, 0)), axis=-1)


# -- batched heads (training paths) ------------------------------------------


def span_probs_batch(params: ModelParameters, hidden: Tensor, valid_mask: np.ndarray) -> tuple[Tensor, Tensor]:
    """Batched start/end distributions [B, L] with invalid positions masked."""
    t = params.tensors
    bias = _mask_term(valid_mask, hidden.dtype)
    l1 = ag.add(ag.reshape(ag.matmul(hidden, ag.transpose(t["span.w1"], (1, 0))), hidden.shape[:2]), t["span.b1"])
    l2 = ag.add(ag.reshape(ag.matmul(hidden, ag.transpose(t["span.w2"], (1, 0))), hidden.shape[:2]), t["span.b2"])
    return (
        ag.softmax_rows(ag.add(l1, bias), axis=-1),
        ag.softmax_rows(ag.add(l2, bias), axis=-1),
    )


def cls_hidden_batch(hidden: Tensor) -> Tensor:
    return ag.take(hidden, (slice(None), 0))  # [B, H]


def pair_probs_batch(params: ModelParameters, hidden: Tensor) -> Tensor:
    t = params.tensors
    logits = ag.add(ag.matmul(cls_hidden_batch(hidden), ag.transpose(t["pair.w"], (1, 0))), t["pair.b"])
    return ag.softmax_rows(logits, axis=-1)


def class_probs_batch(params: ModelParameters, hidden: Tensor) -> Tensor:
    t = params.tensors
    logits = ag.add(ag.matmul(cls_hidden_batch(hidden), ag.transpose(t["cls.w"], (1, 0))), t["cls.b"])
    return ag.softmax_rows(logits, axis=-1)


def tag_probs_batch(params: ModelParameters, hidden: Tensor) -> Tensor:
    t = params.tensors
    logits = ag.add(ag.matmul(hidden, ag.transpose(t["tag.w"], (1, 0))), t["tag.b"])
    return ag.softmax_rows(logits, axis=-1)  # [B, L, 3]


def mlm_probs_flat(params: ModelParameters, hidden: Tensor, flat_positions: np.ndarray) -> Tensor:
    """MLM distributions for positions indexed into the flattened [B*L] batch."""
    b, length, h = hidden.shape
    rows = ag.take(ag.reshape(hidden, (b * length, h)), np.asarray(flat_positions, dtype=np.int64))
    logits = ag.add(ag.matmul(rows, ag.transpose(params.mlm_table(), (1, 0))), params.tensors["mlm.bias"])
    return ag.softmax_rows(logits, axis=-1)
