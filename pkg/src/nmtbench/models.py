"""Seq2seq architectures built on the autodiff tensor: a pre-norm Transformer
and a bidirectional gated-recurrent encoder/decoder with multiplicative
attention. Both expose the same teacher-forced and stepwise-decoding surface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .subword import BOS, PAD, SubwordModel
from .tensor import (
    Tensor,
    concat,
    dropout,
    softmax_rows,
    stack_time,
    take_rows,
    xavier_uniform,
)

NEG_ATTN = -1e9
LN_EPS = 1e-5


class ModelError(Exception):
    pass


class InvalidConfig(ModelError):
    pass


class IdOutOfRange(ModelError):
    pass


@dataclass(frozen=True)
class ArchitectureConfig:
    kind: str  # "rnn" | "transformer"
    source_vocab: int
    target_vocab: int
    layer_count: int = 2
    model_width: int = 64
    head_count: int = 4
    feedforward_width: int = 128
    dropout_rate: float = 0.1
    max_sequence_length: int = 128
    tied_embeddings: bool = False

    def validate(self) -> None:
        if self.kind not in ("rnn", "transformer"):
            raise InvalidConfig(f"unknown architecture kind {self.kind!r}")
        for name in (
            "layer_count",
            "model_width",
            "head_count",
            "feedforward_width",
            "max_sequence_length",
            "source_vocab",
            "target_vocab",
        ):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise InvalidConfig("dropout_rate must lie in [0, 1)")
        if self.kind == "transformer" and self.model_width % self.head_count != 0:
            raise InvalidConfig(
                f"model_width {self.model_width} not divisible by "
                f"head_count {self.head_count}"
            )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "source_vocab": self.source_vocab,
            "target_vocab": self.target_vocab,
            "layer_count": self.layer_count,
            "model_width": self.model_width,
            "head_count": self.head_count,
            "feedforward_width": self.feedforward_width,
            "dropout_rate": self.dropout_rate,
            "max_sequence_length": self.max_sequence_length,
            "tied_embeddings": self.tied_embeddings,
        }

    @staticmethod
    def from_dict(d: dict) -> "ArchitectureConfig":
        return ArchitectureConfig(**d)


@dataclass
class Seq2SeqModel:
    config: ArchitectureConfig
    params: dict[str, Tensor]
    source_subword: SubwordModel | None = None
    target_subword: SubwordModel | None = None

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.params):
            missing = set(self.params) ^ set(arrays)
            raise ModelError(f"parameter names disagree: {sorted(missing)}")
        for name, value in arrays.items():
            if value.shape != self.params[name].data.shape:
                raise ModelError(f"shape mismatch for {name}")
            self.params[name].data = value.astype(np.float64).copy()


def build(config: ArchitectureConfig, seed: int) -> Seq2SeqModel:
    """Deterministic parameter construction; same (config, seed) gives
    bit-identical tables."""
    config.validate()
    rng = np.random.default_rng(seed)
    d = config.model_width
    params: dict[str, Tensor] = {}

    def add(name: str, *shape: int) -> None:
        params[name] = xavier_uniform(shape, rng, name=name)

    def add_zeros(name: str, *shape: int) -> None:
        params[name] = Tensor(np.zeros(shape), requires_grad=True, name=name)

    def add_ones(name: str, *shape: int) -> None:
        params[name] = Tensor(np.ones(shape), requires_grad=True, name=name)

    add("src_embed", config.source_vocab, d)
    add("tgt_embed", config.target_vocab, d)

    if config.kind == "transformer":
        for side, layers in (("enc", config.layer_count), ("dec", config.layer_count)):
            for i in range(layers):
                p = f"{side}{i}"
                blocks = ["self"] if side == "enc" else ["self", "cross"]
                for blk in blocks:
                    add_ones(f"{p}.{blk}.ln.g", d)
                    add_zeros(f"{p}.{blk}.ln.b", d)
                    for proj in ("wq", "wk", "wv", "wo"):
                        add(f"{p}.{blk}.{proj}", d, d)
                add_ones(f"{p}.ff.ln.g", d)
                add_zeros(f"{p}.ff.ln.b", d)
                add(f"{p}.ff.w1", d, config.feedforward_width)
                add_zeros(f"{p}.ff.b1", config.feedforward_width)
                add(f"{p}.ff.w2", config.feedforward_width, d)
                add_zeros(f"{p}.ff.b2", d)
            add_ones(f"{side}.final_ln.g", d)
            add_zeros(f"{side}.final_ln.b", d)
    else:
        for layer in range(config.layer_count):
            in_dim = d if layer == 0 else 2 * d  # deeper layers read 2d states
            for direction in ("fwd", "bwd"):
                add(f"enc{layer}.{direction}.wx", in_dim, 3 * d)
                add(f"enc{layer}.{direction}.wh", d, 3 * d)
                add_zeros(f"enc{layer}.{direction}.b", 3 * d)
            add(f"dec{layer}.bridge", 2 * d, d)
            add_zeros(f"dec{layer}.bridge_b", d)
            add(f"dec{layer}.wx", d, 3 * d)
            add(f"dec{layer}.wh", d, 3 * d)
            add_zeros(f"dec{layer}.b", 3 * d)
        add("dec.attn", d, 2 * d)  # general bilinear score
        add("dec.combine", 3 * d, d)  # [context; hidden] -> attentional state
        add_zeros("dec.combine_b", d)

    if not config.tied_embeddings:
        add("out_proj", d, config.target_vocab)
    return Seq2SeqModel(config=config, params=params)


# ---------------------------------------------------------------------------
# shared pieces


def _layer_norm(x: Tensor, g: Tensor, b: Tensor) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered * (var + LN_EPS) ** -0.5 * g + b


def _sinusoidal_positions(length: int, width: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    dim = np.arange(width // 2)[None, :]
    angle = pos / np.power(10000.0, 2 * dim / width)
    enc = np.zeros((length, width))
    enc[:, 0::2] = np.sin(angle)
    enc[:, 1::2] = np.cos(angle)
    return enc


def _check_ids(ids: np.ndarray, vocab: int, what: str) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IdOutOfRange(f"{what} ids outside 0..{vocab - 1}")
    return ids


def _output_logits(model: Seq2SeqModel, hidden: Tensor) -> Tensor:
    if model.config.tied_embeddings:
        return hidden @ model.params["tgt_embed"].transpose()
    return hidden @ model.params["out_proj"]


def shift_right(target: np.ndarray) -> np.ndarray:
    """BOS-prefixed decoder input: [BOS, y_0, ..., y_{T-2}]."""
    shifted = np.full_like(target, PAD)
    shifted[:, 0] = BOS
    shifted[:, 1:] = target[:, :-1]
    return shifted


# ---------------------------------------------------------------------------
# transformer


def _mha(
    params: dict[str, Tensor],
    prefix: str,
    q_in: Tensor,
    kv_in: Tensor,
    mask: np.ndarray | None,
    heads: int,
    drop_rng,
    rate: float,
):
    b, lq, d = q_in.shape
    bk, lk = kv_in.shape[0], kv_in.shape[1]  # may broadcast (bk == 1)
    hd = d // heads
    scale = 1.0 / math.sqrt(hd)

    def split_heads(x: Tensor, batch: int, length: int) -> Tensor:
        return x.reshape(batch, length, heads, hd).transpose(0, 2, 1, 3)

    q = split_heads(q_in @ params[f"{prefix}.wq"], b, lq)
    k = split_heads(kv_in @ params[f"{prefix}.wk"], bk, lk)
    v = split_heads(kv_in @ params[f"{prefix}.wv"], bk, lk)
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    if mask is not None:
        scores = scores.masked_fill(mask, NEG_ATTN)
    attn = softmax_rows(scores)
    if drop_rng is not None:
        attn = dropout(attn, rate, drop_rng)
    ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(b, lq, d)
    return ctx @ params[f"{prefix}.wo"]


def _ffn(params: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    inner = (x @ params[f"{prefix}.w1"] + params[f"{prefix}.b1"]).relu()
    return inner @ params[f"{prefix}.w2"] + params[f"{prefix}.b2"]


def _embed(model: Seq2SeqModel, table: str, ids: np.ndarray, drop_rng, rate: float) -> Tensor:
    d = model.config.model_width
    x = take_rows(model.params[table], ids) * math.sqrt(d)
    x = x + Tensor(_sinusoidal_positions(ids.shape[1], d))
    if drop_rng is not None:
        x = dropout(x, rate, drop_rng)
    return x


def _transformer_encode(model: Seq2SeqModel, src: np.ndarray, drop_rng):
    cfg = model.config
    p = model.params
    pad_mask = src == PAD  # (B, Ls)
    attn_mask = pad_mask[:, None, None, :]
    x = _embed(model, "src_embed", src, drop_rng, cfg.dropout_rate)
    for i in range(cfg.layer_count):
        pre = f"enc{i}"
        normed = _layer_norm(x, p[f"{pre}.self.ln.g"], p[f"{pre}.self.ln.b"])
        attn = _mha(
            p, f"{pre}.self", normed, normed, attn_mask,
            cfg.head_count, drop_rng, cfg.dropout_rate,
        )
        x = x + (dropout(attn, cfg.dropout_rate, drop_rng) if drop_rng else attn)
        normed = _layer_norm(x, p[f"{pre}.ff.ln.g"], p[f"{pre}.ff.ln.b"])
        ff = _ffn(p, f"{pre}.ff", normed)
        x = x + (dropout(ff, cfg.dropout_rate, drop_rng) if drop_rng else ff)
    memory = _layer_norm(x, p["enc.final_ln.g"], p["enc.final_ln.b"])
    return memory, pad_mask


def _transformer_decode(
    model: Seq2SeqModel,
    memory: Tensor,
    src_pad: np.ndarray,
    tgt_in: np.ndarray,
    drop_rng,
) -> Tensor:
    cfg = model.config
    p = model.params
    b, lt = tgt_in.shape
    causal = np.triu(np.ones((lt, lt), dtype=bool), k=1)[None, None, :, :]
    tgt_key_pad = (tgt_in == PAD)[:, None, None, :]
    self_mask = causal | tgt_key_pad
    cross_mask = src_pad[:, None, None, :]
    x = _embed(model, "tgt_embed", tgt_in, drop_rng, cfg.dropout_rate)
    for i in range(cfg.layer_count):
        pre = f"dec{i}"
        normed = _layer_norm(x, p[f"{pre}.self.ln.g"], p[f"{pre}.self.ln.b"])
        attn = _mha(
            p, f"{pre}.self", normed, normed, self_mask,
            cfg.head_count, drop_rng, cfg.dropout_rate,
        )
        x = x + (dropout(attn, cfg.dropout_rate, drop_rng) if drop_rng else attn)
        normed = _layer_norm(x, p[f"{pre}.cross.ln.g"], p[f"{pre}.cross.ln.b"])
        attn = _mha(
            p, f"{pre}.cross", normed, memory, cross_mask,
            cfg.head_count, drop_rng, cfg.dropout_rate,
        )
        x = x + (dropout(attn, cfg.dropout_rate, drop_rng) if drop_rng else attn)
        normed = _layer_norm(x, p[f"{pre}.ff.ln.g"], p[f"{pre}.ff.ln.b"])
        ff = _ffn(p, f"{pre}.ff", normed)
        x = x + (dropout(ff, cfg.dropout_rate, drop_rng) if drop_rng else ff)
    hidden = _layer_norm(x, p["dec.final_ln.g"], p["dec.final_ln.b"])
    return _output_logits(model, hidden)


# ---------------------------------------------------------------------------
# recurrent model (gated cells + multiplicative attention)


def _gru_step(
    p: dict[str, Tensor],
    prefix: str,
    x: Tensor,
    h: Tensor,
    width: int,
) -> Tensor:
    gates_x = x @ p[f"{prefix}.wx"] + p[f"{prefix}.b"]
    gates_h = h @ p[f"{prefix}.wh"]
    z = (gates_x[:, 0:width] + gates_h[:, 0:width]).sigmoid()
    r = (gates_x[:, width : 2 * width] + gates_h[:, width : 2 * width]).sigmoid()
    n = (gates_x[:, 2 * width :] + r * gates_h[:, 2 * width :]).tanh()
    return z * h + (Tensor(1.0) - z) * n


def _rnn_encode(model: Seq2SeqModel, src: np.ndarray, drop_rng):
    cfg = model.config
    p = model.params
    d = cfg.model_width
    b, ls = src.shape
    pad_mask = src == PAD
    keep = (~pad_mask).astype(np.float64)[:, :, None]  # (B, Ls, 1)
    x = take_rows(p["src_embed"], src)
    if drop_rng is not None:
        x = dropout(x, cfg.dropout_rate, drop_rng)

    def run(layer: int, direction: str, inputs: list[Tensor], order: range):
        h = Tensor(np.zeros((b, d)))
        states: list[Tensor] = [None] * ls
        for t in order:
            mask_t = Tensor(keep[:, t])
            h_new = _gru_step(p, f"enc{layer}.{direction}", inputs[t], h, d)
            h = mask_t * h_new + (Tensor(1.0) - mask_t) * h
            states[t] = h
        return states

    layer_inputs = [x[:, t] for t in range(ls)]
    h0s: list[Tensor] = []
    states_list: list[Tensor] = layer_inputs
    for layer in range(cfg.layer_count):
        fwd = run(layer, "fwd", states_list, range(ls))
        bwd = run(layer, "bwd", states_list, range(ls - 1, -1, -1))
        states_list = [concat([f, w], axis=1) for f, w in zip(fwd, bwd)]
        last = concat([fwd[-1], bwd[0]], axis=1)  # final state per direction
        h0s.append(
            (last @ p[f"dec{layer}.bridge"] + p[f"dec{layer}.bridge_b"]).tanh()
        )
    states = stack_time(states_list, axis=1)  # (B, Ls, 2d) from the top layer
    return states, pad_mask, h0s


def _rnn_decode(
    model: Seq2SeqModel,
    states: Tensor,
    src_pad: np.ndarray,
    h0s: list[Tensor],
    tgt_in: np.ndarray,
    drop_rng,
) -> Tensor:
    cfg = model.config
    p = model.params
    d = cfg.model_width
    b, lt = tgt_in.shape
    x = take_rows(p["tgt_embed"], tgt_in)
    if drop_rng is not None:
        x = dropout(x, cfg.dropout_rate, drop_rng)
    attn_mask = src_pad[:, :, None]  # (B, Ls, 1)
    hs: list[Tensor] = list(h0s)  # batch-1 initial states broadcast over beams
    outputs: list[Tensor] = []
    states_t = states.swapaxes(1, 2)  # (B, 2d, Ls)
    for t in range(lt):
        step_in = x[:, t]
        for layer in range(cfg.layer_count):
            h = _gru_step(p, f"dec{layer}", step_in, hs[layer], d)
            hs[layer] = h
            step_in = h
        top = hs[-1]
        query = (top @ p["dec.attn"]).reshape(b, 1, 2 * d)
        scores = (query @ states_t).reshape(b, -1, 1)  # (B, Ls, 1)
        scores = scores.masked_fill(attn_mask, NEG_ATTN)
        weights = softmax_rows(scores.swapaxes(1, 2))  # (B, 1, Ls)
        context = (weights @ states).reshape(b, 2 * d)
        combined = concat([context, top], axis=1)
        attentional = (combined @ p["dec.combine"] + p["dec.combine_b"]).tanh()
        if drop_rng is not None:
            attentional = dropout(attentional, cfg.dropout_rate, drop_rng)
        outputs.append(attentional)
    hidden = stack_time(outputs, axis=1)  # (B, Lt, d)
    return _output_logits(model, hidden)


# ---------------------------------------------------------------------------
# public surface


def encode_source(model: Seq2SeqModel, src: np.ndarray, drop_rng=None):
    """Run the encoder once; the returned cache feeds decoder calls."""
    src = _check_ids(src, model.config.source_vocab, "source")
    if model.config.kind == "transformer":
        memory, pad = _transformer_encode(model, src, drop_rng)
        return ("transformer", memory, pad)
    states, pad, h0 = _rnn_encode(model, src, drop_rng)
    return ("rnn", states, pad, h0)


def decoder_logits(model: Seq2SeqModel, cache, tgt_in: np.ndarray, drop_rng=None) -> Tensor:
    tgt_in = _check_ids(tgt_in, model.config.target_vocab, "target")
    if cache[0] == "transformer":
        _, memory, pad = cache
        return _transformer_decode(model, memory, pad, tgt_in, drop_rng)
    _, states, pad, h0 = cache
    return _rnn_decode(model, states, pad, h0, tgt_in, drop_rng)


def forward_teacher_forced(
    model: Seq2SeqModel,
    source: np.ndarray,
    target: np.ndarray,
    drop_rng=None,
) -> Tensor:
    """Teacher-forced logits of shape (batch, target_len, target_vocab).

    The decoder input is the BOS-shifted target, so logits at position t
    depend only on target positions < t. PAD target rows are excluded from
    attention keys; the caller excludes them from the loss via ignore_id.
    """
    source = np.asarray(source)
    target = _check_ids(target, model.config.target_vocab, "target")
    if source.shape[0] != target.shape[0]:
        raise ModelError(
            f"batch sides disagree: {source.shape[0]} vs {target.shape[0]}"
        )
    cache = encode_source(model, source, drop_rng)
    return decoder_logits(model, cache, shift_right(target), drop_rng)
