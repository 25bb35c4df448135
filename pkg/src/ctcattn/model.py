"""Toy pre-norm transformer encoder-decoder with a CTC branch on the encoder.

Source-target attention weights are always kept: every decoder forward
pass returns them in an :class:`AttentionRecord`, one ``heads x L_out x T``
tensor per decoder layer.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Iterator, Sequence

import numpy as np

from .ctc import CtcClassifier
from .errors import InvalidArgument
from .numeric import Parameter, SeededRng, Tensor
from .numeric import tensor as T_


@dataclass
class ModelConfig:
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 4
    d_model: int = 32
    d_ff: int = 64
    vocab_size: int = 15
    feature_dim: int = 16
    max_frames: int = 512
    max_tokens: int = 64
    downsample: int = 1
    blank_id: int = 0
    sos_id: int = 1
    eos_id: int = 2
    ln_eps: float = 1e-5
    dropout: float = 0.2

    def __post_init__(self):
        if self.d_model % self.heads:
            raise InvalidArgument(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if self.vocab_size < 2:
            raise InvalidArgument("vocab_size must include blank plus at least one real token")
        if min(self.enc_layers, self.dec_layers, self.heads, self.d_model, self.d_ff,
               self.feature_dim, self.downsample) < 1:
            raise InvalidArgument("layer counts and widths must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidArgument("dropout must be in [0, 1)")
        for name in ("blank_id", "sos_id", "eos_id"):
            if not 0 <= getattr(self, name) < self.vocab_size:
                raise InvalidArgument(f"{name} outside vocabulary")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for k, v in d.items():
            if k in known:
                kwargs[k] = float(v) if known[k] == "float" else int(v)
        return cls(**kwargs)


@dataclass
class EncoderOutput:
    h: Tensor  # T x D

    @property
    def num_frames(self) -> int:
        return self.h.shape[0]

    def numpy(self) -> np.ndarray:
        return self.h.data


class AttentionRecord:
    """Source-target attention weights of every decoder layer and head."""

    def __init__(self, layers: Sequence[Tensor]):
        self.layers = [T_.as_tensor(w) for w in layers]

    @classmethod
    def from_array(cls, weights) -> "AttentionRecord":
        """Build a record from a ``layers x heads x L_out x T`` array (e.g. forced weights)."""
        return cls([Tensor(w) for w in np.asarray(weights, dtype=np.float64)])

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def num_heads(self) -> int:
        return self.layers[0].shape[0]

    def weights(self, layer: int, head: int) -> np.ndarray:
        return self.layers[layer].data[head]

    def as_array(self) -> np.ndarray:
        return np.stack([w.data for w in self.layers])


@dataclass
class ForwardOutput:
    decoder_logits: Tensor  # L_out x C
    attention: AttentionRecord
    encoder_out: EncoderOutput


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    div = np.exp(np.arange(0, d, 2) * (-math.log(10000.0) / d))
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div)[:, : d // 2]
    return pe


class Linear:
    def __init__(self, name: str, d_in: int, d_out: int, rng: np.random.Generator):
        bound = math.sqrt(6.0 / (d_in + d_out))
        self.W = Parameter(rng.uniform(-bound, bound, size=(d_out, d_in)), f"{name}.W")
        self.b = Parameter(np.zeros(d_out), f"{name}.b")

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.W.T + self.b

    def parameters(self):
        yield self.W
        yield self.b


class LayerNorm:
    def __init__(self, name: str, d: int, eps: float):
        self.gain = Parameter(np.ones(d), f"{name}.gain")
        self.bias = Parameter(np.zeros(d), f"{name}.bias")
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T_.layer_norm(x, self.gain, self.bias, self.eps)

    def parameters(self):
        yield self.gain
        yield self.bias


class MultiHeadAttention:
    def __init__(self, name: str, d: int, heads: int, rng: np.random.Generator):
        self.heads = heads
        self.d_head = d // heads
        self.q = Linear(f"{name}.q", d, d, rng)
        self.k = Linear(f"{name}.k", d, d, rng)
        self.v = Linear(f"{name}.v", d, d, rng)
        self.o = Linear(f"{name}.o", d, d, rng)

    def _split(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        return x.reshape(n, self.heads, self.d_head).transpose(1, 0, 2)

    def __call__(self, queries: Tensor, keys: Tensor, mask=None) -> tuple[Tensor, Tensor]:
        """Returns (output L x D, weights heads x L x T)."""
        q = self._split(self.q(queries))
        k = self._split(self.k(keys))
        v = self._split(self.v(keys))
        scores = (q @ k.transpose(0, 2, 1)) * (1.0 / math.sqrt(self.d_head))
        weights = T_.softmax(scores, axis=-1, mask=mask)
        ctx = (weights @ v).transpose(1, 0, 2).reshape(queries.shape[0], -1)
        return self.o(ctx), weights

    def parameters(self):
        for lin in (self.q, self.k, self.v, self.o):
            yield from lin.parameters()


class FeedForward:
    def __init__(self, name: str, d: int, d_ff: int, rng: np.random.Generator):
        self.w1 = Linear(f"{name}.w1", d, d_ff, rng)
        self.w2 = Linear(f"{name}.w2", d_ff, d, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.w2(T_.relu(self.w1(x)))

    def parameters(self):
        yield from self.w1.parameters()
        yield from self.w2.parameters()


class EncoderLayer:
    def __init__(self, name: str, cfg: ModelConfig, rng):
        self.drop = cfg.dropout
        self.ln1 = LayerNorm(f"{name}.ln1", cfg.d_model, cfg.ln_eps)
        self.attn = MultiHeadAttention(f"{name}.self_attn", cfg.d_model, cfg.heads, rng)
        self.ln2 = LayerNorm(f"{name}.ln2", cfg.d_model, cfg.ln_eps)
        self.ff = FeedForward(f"{name}.ff", cfg.d_model, cfg.d_ff, rng)

    def __call__(self, x: Tensor, drop_rng=None) -> Tensor:
        y = self.ln1(x)
        x = x + T_.dropout(self.attn(y, y)[0], self.drop, drop_rng)
        return x + T_.dropout(self.ff(self.ln2(x)), self.drop, drop_rng)

    def parameters(self):
        for part in (self.ln1, self.attn, self.ln2, self.ff):
            yield from part.parameters()


class DecoderLayer:
    def __init__(self, name: str, cfg: ModelConfig, rng):
        self.drop = cfg.dropout
        self.ln1 = LayerNorm(f"{name}.ln1", cfg.d_model, cfg.ln_eps)
        self.self_attn = MultiHeadAttention(f"{name}.self_attn", cfg.d_model, cfg.heads, rng)
        self.ln2 = LayerNorm(f"{name}.ln2", cfg.d_model, cfg.ln_eps)
        self.src_attn = MultiHeadAttention(f"{name}.src_attn", cfg.d_model, cfg.heads, rng)
        self.ln3 = LayerNorm(f"{name}.ln3", cfg.d_model, cfg.ln_eps)
        self.ff = FeedForward(f"{name}.ff", cfg.d_model, cfg.d_ff, rng)

    def __call__(self, x: Tensor, h: Tensor, causal: np.ndarray, drop_rng=None) -> tuple[Tensor, Tensor]:
        y = self.ln1(x)
        x = x + T_.dropout(self.self_attn(y, y, mask=causal)[0], self.drop, drop_rng)
        ctx, weights = self.src_attn(self.ln2(x), h)
        x = x + T_.dropout(ctx, self.drop, drop_rng)
        return x + T_.dropout(self.ff(self.ln3(x)), self.drop, drop_rng), weights

    def parameters(self):
        for part in (self.ln1, self.self_attn, self.ln2, self.src_attn, self.ln3, self.ff):
            yield from part.parameters()


class EncoderDecoder:
    """Joint CTC/attention model. ``ctc`` is the CTC classifier on the encoder output.

    Dropout is applied only while ``dropout_rng`` is set (the trainer sets
    it for the duration of training); otherwise every pass is deterministic.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.config = cfg
        self.dropout_rng: np.random.Generator | None = None
        rng = SeededRng(seed).stream("init")
        d = cfg.d_model
        self.input_proj = Linear("enc.input", cfg.feature_dim, d, rng)
        self.enc_layers = [EncoderLayer(f"enc.{i}", cfg, rng) for i in range(cfg.enc_layers)]
        self.enc_norm = LayerNorm("enc.norm", d, cfg.ln_eps)
        self.embed = Parameter(rng.normal(0.0, d**-0.5, size=(cfg.vocab_size, d)), "dec.embed")
        self.dec_layers = [DecoderLayer(f"dec.{i}", cfg, rng) for i in range(cfg.dec_layers)]
        self.dec_norm = LayerNorm("dec.norm", d, cfg.ln_eps)
        self.output = Linear("dec.output", d, cfg.vocab_size, rng)
        self.ctc = CtcClassifier.init(cfg.vocab_size, d, rng, blank_id=cfg.blank_id)
        self._pe = sinusoidal_positions(max(cfg.max_frames, cfg.max_tokens + 1), d)

    # parameters

    def named_parameters(self) -> Iterator[tuple[str, Parameter]]:
        parts = [self.input_proj, *self.enc_layers, self.enc_norm]
        for part in parts:
            for p in part.parameters():
                yield p.name, p
        yield self.embed.name, self.embed
        for part in [*self.dec_layers, self.dec_norm, self.output]:
            for p in part.parameters():
                yield p.name, p
        for p in self.ctc.parameters():
            yield p.name, p

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    # forward

    def encode(self, features) -> EncoderOutput:
        x = np.asarray(features, dtype=np.float64)
        cfg = self.config
        if x.ndim != 2 or x.shape[0] == 0:
            raise InvalidArgument(f"features must be a non-empty T x F matrix, got {x.shape}")
        if x.shape[1] != cfg.feature_dim:
            raise InvalidArgument(f"feature width {x.shape[1]} != {cfg.feature_dim}")
        x = downsample(x, cfg.downsample)
        if x.shape[0] > cfg.max_frames:
            raise InvalidArgument(f"{x.shape[0]} frames exceed max_frames={cfg.max_frames}")
        rng = self.dropout_rng
        h = T_.dropout(self.input_proj(Tensor(x)) + self._pe[: x.shape[0]], cfg.dropout, rng)
        for layer in self.enc_layers:
            h = layer(h, rng)
        return EncoderOutput(self.enc_norm(h))

    def ctc_log_probs(self, encoder_out: EncoderOutput) -> Tensor:
        return T_.log_softmax(self.ctc.logits(encoder_out.h))

    def source_target_attention(self, layer: int, queries: Tensor, encoder_out: EncoderOutput):
        """Context (L_out x D) and weights (heads x L_out x T) of one decoder layer's source-target attention."""
        return self.dec_layers[layer].src_attn(T_.as_tensor(queries), encoder_out.h)

    def decode_teacher_forced(self, encoder_out: EncoderOutput, shifted_targets: Sequence[int]) -> ForwardOutput:
        cfg = self.config
        ids = [int(t) for t in shifted_targets]
        if not ids or ids[0] != cfg.sos_id:
            raise InvalidArgument("decoder input must begin with the start-of-sequence token")
        if len(ids) > cfg.max_tokens + 1:
            raise InvalidArgument(f"target length {len(ids)} exceeds max_tokens={cfg.max_tokens}")
        n = len(ids)
        rng = self.dropout_rng
        x = T_.dropout(T_.embedding(self.embed, ids) * math.sqrt(cfg.d_model) + self._pe[:n], cfg.dropout, rng)
        causal = np.tril(np.ones((n, n), dtype=bool))
        records = []
        for layer in self.dec_layers:
            x, weights = layer(x, encoder_out.h, causal, rng)
            records.append(weights)
        logits = self.output(self.dec_norm(x))
        return ForwardOutput(logits, AttentionRecord(records), encoder_out)

    def decode_greedy(self, encoder_out: EncoderOutput, max_len: int) -> list[int]:
        if max_len < 1:
            raise InvalidArgument("max_len must be >= 1")
        cfg = self.config
        ids = [cfg.sos_id]
        for _ in range(min(max_len, cfg.max_tokens)):
            logits = self.decode_teacher_forced(encoder_out, ids).decoder_logits.data
            nxt = int(np.argmax(logits[-1]))
            if nxt == cfg.eos_id:
                break
            ids.append(nxt)
        return ids[1:]

    def forward(self, features, tokens: Sequence[int]) -> ForwardOutput:
        """Encode ``features`` and teacher-force ``[sos] + tokens``."""
        enc = self.encode(features)
        return self.decode_teacher_forced(enc, [self.config.sos_id, *tokens])


def downsample(x: np.ndarray, factor: int) -> np.ndarray:
    """Average non-overlapping windows of ``factor`` frames (last window may be short)."""
    if factor == 1:
        return x
    n = -(-x.shape[0] // factor)
    return np.stack([x[i * factor : (i + 1) * factor].mean(axis=0) for i in range(n)])
