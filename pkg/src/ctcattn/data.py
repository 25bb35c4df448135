"""Synthetic speech-like data, vocabulary handling and dataset files.

Dataset file layout (little-endian)::

    b"ACPD"  u32 version
    u32 manifest length, manifest bytes (UTF-8 ``key=value`` lines:
        vocab_size, feature_dim, num_utterances)
    per utterance:
        u32 id length, id bytes (UTF-8)
        u32 token count, u32 token ids
        u32 T, u32 F, T*F float32 row-major
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import FormatError, InvalidArgument
from .numeric import SeededRng

MAGIC = b"ACPD"
VERSION = 1

BLANK, SOS, EOS = 0, 1, 2
NUM_RESERVED = 3


@dataclass(frozen=True)
class Vocab:
    """Ids 0..2 are blank, sos and eos; real tokens follow."""

    size: int

    def __post_init__(self):
        if self.size <= NUM_RESERVED:
            raise InvalidArgument(f"vocab size {self.size} leaves no real tokens")

    @classmethod
    def with_tokens(cls, n_tokens: int) -> "Vocab":
        return cls(n_tokens + NUM_RESERVED)

    blank_id = BLANK
    sos_id = SOS
    eos_id = EOS

    @property
    def num_tokens(self) -> int:
        return self.size - NUM_RESERVED

    @property
    def token_ids(self) -> range:
        return range(NUM_RESERVED, self.size)

    def name(self, token: int) -> str:
        if token == BLANK:
            return "<blank>"
        if token == SOS:
            return "<sos>"
        if token == EOS:
            return "<eos>"
        return f"t{token - NUM_RESERVED:02d}"

    def is_reserved(self, token: int) -> bool:
        return token < NUM_RESERVED


@dataclass
class Utterance:
    id: str
    features: np.ndarray  # T x F
    tokens: list[int]

    def __eq__(self, other):
        return (
            isinstance(other, Utterance)
            and self.id == other.id
            and self.tokens == other.tokens
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
        )


@dataclass
class Dataset:
    vocab: Vocab
    feature_dim: int
    utterances: list[Utterance] = field(default_factory=list)

    def __len__(self):
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def __getitem__(self, i):
        return self.utterances[i]


@dataclass
class SyntheticTaskConfig:
    num_tokens: int = 12
    num_utterances: int = 200
    min_length: int = 3
    max_length: int = 8
    min_frames_per_token: int = 2
    max_frames_per_token: int = 5
    noise_std: float = 0.1
    feature_dim: int = 16
    seed: int = 0
    id_prefix: str = "utt"

    def validate(self) -> None:
        if self.num_tokens < 1:
            raise InvalidArgument("need at least one real token")
        if self.num_utterances < 0:
            raise InvalidArgument("utterance count must be nonnegative")
        if not 1 <= self.min_length <= self.max_length:
            raise InvalidArgument("token-length range is empty or starts below 1")
        if not 2 <= self.min_frames_per_token <= self.max_frames_per_token:
            raise InvalidArgument("frames-per-token range must satisfy 2 <= min <= max")
        if self.noise_std < 0:
            raise InvalidArgument("noise_std must be nonnegative")
        if self.feature_dim < 1:
            raise InvalidArgument("feature_dim must be positive")


def token_prototypes(config: SyntheticTaskConfig) -> np.ndarray:
    """One fixed unit-scale prototype per real token (num_tokens x F)."""
    rng = SeededRng(config.seed).stream("prototypes")
    return rng.normal(0.0, 1.0, size=(config.num_tokens, config.feature_dim))


def generate_synthetic(config: SyntheticTaskConfig, *, start_index: int = 0) -> Dataset:
    """Token sequences rendered as repeated noisy prototype frames.

    Prototypes depend only on the seed, so train and test splits made with
    the same seed share the same token-to-frame mapping; use ``start_index``
    (or a different ``id_prefix``) to keep utterance streams distinct.
    """
    config.validate()
    vocab = Vocab.with_tokens(config.num_tokens)
    protos = token_prototypes(config)
    rng = SeededRng(config.seed).stream(f"data:{config.id_prefix}")
    utts = []
    for k in range(start_index, start_index + config.num_utterances):
        n = int(rng.integers(config.min_length, config.max_length + 1))
        toks = rng.integers(0, config.num_tokens, size=n)
        durs = rng.integers(config.min_frames_per_token, config.max_frames_per_token + 1, size=n)
        frames = np.repeat(protos[toks], durs, axis=0)
        if config.noise_std > 0:
            frames = frames + rng.normal(0.0, config.noise_std, size=frames.shape)
        utts.append(Utterance(f"{config.id_prefix}{k:05d}", frames,
                              [int(t) + NUM_RESERVED for t in toks]))
    return Dataset(vocab, config.feature_dim, utts)


# file I/O


def encode_dataset(ds: Dataset) -> bytes:
    manifest = (
        f"vocab_size={ds.vocab.size}\n"
        f"feature_dim={ds.feature_dim}\n"
        f"num_utterances={len(ds)}\n"
    ).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(manifest)), manifest]
    for u in ds:
        uid = u.id.encode("utf-8")
        feats = np.asarray(u.features, dtype="<f4")
        if feats.ndim != 2 or feats.shape[1] != ds.feature_dim:
            raise InvalidArgument(f"utterance {u.id}: features shape {feats.shape}")
        parts += [
            struct.pack("<I", len(uid)), uid,
            struct.pack("<I", len(u.tokens)), np.asarray(u.tokens, dtype="<u4").tobytes(),
            struct.pack("<II", *feats.shape), feats.tobytes(),
        ]
    return b"".join(parts)


def write_dataset(ds: Dataset, path) -> None:
    data = encode_dataset(ds)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated while reading {what}", self.pos)
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def parse_manifest(text: str, offset: int) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"bad manifest line {line!r}", offset)
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def decode_dataset(buf: bytes) -> Dataset:
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("not a dataset file (bad magic)", 0)
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported dataset version {version}", 4)
    n = r.u32("manifest length")
    start = r.pos
    try:
        manifest = parse_manifest(r.take(n, "manifest").decode("utf-8"), start)
        vocab_size = int(manifest["vocab_size"])
        feature_dim = int(manifest["feature_dim"])
        count = int(manifest["num_utterances"])
    except (KeyError, ValueError, UnicodeDecodeError) as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(f"bad manifest: {e}", start) from None
    utts = []
    for k in range(count):
        uid_len = r.u32(f"utterance {k} id length")
        at = r.pos
        try:
            uid = r.take(uid_len, f"utterance {k} id").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"utterance {k} id is not UTF-8", at) from None
        n_tok = r.u32(f"utterance {uid} token count")
        at = r.pos
        toks = np.frombuffer(r.take(4 * n_tok, f"utterance {uid} tokens"), dtype="<u4")
        if np.any(toks >= vocab_size):
            raise FormatError(f"utterance {uid}: token id outside vocabulary", at)
        at = r.pos
        n_frames, width = r.u32(f"utterance {uid} frame count"), r.u32(f"utterance {uid} width")
        if width != feature_dim:
            raise FormatError(f"utterance {uid}: width {width} != feature_dim {feature_dim}", at)
        raw = r.take(4 * n_frames * width, f"utterance {uid} features")
        feats = np.frombuffer(raw, dtype="<f4").reshape(n_frames, width).astype(np.float64)
        utts.append(Utterance(uid, feats, toks.astype(int).tolist()))
    if r.pos != len(buf):
        raise FormatError("trailing bytes after last utterance", r.pos)
    return Dataset(Vocab(vocab_size), feature_dim, utts)


def read_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        return decode_dataset(f.read())


# scoring


def edit_distance(hyp: Sequence, ref: Sequence) -> int:
    """Levenshtein distance with unit substitution, insertion and deletion costs."""
    prev = list(range(len(ref) + 1))
    for i, a in enumerate(hyp, 1):
        cur = [i] + [0] * len(ref)
        for j, b in enumerate(ref, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a != b))
        prev = cur
    return prev[-1]


def token_error_rate(hyp: Sequence, ref: Sequence) -> float:
    return edit_distance(list(hyp), list(ref)) / max(1, len(ref))
