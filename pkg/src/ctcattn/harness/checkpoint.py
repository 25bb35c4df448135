"""Checkpoint container.

Layout (little-endian)::

    b"ACPR"  u32 version
    u32 config length, config bytes (UTF-8 key=value lines; model fields
        prefixed ``model.``, plus ``step``, ``rng.state``, ``rng.inc`` and
        free-form ``extra.*`` entries)
    repeated until end of file:
        u32 name length, name (UTF-8), u32 rank, u32 dims..., float32 data
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from ..data import parse_manifest
from ..errors import FormatError, ShapeMismatch
from ..model import EncoderDecoder, ModelConfig

MAGIC = b"ACPR"
VERSION = 1


@dataclass
class Checkpoint:
    model_config: ModelConfig
    tensors: dict[str, np.ndarray]  # float32, insertion order = file order
    step: int = 0
    rng_state: dict | None = None
    extra: dict[str, str] = field(default_factory=dict)
    version: int = VERSION

    def build_model(self) -> EncoderDecoder:
        model = EncoderDecoder(self.model_config)
        load_into(model, self.tensors)
        return model


def encode_checkpoint(model: EncoderDecoder, step: int = 0, rng_state: dict | None = None,
                      extra: dict | None = None) -> bytes:
    lines = [f"model.{k}={v}" for k, v in model.config.to_dict().items()]
    lines.append(f"step={int(step)}")
    if rng_state is not None:
        lines += [f"rng.state={rng_state['state']}", f"rng.inc={rng_state['inc']}"]
    for k, v in (extra or {}).items():
        lines.append(f"extra.{k}={v}")
    config = ("\n".join(lines) + "\n").encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(config)), config]
    for name, p in model.named_parameters():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        parts += [
            struct.pack("<I", len(raw)), raw,
            struct.pack("<I", arr.ndim), struct.pack(f"<{arr.ndim}I", *arr.shape),
            arr.tobytes(),
        ]
    return b"".join(parts)


def save_checkpoint(path, model: EncoderDecoder, step: int = 0, rng_state: dict | None = None,
                    extra: dict | None = None) -> None:
    data = encode_checkpoint(model, step, rng_state, extra)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def decode_checkpoint(buf: bytes) -> Checkpoint:
    if buf[:4] != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)", 0)
    if len(buf) < 12:
        raise FormatError("truncated header", len(buf))
    version, n = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    pos = 12
    if pos + n > len(buf):
        raise FormatError("truncated config block", pos)
    try:
        entries = parse_manifest(buf[pos : pos + n].decode("utf-8"), pos)
        model_cfg = ModelConfig.from_dict(
            {k[6:]: v for k, v in entries.items() if k.startswith("model.")}
        )
    except UnicodeDecodeError:
        raise FormatError("config block is not UTF-8", pos) from None
    pos += n
    rng_state = None
    if "rng.state" in entries:
        rng_state = {"state": int(entries["rng.state"]), "inc": int(entries["rng.inc"])}
    extra = {k[6:]: v for k, v in entries.items() if k.startswith("extra.")}

    tensors: dict[str, np.ndarray] = {}
    while pos < len(buf):
        start = pos
        if pos + 4 > len(buf):
            raise FormatError("truncated tensor header", pos)
        (name_len,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        if pos + name_len + 4 > len(buf):
            raise FormatError("truncated tensor name", start)
        name = buf[pos : pos + name_len].decode("utf-8", errors="replace")
        pos += name_len
        (rank,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        if pos + 4 * rank > len(buf):
            raise FormatError(f"tensor {name!r}: truncated shape", start)
        dims = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        size = 4 * int(np.prod(dims, dtype=np.int64))
        if pos + size > len(buf):
            raise FormatError(f"tensor {name!r}: truncated data ({len(buf) - pos} of {size} bytes)", start)
        tensors[name] = np.frombuffer(buf, dtype="<f4", count=size // 4, offset=pos).reshape(dims).copy()
        pos += size
    return Checkpoint(model_cfg, tensors, int(entries.get("step", 0)), rng_state, extra, version)


def load_checkpoint(path, model_config: ModelConfig | None = None) -> Checkpoint:
    """Read a checkpoint; with ``model_config`` the tensors are validated against that architecture."""
    with open(path, "rb") as f:
        ckpt = decode_checkpoint(f.read())
    if model_config is not None:
        load_into(EncoderDecoder(model_config), ckpt.tensors)
        ckpt.model_config = model_config
    else:
        load_into(EncoderDecoder(ckpt.model_config), ckpt.tensors)
    return ckpt


def load_into(model: EncoderDecoder, tensors: dict[str, np.ndarray]) -> None:
    """Copy ``tensors`` into ``model``; every parameter must be present with a matching shape."""
    params = dict(model.named_parameters())
    for name, p in params.items():
        if name not in tensors:
            raise FormatError(f"tensor {name!r} missing from checkpoint")
        if tensors[name].shape != p.shape:
            raise ShapeMismatch(name, p.shape, tensors[name].shape)
    extra = sorted(set(tensors) - set(params))
    if extra:
        raise FormatError(f"unexpected tensor {extra[0]!r} in checkpoint")
    for name, p in params.items():
        p.data[...] = tensors[name].astype(np.float64)
