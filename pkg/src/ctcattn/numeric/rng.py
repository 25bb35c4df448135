"""Seeded random streams.

Every stream is a numpy ``Generator`` over PCG64, seeded through a
``SeedSequence`` whose spawn key identifies the purpose. Streams for
different purposes are statistically independent, and a given
(seed, purpose) pair always yields the same draws.
"""

from __future__ import annotations

import zlib

import numpy as np

_PURPOSES = {"init": 0, "data": 1, "shuffle": 2}


class SeededRng:
    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF

    def stream(self, purpose: str) -> np.random.Generator:
        key = _PURPOSES.get(purpose)
        if key is None:
            key = 1000 + zlib.crc32(purpose.encode("utf-8"))
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(key,))
        return np.random.Generator(np.random.PCG64(ss))

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed})"


def get_state(gen: np.random.Generator) -> dict:
    st = gen.bit_generator.state
    return {"state": st["state"]["state"], "inc": st["state"]["inc"]}


def set_state(gen: np.random.Generator, state: dict) -> None:
    full = gen.bit_generator.state
    full["state"] = {"state": int(state["state"]), "inc": int(state["inc"])}
    full["has_uint32"] = 0
    full["uinteger"] = 0
    gen.bit_generator.state = full
