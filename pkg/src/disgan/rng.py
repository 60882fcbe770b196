"""Seeded random streams.

All randomness goes through Philox4x64-10, a counter-based generator keyed by
``(seed, stream)``. Independent streams for phantoms, weight init, data order
and instance noise never interfere with each other.
"""
from __future__ import annotations

import os

import numpy as np

PHANTOM = 1
INIT_GENERATOR = 2
INIT_DISCRIMINATOR = 3
INIT_EXTRACTOR = 4
DATA_ORDER = 5
INSTANCE_NOISE = 6
DEGRADATION = 7

_MASK64 = (1 << 64) - 1


def stream(seed: int, stream_id: int, *extra: int) -> np.random.Generator:
    """Generator for one named stream. ``extra`` words are folded into the counter."""
    key = np.array([int(seed) & _MASK64, int(stream_id) & _MASK64], dtype=np.uint64)
    counter = np.zeros(4, dtype=np.uint64)
    for i, word in enumerate(extra[:2]):
        counter[2 + i] = int(word) & _MASK64
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def get_state(gen: np.random.Generator) -> dict:
    """JSON-safe snapshot of a Philox generator."""
    state = gen.bit_generator.state
    inner = state["state"]
    return {
        "bit_generator": state["bit_generator"],
        "counter": [int(v) for v in inner["counter"]],
        "key": [int(v) for v in inner["key"]],
        "buffer": [int(v) for v in state["buffer"]],
        "buffer_pos": int(state["buffer_pos"]),
        "has_uint32": int(state["has_uint32"]),
        "uinteger": int(state["uinteger"]),
    }


def from_state(snapshot: dict) -> np.random.Generator:
    bitgen = np.random.Philox()
    bitgen.state = {
        "bit_generator": snapshot["bit_generator"],
        "state": {
            "counter": np.array(snapshot["counter"], dtype=np.uint64),
            "key": np.array(snapshot["key"], dtype=np.uint64),
        },
        "buffer": np.array(snapshot["buffer"], dtype=np.uint64),
        "buffer_pos": snapshot["buffer_pos"],
        "has_uint32": snapshot["has_uint32"],
        "uinteger": snapshot["uinteger"],
    }
    return np.random.Generator(bitgen)


def deterministic_requested() -> bool:
    return os.environ.get("DISGAN_DETERMINISTIC", "") not in ("", "0")


def enable_determinism() -> None:
    import torch

    torch.use_deterministic_algorithms(True)
