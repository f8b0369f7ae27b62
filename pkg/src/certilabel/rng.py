"""Deterministic random streams built on the Philox counter-based generator.

A stream is identified by a root seed plus a path of labels and indices,
e.g. ``stream(seed, "teacher", scene_index)``. The path is hashed with
BLAKE2b into the second Philox key word, so every (seed, path) pair maps
to an independent, bit-reproducible stream regardless of how many other
streams were consumed or on which worker the stream is drawn. This is
what makes scene-parallel simulation order-independent.

Stream derivation, precisely: the key of the Philox4x64 generator is
``[seed mod 2^64, blake2b_8(path encoding)]`` where the path encoding
joins each component as ``b"s:" + utf8`` for strings or ``b"i:" +
8-byte little-endian`` for integers, separated by null bytes.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream", "stream_key"]


def stream_key(*path: str | int) -> int:
    """Collapse a label/index path into a 64-bit stream identifier."""
    h = hashlib.blake2b(digest_size=8)
    for part in path:
        if isinstance(part, str):
            h.update(b"s:" + part.encode("utf-8"))
        elif isinstance(part, (int, np.integer)):
            h.update(b"i:" + int(part).to_bytes(8, "little", signed=True))
        else:
            raise TypeError(f"stream path components must be str or int, got {part!r}")
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")


def stream(seed: int, *path: str | int) -> np.random.Generator:
    """Independent generator for the given seed and stream path."""
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, stream_key(*path)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
