"""Deterministic counter-based random substreams.

Every random draw in the package flows from a single 64-bit seed. Substreams
are derived by hashing a key tuple into a SeedSequence backing the
counter-based Philox generator, so any (seed, key) stream can be materialized
independently, in any order, on any worker, and always yields the same values.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

__all__ = ["substream", "uniform_index", "thread_count", "map_chunks"]

_MASK32 = 0xFFFFFFFF


def _key_words(parts) -> list[int]:
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, (int, np.integer)):
            h.update(b"i%d|" % int(p))
        elif isinstance(p, str):
            h.update(b"s" + p.encode("utf-8") + b"|")
        else:
            raise TypeError(f"unsupported stream key part: {p!r}")
    digest = h.digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 32, 4)]


def substream(seed: int, *key) -> np.random.Generator:
    """Generator for the substream identified by (seed, *key).

    Key parts may be ints (arbitrary size) or strings. The same key always
    produces the same stream; distinct keys produce independent streams.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + _key_words(key)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def uniform_index(rng: np.random.Generator, m: int) -> int:
    """Uniform integer in [0, m) for arbitrarily large m (rejection sampling)."""
    if m <= 0:
        raise ValueError("m must be positive")
    if m <= (1 << 62):
        return int(rng.integers(0, m))
    bits = m.bit_length()
    words = (bits + 31) // 32
    while True:
        draws = rng.integers(0, 1 << 32, size=words, dtype=np.uint64)
        v = 0
        for w in draws:
            v = (v << 32) | int(w)
        v &= (1 << bits) - 1
        if v < m:
            return v


def thread_count() -> int:
    """Worker cap: GTSYNTH_THREADS if set, else available parallelism."""
    env = os.environ.get("GTSYNTH_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"GTSYNTH_THREADS must be an integer, got {env!r}")
        if n < 1:
            raise ValueError("GTSYNTH_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def map_chunks(fn, n_chunks: int, threads: int | None = None) -> list:
    """Evaluate fn(chunk_index) for all chunks, merged in chunk order.

    The result list is identical regardless of the worker count, which is the
    contract that makes all downstream reductions worker-count independent.
    """
    threads = thread_count() if threads is None else threads
    if threads <= 1 or n_chunks <= 1:
        return [fn(i) for i in range(n_chunks)]
    with ThreadPoolExecutor(max_workers=min(threads, n_chunks)) as pool:
        return list(pool.map(fn, range(n_chunks)))
