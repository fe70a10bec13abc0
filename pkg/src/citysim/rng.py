"""Seeded random streams.

Two kinds of randomness are used throughout the simulator:

* ``generator(seed, *names)`` returns a numpy ``Generator`` backed by the
  counter-based Philox bit generator, keyed by a hash of the master seed and
  the stream names. Adding a new named stream never shifts the values drawn
  from an existing one.
* ``uniform(seed, stream, day, ids)`` is a stateless counter-based draw: a
  SplitMix64 hash of ``(seed, stream, day, id)``. Every agent therefore owns
  a private substream per day, and evaluating any subset of agents gives the
  same numbers as evaluating the whole population.
"""
from __future__ import annotations

import hashlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


def _digest(seed: int, names: tuple) -> bytes:
    text = "/".join([str(int(seed))] + [str(n) for n in names])
    return hashlib.blake2b(text.encode(), digest_size=16).digest()


def stream_key(seed: int, *names) -> int:
    """64-bit key for a named stream."""
    return int.from_bytes(_digest(seed, names)[:8], "little")


def generator(seed: int, *names) -> np.random.Generator:
    """Independent Philox generator for the named substream."""
    key = int.from_bytes(_digest(seed, names), "little")
    return np.random.Generator(np.random.Philox(key=key))


def mix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer on a uint64 array (wrapping arithmetic)."""
    z = np.asarray(x, dtype=np.uint64) + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def hash_ids(key: int, day: int, ids) -> np.ndarray:
    ids = np.atleast_1d(np.asarray(ids, dtype=np.int64)).astype(np.uint64)
    with np.errstate(over="ignore"):
        base = mix64(np.array([key ^ (int(day) & 0xFFFFFFFFFFFFFFFF)], dtype=np.uint64))
        return mix64(mix64(ids ^ base[0]) + base[0])


def uniform(seed: int, stream: str, day: int, ids) -> np.ndarray:
    """Per-id uniform draws in [0, 1) for one day of one named stream."""
    with np.errstate(over="ignore"):
        h = hash_ids(stream_key(seed, stream), day, ids)
    return (h >> _S11).astype(np.float64) * _INV53
