"""Deterministic seed derivation and counter-style uniform draws.

Every random decision in the package flows from a root seed through
sha256-based derivation, so results never depend on iteration order,
thread scheduling, or Python's per-process hash salt. Bulk per-id draws
use a splitmix64-style integer hash evaluated vectorized in numpy.
"""

from __future__ import annotations

import hashlib

import numpy as np

_C1 = np.uint64(0x9E3779B97F4A7C15)
_C2 = np.uint64(0xBF58476D1CE4E5B9)
_C3 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = float(2.0**-53)


def derive_seed(*parts) -> int:
    """Mix ints/strings into a stable 64-bit seed (sha256-based)."""
    h = hashlib.sha256()
    for part in parts:
        h.update(f"{type(part).__name__}:{part}|".encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")


def derive_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))


def _splitmix(x: np.ndarray) -> np.ndarray:
    # uint64 arithmetic wraps, which is exactly what the mixer needs
    z = x + _C1
    z = (z ^ (z >> np.uint64(30))) * _C2
    z = (z ^ (z >> np.uint64(27))) * _C3
    return z ^ (z >> np.uint64(31))


def hash_uniforms(seed: int, ids, stream: int = 0) -> np.ndarray:
    """One Uniform[0,1) draw per id from hash(seed, id, stream).

    Order-invariant: the draw for an id is the same regardless of where
    the id sits in the array or whether other ids are present.
    """
    ids = np.asarray(ids, dtype=np.uint64)
    offset = np.uint64((stream * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF)
    state = ids * _C3
    state = state ^ np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    state = _splitmix(state) + offset
    return (_splitmix(state) >> np.uint64(11)).astype(np.float64) * _INV_2_53


def hash_uniform_matrix(seed: int, ids, n_cols: int, stream: int = 0) -> np.ndarray:
    """Uniform[0,1) grid keyed by (seed, id, column, stream)."""
    ids = np.asarray(ids, dtype=np.uint64)
    cols = np.arange(n_cols, dtype=np.uint64)
    offset = np.uint64(stream & 0xFFFFFFFFFFFFFFFF)
    state = ids[:, None] * _C3 + _splitmix(cols * _C2 + offset)[None, :]
    state = state ^ np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    return (_splitmix(state) >> np.uint64(11)).astype(np.float64) * _INV_2_53
