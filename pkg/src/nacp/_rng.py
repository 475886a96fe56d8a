"""Counter-based deterministic random streams.

Every draw is a pure function of ``(seed, stream, coordinates)``: the value at
a given coordinate never depends on how many other values were drawn, in what
order, or on how work is partitioned across workers.  The generator is a
splitmix64-style bit mixer applied to the hashed coordinate tuple.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1
_INV53 = 2.0**-53


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def counter_hash(seed: int, *coords) -> np.ndarray:
    """Hash (seed, coords...) to uint64.  Coordinate arrays broadcast."""
    with np.errstate(over="ignore"):
        h = _mix(np.asarray(np.uint64(int(seed) & _MASK64)) ^ _GOLDEN)
        for c in coords:
            arr = np.asarray(c)
            if arr.dtype != np.uint64:
                arr = arr.astype(np.int64).astype(np.uint64)
            h = _mix((h + _GOLDEN) ^ arr)
    return h


def uniforms(seed: int, *coords) -> np.ndarray:
    """Uniform draws in [0, 1), one per broadcast coordinate."""
    return (counter_hash(seed, *coords) >> np.uint64(11)).astype(np.float64) * _INV53


def uniforms_open(seed: int, *coords) -> np.ndarray:
    """Uniform draws in (0, 1]; safe as log() input."""
    h = (counter_hash(seed, *coords) >> np.uint64(11)) + np.uint64(1)
    return h.astype(np.float64) * _INV53


def normals(seed: int, stream: int, *coords) -> np.ndarray:
    """Standard normal draws via Box-Muller on two sub-streams."""
    u1 = uniforms_open(seed, stream, 0, *coords)
    u2 = uniforms(seed, stream, 1, *coords)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
