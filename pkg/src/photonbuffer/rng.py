"""Counter-based random numbers.

Every random decision in the simulator is a pure function of
``(master_seed, stream, item, sub-item, slot)``. Items are pulse indices (or
dark-count block indices), sub-items are photon ordinals inside a pulse and
slots are fixed positions for each decision a photon can take. Nothing is
carried between items, so any chunking or parallel schedule reproduces the
same numbers bit for bit.

The mixing function is the SplitMix64 finaliser. Scalar versions are numba
kernels (plain Python when numba is missing); ``*_np`` versions act on
``uint64`` arrays for the numpy path.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from ._accel import njit

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

GOLDEN = np.uint64(_GOLDEN)
M1 = np.uint64(_M1)
M2 = np.uint64(_M2)
S30 = np.uint64(30)
S27 = np.uint64(27)
S31 = np.uint64(31)
S11 = np.uint64(11)
ONE = np.uint64(1)
INV53 = 1.0 / 9007199254740992.0  # 2**-53


class Stream(IntEnum):
    SOURCE = 1
    LOOP = 2
    SPLITTER = 3
    DETECT_A = 4
    DETECT_B = 5
    DARK_A = 6
    DARK_B = 7


def mix64_int(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def stream_key(seed: int, stream: int) -> np.uint64:
    """Root key for one named stream under a master seed."""
    base = mix64_int(seed & MASK64)
    return np.uint64(mix64_int(base + (int(stream) + 1) * _GOLDEN))


@dataclass(frozen=True)
class RngStream:
    """Handle passed to the scalar operations: a seed plus a stream id."""

    seed: int
    stream: int

    @property
    def key(self) -> np.uint64:
        return stream_key(self.seed, self.stream)


# -- scalar kernels (numba) ---------------------------------------------------


@njit(cache=True, nogil=True)
def mix64(z):
    z = np.uint64(z)
    z = (z ^ (z >> S30)) * M1
    z = (z ^ (z >> S27)) * M2
    return z ^ (z >> S31)


@njit(cache=True, nogil=True)
def child_key(key, index):
    """Key of item ``index`` (non-negative int) under ``key``."""
    return mix64(np.uint64(key) ^ mix64((np.uint64(index) + ONE) * GOLDEN))


@njit(cache=True, nogil=True)
def uniform(key, slot):
    """Uniform double in [0, 1) for a fixed slot of a keyed item."""
    x = mix64(np.uint64(key) + (np.uint64(slot) + ONE) * GOLDEN)
    return np.float64(x >> S11) * INV53


@njit(cache=True, nogil=True)
def uniform_open(key, slot):
    """Uniform double in (0, 1]; safe for ``log``."""
    x = mix64(np.uint64(key) + (np.uint64(slot) + ONE) * GOLDEN)
    return (np.float64(x >> S11) + 1.0) * INV53


# -- array versions (numpy) ---------------------------------------------------


# uint64 wraparound is the point here, so overflow warnings are silenced


@np.errstate(over="ignore")
def mix64_np(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> S30)) * M1
    z = (z ^ (z >> S27)) * M2
    return z ^ (z >> S31)


@np.errstate(over="ignore")
def child_key_np(key, index: np.ndarray) -> np.ndarray:
    idx = np.asarray(index).astype(np.uint64)
    return mix64_np(np.asarray(key, dtype=np.uint64) ^ mix64_np((idx + ONE) * GOLDEN))


@np.errstate(over="ignore")
def _slot_hash(keys, slot):
    slot = np.asarray(slot).astype(np.uint64)
    return mix64_np(np.asarray(keys, dtype=np.uint64) + (slot + ONE) * GOLDEN)


def uniform_np(keys: np.ndarray, slot) -> np.ndarray:
    return (_slot_hash(keys, slot) >> S11).astype(np.float64) * INV53


def uniform_open_np(keys: np.ndarray, slot) -> np.ndarray:
    return ((_slot_hash(keys, slot) >> S11).astype(np.float64) + 1.0) * INV53
