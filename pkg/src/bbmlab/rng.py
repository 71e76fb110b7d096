"""Counter-based random numbers.

Every draw is a pure function of a 64-bit stream key and a counter,
``mix(key ^ mix(counter + SALT))`` with the splitmix64 finalizer as mix.
Particles own a key; children get keys hashed from the parent key and
the parent's counter at the birth event. A subtree's realization thus
depends only on its lineage, never on traversal order or on which other
subtrees were pruned.

Replication i of master seed S uses root key ``replication_key(S, i)``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

SALT_DRAW = np.uint64(0x243F6A8885A308D3)
SALT_LEFT = np.uint64(0x13198A2E03707344)
SALT_RIGHT = np.uint64(0xA4093822299F31D0)
SALT_TYPE2 = np.uint64(0x082EFA98EC4E6C89)
SALT_REP = np.uint64(0x452821E638D01377)

_MASK = (1 << 64) - 1


@njit(cache=True, inline="always")
def mix64(z):
    z = z + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, inline="always")
def draw_bits(key, ctr):
    return mix64(key ^ mix64(ctr + SALT_DRAW))


@njit(cache=True, inline="always")
def uniform(key, ctr):
    """Uniform on the open interval (0, 1)."""
    return (np.float64(draw_bits(key, ctr) >> _S11) + 0.5) * _INV53


@njit(cache=True, inline="always")
def gauss(key, ctr):
    """Standard normal from counters ctr and ctr+1 (Box-Muller, cosine branch)."""
    u1 = uniform(key, ctr)
    u2 = uniform(key, ctr + np.uint64(1))
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@njit(cache=True, inline="always")
def child_key(key, ctr, salt):
    return mix64(key ^ mix64(ctr ^ salt))


def _mix_py(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def replication_key(master_seed: int, index: int) -> int:
    """Root stream key of replication ``index``; a documented counter hash."""
    s = int(master_seed) & _MASK
    return _mix_py(s ^ _mix_py((int(index) + int(SALT_REP)) & _MASK))


def uniforms(key: int, n: int, start: int = 0) -> np.ndarray:
    """n consecutive uniforms of stream ``key``; numpy-side helper."""
    return _uniform_block(np.uint64(key), np.uint64(start), n)


def normals(key: int, n: int, start: int = 0) -> np.ndarray:
    return _gauss_block(np.uint64(key), np.uint64(start), n)


@njit(cache=True)
def _uniform_block(key, start, n):
    out = np.empty(n)
    for i in range(n):
        out[i] = uniform(key, start + np.uint64(i))
    return out


@njit(cache=True)
def _gauss_block(key, start, n):
    out = np.empty(n)
    for i in range(n):
        out[i] = gauss(key, start + np.uint64(2 * i))
    return out
