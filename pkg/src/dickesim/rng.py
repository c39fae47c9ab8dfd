"""Counter-based random numbers (Philox4x32-10).

Every random number used by the solvers is a pure function of
``(seed, counter)``, where the counter is built from
(trajectory index, step index, lane, channel tag). Trajectories can therefore
run in any order, on any number of workers, and still draw identical streams.
"""
from __future__ import annotations

import hashlib
import math
import struct

import numba as nb
import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

# channel tags (counter word 3)
TAG_SPIN_INIT = 0
TAG_MODE_INIT = 1
TAG_SPIN_NOISE = 2
TAG_COLLECTIVE_NOISE = 3
TAG_LYAPUNOV = 4

#: lane used for per-trajectory (not per-spin) draws
LANE_GLOBAL = 0xFFFFFFFF

_INV_2_32 = 1.0 / 4294967296.0


@nb.njit(cache=True, nogil=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten-round Philox 4x32 block. Inputs and outputs are uint32 values held in uint64."""
    c0 = np.uint64(c0) & _MASK32
    c1 = np.uint64(c1) & _MASK32
    c2 = np.uint64(c2) & _MASK32
    c3 = np.uint64(c3) & _MASK32
    k0 = np.uint64(k0) & _MASK32
    k1 = np.uint64(k1) & _MASK32
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _SHIFT32
        lo0 = p0 & _MASK32
        hi1 = p1 >> _SHIFT32
        lo1 = p1 & _MASK32
        c0 = (hi1 ^ c1 ^ k0) & _MASK32
        c1 = lo1
        c2 = (hi0 ^ c3 ^ k1) & _MASK32
        c3 = lo0
        k0 = (k0 + _W0) & _MASK32
        k1 = (k1 + _W1) & _MASK32
    return c0, c1, c2, c3


@nb.njit(cache=True, nogil=True)
def _u01(word):
    # open interval (0, 1)
    return (np.float64(word) + 0.5) * _INV_2_32


@nb.njit(cache=True, nogil=True)
def normal4(c0, c1, c2, c3, k0, k1):
    """Four independent standard normals from one Philox block (Box-Muller)."""
    r0, r1, r2, r3 = philox4x32(c0, c1, c2, c3, k0, k1)
    a = math.sqrt(-2.0 * math.log(_u01(r0)))
    b = 2.0 * math.pi * _u01(r1)
    c = math.sqrt(-2.0 * math.log(_u01(r2)))
    d = 2.0 * math.pi * _u01(r3)
    return a * math.cos(b), a * math.sin(b), c * math.cos(d), c * math.sin(d)


def split_seed(seed: int) -> tuple[int, int]:
    """64-bit seed -> Philox key words."""
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return seed & 0xFFFFFFFF, seed >> 32


def derive_seed(master: int, *labels) -> int:
    """Stable 64-bit child seed from a master seed and any hashable labels.

    Uses BLAKE2b over a canonical text encoding, so the mapping does not
    depend on the Python process or platform.
    """
    text = repr((int(master),) + tuple(labels)).encode()
    digest = hashlib.blake2b(text, digest_size=8).digest()
    return struct.unpack("<Q", digest)[0]


def fresh_seed() -> int:
    """A new 64-bit seed from OS entropy (used only when a config omits one)."""
    return int.from_bytes(np.random.SeedSequence().generate_state(2, np.uint32).tobytes(), "little")


def normals(seed: int, c0: int, c1: int, c2: int, tag: int) -> np.ndarray:
    """Python-level access to one block of four normals."""
    k0, k1 = split_seed(seed)
    return np.array(normal4(c0, c1, c2, tag, k0, k1))


@nb.njit(cache=True, nogil=True)
def mode_disorder_normals(index, k0, k1):
    """Normals for (Re alpha, Im alpha, B, delta shift) of ensemble member ``index``.

    Shared by every solver so that member ``i`` sees the same quasi-static
    draw in mean-field, TWA and exact runs with the same seed.
    """
    return normal4(index, 0, LANE_GLOBAL, TAG_MODE_INIT, k0, k1)
