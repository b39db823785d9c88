"""Counter-based normals: Threefry-2x32 (20 rounds) keyed by the seed, counter = (path, block).

Each counter yields two uniforms and hence, by Box-Muller, the normals for
steps ``2k`` and ``2k + 1`` of one path.  Any path can be regenerated alone.
"""

import math

import numpy as np
from numba import njit

_M32 = np.uint64(0xFFFFFFFF)
_PARITY = np.uint64(0x1BD11BDA)


@njit(inline="always", cache=True)
def _mix(x0, x1, r):
    x0 = (x0 + x1) & _M32
    x1 = ((x1 << np.uint64(r)) | (x1 >> np.uint64(32 - r))) & _M32
    return x0, x1 ^ x0


@njit(inline="always", cache=True)
def _four(x0, x1, r0, r1, r2, r3, ka, kb, inj):
    x0, x1 = _mix(x0, x1, r0)
    x0, x1 = _mix(x0, x1, r1)
    x0, x1 = _mix(x0, x1, r2)
    x0, x1 = _mix(x0, x1, r3)
    return (x0 + ka) & _M32, (x1 + kb + np.uint64(inj)) & _M32


@njit(cache=True)
def threefry2x32(k0, k1, c0, c1):
    """Threefry-2x32-20 block function; inputs and outputs are 32-bit words."""
    k0 = np.uint64(k0) & _M32
    k1 = np.uint64(k1) & _M32
    k2 = k0 ^ k1 ^ _PARITY
    x0 = (np.uint64(c0) + k0) & _M32
    x1 = (np.uint64(c1) + k1) & _M32
    x0, x1 = _four(x0, x1, 13, 15, 26, 6, k1, k2, 1)
    x0, x1 = _four(x0, x1, 17, 29, 16, 24, k2, k0, 2)
    x0, x1 = _four(x0, x1, 13, 15, 26, 6, k0, k1, 3)
    x0, x1 = _four(x0, x1, 17, 29, 16, 24, k1, k2, 4)
    x0, x1 = _four(x0, x1, 13, 15, 26, 6, k2, k0, 5)
    return np.uint32(x0), np.uint32(x1)


@njit(cache=True)
def seed_key(seed):
    s = np.uint64(seed)
    return s & _M32, s >> np.uint64(32)


@njit(cache=True)
def normal_pair(k0, k1, path, block):
    """Two independent standard normals for ``(path, block)``."""
    a, b = threefry2x32(k0, k1, np.uint64(path), np.uint64(block))
    u1 = (np.float64(a) + 0.5) * 2.3283064365386963e-10
    u2 = (np.float64(b) + 0.5) * 2.3283064365386963e-10
    rad = math.sqrt(-2.0 * math.log(u1))
    ang = 2.0 * math.pi * u2
    return rad * math.cos(ang), rad * math.sin(ang)


@njit(cache=True)
def _fill_normals(seed, path, n, out):
    k0, k1 = seed_key(seed)
    for i in range(0, n, 2):
        z0, z1 = normal_pair(k0, k1, path, i >> 1)
        out[i] = z0
        if i + 1 < n:
            out[i + 1] = z1


def path_normals(seed: int, path: int, n: int) -> np.ndarray:
    """The first ``n`` step normals of ``path`` (same values the simulation kernels draw)."""
    out = np.empty(n)
    _fill_normals(np.uint64(seed), path, n, out)
    return out
