"""Counter-based Gaussian noise.

Every normal variate is a pure function of a 64-bit path key, a step counter
and a component index, so a path's Brownian increments do not depend on how
paths are batched, chunked or scheduled across threads.

Hashing uses the SplitMix64 finalizer; keys are derived from the base seed
by running the SplitMix64 sequence, a bijection of the path index. Normals
come from Box-Muller on pairs of hashed uniforms.
"""
import numba
import numpy as np

_GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_MASK64 = (1 << 64) - 1
_TWO_PI = 2.0 * np.pi
_INV_2_53 = 1.0 / 9007199254740992.0


@numba.njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True, inline="always")
def _uniform(key, c):
    h = _mix((c + np.uint64(1)) * np.uint64(_GAMMA))
    z = _mix(key ^ h)
    return (np.float64(z >> np.uint64(11)) + 0.5) * _INV_2_53


@numba.njit(cache=True)
def _keys(base, idx):
    out = np.empty(idx.shape[0], dtype=np.uint64)
    b = _mix(np.uint64(base))
    for i in range(idx.shape[0]):
        out[i] = _mix(b + (idx[i] + np.uint64(1)) * np.uint64(_GAMMA))
    return out


@numba.njit(cache=True)
def _uniforms(keys, counter, width):
    n = keys.shape[0]
    out = np.empty((n, width))
    base = np.uint64(counter) * np.uint64(width)
    for i in range(n):
        for j in range(width):
            out[i, j] = _uniform(keys[i], base + np.uint64(j))
    return out


@numba.njit(cache=True)
def _normals(keys, counter, width):
    n = keys.shape[0]
    npairs = (width + 1) // 2
    out = np.empty((n, width))
    base = np.uint64(counter) * np.uint64(2 * npairs)
    for i in range(n):
        k = keys[i]
        for p in range(npairs):
            u1 = _uniform(k, base + np.uint64(2 * p))
            u2 = _uniform(k, base + np.uint64(2 * p + 1))
            rad = np.sqrt(-2.0 * np.log(u1))
            ang = _TWO_PI * u2
            out[i, 2 * p] = rad * np.cos(ang)
            if 2 * p + 1 < width:
                out[i, 2 * p + 1] = rad * np.sin(ang)
    return out


def path_keys(base_seed, index):
    """Per-path 64-bit keys derived from ``(base_seed, index)``.

    Parameters
    ----------
    base_seed : int
        Any integer; reduced modulo 2**64.
    index : array_like of int
        Path indices.

    Returns
    -------
    keys : ndarray of uint64
    """
    idx = np.ascontiguousarray(np.atleast_1d(index), dtype=np.uint64)
    return _keys(np.uint64(int(base_seed) & _MASK64), idx)


def derive_seed(base_seed, *labels):
    """Fold integer labels into a new 64-bit seed (e.g. one per iteration)."""
    s = int(base_seed) & _MASK64
    for lab in labels:
        s = int(path_keys(s, [int(lab)])[0])
    return s


def uniforms(keys, counter, width):
    """Uniforms in (0, 1), shape ``(len(keys), width)``.

    Entry ``[i, j]`` depends only on ``keys[i]`` and ``counter * width + j``.
    """
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    return _uniforms(keys, int(counter), int(width))


def normals(keys, counter, width):
    """Standard normals, shape ``(len(keys), width)``; row ``i`` depends only on ``(keys[i], counter)``."""
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    return _normals(keys, int(counter), int(width))
