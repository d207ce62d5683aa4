"""Counter-based Gaussian variates: Philox4x32-10 feeding a ziggurat sampler.

Every variate is a pure function of ``(seed, stream, n, j)``: the 64-bit seed
is the Philox key, and the counter words are ``(j >> 2, n, stream, attempt)``.
The four cells ``4i .. 4i + 3`` share one Philox block for the fast path, one
32-bit word each; the rare ziggurat rejections draw fresh blocks whose fourth
counter word encodes the attempt number and the lane ``j & 3``, so no two
cells ever consume the same random bits.

The ziggurat uses Doornik's ZIGNOR layout with 256 strips. A fast-path draw
reads the top 24 bits of its word as a signed uniform on ``[-1, 1)`` and the
low 8 bits as the strip index.
"""

import math

import numba as nb
import numpy as np

__all__ = ["philox4x32", "split_seed", "normal_row", "normal_at", "normals", "row_scratch", "normal_blocks"]

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)


@nb.njit(inline="always", cache=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32 with 10 rounds. All words are uint64 holding 32-bit values."""
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            ((p1 >> _S32) ^ c1 ^ k0) & _MASK32,
            p1 & _MASK32,
            ((p0 >> _S32) ^ c3 ^ k1) & _MASK32,
            p0 & _MASK32,
        )
        k0 = (k0 + _W0) & _MASK32
        k1 = (k1 + _W1) & _MASK32
    return c0, c1, c2, c3


_STRIPS = 256
_ZTAIL = 3.6541528853610088
_ZAREA = 4.92867323399e-3


def _zignor_tables(strips=_STRIPS, r=_ZTAIL, v=_ZAREA):
    x = np.zeros(strips + 1)
    f = math.exp(-0.5 * r * r)
    x[0] = v / f
    x[1] = r
    for i in range(2, strips):
        x[i] = math.sqrt(-2.0 * math.log(v / x[i - 1] + f))
        f = math.exp(-0.5 * x[i] * x[i])
    return x, x[1:] / x[:-1], np.exp(-0.5 * x * x)


_ZX, _ZR, _ZF = _zignor_tables()
_IDX = np.uint32(_STRIPS - 1)
_TWO_M21 = 2.0**-21
_TWO_M23 = 2.0**-23
_TWO_M31 = 2.0**-31
_TWO_M53 = 2.0**-53


def split_seed(seed):
    """Return the Philox key words ``(k0, k1)`` for a 64-bit seed."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
    return np.uint64(seed & 0xFFFFFFFF), np.uint64(seed >> 32)


@nb.njit(inline="always", cache=True)
def _signed_unit(a, b):
    # a, b hold 32-bit words; result in [-1, 1) with 52 significant bits
    return (np.float64(np.int32(np.uint32(a))) + np.float64(np.int32(np.uint32(b) >> np.uint32(11))) * _TWO_M21) * _TWO_M31


@nb.njit(inline="always", cache=True)
def _open_unit(a, b):
    # uniform on (0, 1]
    m = ((np.int64(a) << 21) ^ np.int64(b >> np.uint64(11))) & ((np.int64(1) << 53) - 1)
    return 1.0 - m * _TWO_M53


@nb.njit(inline="always", cache=True)
def _strip(b):
    return np.int64(np.uint32(b) & _IDX)


@nb.njit(inline="always", cache=True)
def _fast_unit(w):
    # top 24 bits of the word as a signed uniform on [-1, 1)
    return np.float64(np.int32(np.uint32(w)) >> np.int32(8)) * _TWO_M23


@nb.njit(cache=True)
def _zig_slow(u, i, c0, c1, c2, lane, k0, k1):
    att = 1
    while True:
        if i == 0:
            while True:
                y0, y1, y2, y3 = philox4x32(c0, c1, c2, np.uint64(4 * att + lane), k0, k1)
                att += 1
                a = -math.log(_open_unit(y0, y1)) / _ZTAIL
                b = -math.log(_open_unit(y2, y3))
                if 2.0 * b >= a * a:
                    return -(_ZTAIL + a) if u < 0.0 else _ZTAIL + a
        x = u * _ZX[i]
        y0, y1, y2, y3 = philox4x32(c0, c1, c2, np.uint64(4 * att + lane), k0, k1)
        att += 1
        # wedge: accept when a uniform point under the strip lies below the density
        if _ZF[i + 1] + (1.0 - _open_unit(y0, y1)) * (_ZF[i] - _ZF[i + 1]) < math.exp(-0.5 * x * x):
            return x
        u = _signed_unit(y2, y3)
        i = _strip(y3)
        if abs(u) < _ZR[i]:
            return u * _ZX[i]


@nb.njit(cache=True)
def normal_at(n, j, k0, k1, stream):
    """Standard normal variate attached to cell ``(n, j)``."""
    c0 = np.uint64(j >> 2)
    c1 = np.uint64(n)
    c2 = np.uint64(stream)
    w = philox4x32(c0, c1, c2, np.uint64(0), k0, k1)
    lane = j & 3
    word = w[0] if lane == 0 else (w[1] if lane == 1 else (w[2] if lane == 2 else w[3]))
    u = _fast_unit(word)
    i = _strip(word)
    if abs(u) < _ZR[i]:
        return u * _ZX[i]
    return _zig_slow(u, i, c0, c1, c2, lane, k0, k1)


@nb.njit(cache=True)
def row_scratch(ncell):
    """Scratch buffers ``(words, flags)`` for :func:`normal_row` and :func:`normal_blocks`."""
    m = 8 * ((ncell + 7) // 8)
    return np.empty(m, dtype=np.uint32), np.empty(m, dtype=np.uint8)


@nb.njit(cache=True)
def normal_blocks(z, words, flags, n, k0, k1, stream, b0, nblk, ncell):
    """Variates of cells ``4 b0 .. 4 (b0 + nblk) - 1`` of row ``n`` into ``z[0:4 nblk]``.

    Cells at or beyond ``ncell`` are not written. ``words`` and ``flags``
    come from :func:`row_scratch` sized for at least ``4 nblk`` cells. The
    Philox pass and the ziggurat fast path are branch-free; rejected cells
    are flagged and finished in a separate pass.
    """
    c1 = np.uint64(n)
    c2 = np.uint64(stream)
    zero = np.uint64(0)
    for b in range(nblk):
        w0, w1, w2, w3 = philox4x32(np.uint64(b0 + b), c1, c2, zero, k0, k1)
        words[4 * b] = np.uint32(w0)
        words[4 * b + 1] = np.uint32(w1)
        words[4 * b + 2] = np.uint32(w2)
        words[4 * b + 3] = np.uint32(w3)
    m = min(4 * nblk, ncell - 4 * b0)
    nrej = 0
    for i in range(m):
        w = words[i]
        x = _fast_unit(w)
        s = w & _IDX
        z[i] = x * _ZX[s]
        f = np.uint8(abs(x) >= _ZR[s])
        flags[i] = f
        nrej += f
    if nrej:
        # scan the flags eight at a time; rejections are about 1% of cells
        m8 = (m + 7) // 8
        flags[m:8 * m8] = 0
        packed = flags[:8 * m8].view(np.uint64)
        for q in range(m8):
            if packed[q]:
                for i in range(8 * q, 8 * q + 8):
                    if flags[i]:
                        w = words[i]
                        j = 4 * b0 + i
                        z[i] = _zig_slow(_fast_unit(w), _strip(w), np.uint64(j >> 2), c1, c2, j & 3, k0, k1)


@nb.njit(cache=True)
def normal_row(z, words, flags, n, k0, k1, stream):
    """Fill ``z[j]`` with the variate of cell ``(n, j)`` for every ``j``.

    ``words`` and ``flags`` come from :func:`row_scratch`.
    """
    ncell = z.shape[0]
    normal_blocks(z, words, flags, n, k0, k1, stream, 0, (ncell + 3) // 4, ncell)


@nb.njit(cache=True)
def _normals_at(n_idx, j_idx, k0, k1, stream, out):
    for i in range(n_idx.shape[0]):
        out[i] = normal_at(n_idx[i], j_idx[i], k0, k1, stream)


def normals(seed, stream, n_idx, j_idx):
    """Vectorised :func:`normal_at` over index arrays of equal shape."""
    n_idx = np.asarray(n_idx, dtype=np.int64)
    j_idx = np.asarray(j_idx, dtype=np.int64)
    n_flat, j_flat = np.broadcast_arrays(n_idx, j_idx)
    shape = n_flat.shape
    n_flat = np.ascontiguousarray(n_flat).ravel()
    j_flat = np.ascontiguousarray(j_flat).ravel()
    if n_flat.size and (n_flat.min() < 0 or j_flat.min() < 0):
        raise IndexError("noise indices must be non-negative")
    k0, k1 = split_seed(seed)
    out = np.empty(n_flat.size)
    _normals_at(n_flat, j_flat, k0, k1, int(stream), out)
    return out.reshape(shape)
