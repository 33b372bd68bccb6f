"""Counter-based random number generation (Philox4x32-10).

All stochastic code in this package draws from Philox4x32-10 streams keyed by
(seed, stream). A stream is addressed purely by its 64-bit index, so replica k
of an experiment always consumes stream k regardless of scheduling, and any
position in a stream can be reached by setting the block counter (jump-ahead).
The same compiled routines are used from Python orchestration code and from
numba kernels, so both sides see bit-identical draws.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# Philox4x32 multipliers and Weyl key increments (Salmon et al. round constants).
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)

# State vector layout (uint64[8]):
#   0: seed (key), 1: stream, 2: next block counter, 3: position in buffer (0..4),
#   4..7: buffered 32-bit outputs of the current block.
STATE_SIZE = 8


@njit(cache=True, nogil=True)
def _philox_fill(st):
    """Run 10 Philox rounds on counter (block, stream) and refill the buffer."""
    block = st[2]
    c0 = block & _MASK32
    c1 = block >> np.uint64(32)
    c2 = st[1] & _MASK32
    c3 = st[1] >> np.uint64(32)
    k0 = st[0] & _MASK32
    k1 = (st[0] >> np.uint64(32)) & _MASK32
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> np.uint64(32)
        lo0 = p0 & _MASK32
        hi1 = p1 >> np.uint64(32)
        lo1 = p1 & _MASK32
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
        k0 = (k0 + _W0) & _MASK32
        k1 = (k1 + _W1) & _MASK32
    st[4] = c0
    st[5] = c1
    st[6] = c2
    st[7] = c3
    st[2] = block + np.uint64(1)
    st[3] = np.uint64(0)


@njit(cache=True, nogil=True)
def make_state(seed, stream):
    st = np.empty(STATE_SIZE, dtype=np.uint64)
    st[0] = seed
    st[1] = stream
    st[2] = np.uint64(0)
    st[3] = np.uint64(4)  # empty buffer
    for i in range(4, 8):
        st[i] = np.uint64(0)
    return st


@njit(cache=True, nogil=True)
def next_u32(st):
    if st[3] >= np.uint64(4):
        _philox_fill(st)
    v = st[4 + st[3]]
    st[3] += np.uint64(1)
    return v


@njit(cache=True, nogil=True)
def next_double(st):
    """Uniform double in [0, 1) with 53 random bits."""
    a = next_u32(st) >> np.uint64(5)   # 27 bits
    b = next_u32(st) >> np.uint64(6)   # 26 bits
    return (a * 67108864.0 + b) * (1.0 / 9007199254740992.0)


@njit(cache=True, nogil=True)
def randbelow(st, n):
    """Uniform integer in [0, n) without modulo bias (rejection sampling)."""
    span = np.uint64(4294967296)  # 2**32
    limit = (span // np.uint64(n)) * np.uint64(n)
    x = next_u32(st)
    while x >= limit:
        x = next_u32(st)
    return int(x % np.uint64(n))


@njit(cache=True, nogil=True)
def _poisson_small(st, lam):
    # Knuth product-of-uniforms; valid while exp(-lam) stays well above underflow.
    thresh = np.exp(-lam)
    k = 0
    p = 1.0
    while True:
        p *= next_double(st)
        if p <= thresh:
            return k
        k += 1


@njit(cache=True, nogil=True)
def poisson(st, lam):
    """Exact Poisson draw; large means split into independent summands."""
    if lam <= 0.0:
        return 0
    total = 0
    while lam > 30.0:
        total += _poisson_small(st, 30.0)
        lam -= 30.0
    return total + _poisson_small(st, lam)


@njit(cache=True, nogil=True)
def categorical_from_cdf(st, cdf):
    """Index i with probability (cdf[i]-cdf[i-1])/cdf[-1]; cdf need not be normalized."""
    u = next_double(st) * cdf[len(cdf) - 1]
    lo = 0
    hi = len(cdf) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cdf[mid] <= u:
            lo = mid + 1
        else:
            hi = mid
    return lo


class PhiloxStream:
    """Python-side handle on a single (seed, stream) Philox stream.

    Thin wrapper over the compiled routines; the underlying state array can be
    handed to numba kernels and continues the exact same draw sequence.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self.state = make_state(np.uint64(seed), np.uint64(stream))

    def u32(self) -> int:
        return int(next_u32(self.state))

    def uniform(self) -> float:
        return next_double(self.state)

    def integers(self, n: int) -> int:
        return randbelow(self.state, n)

    def poisson(self, lam: float) -> int:
        return poisson(self.state, lam)

    def categorical(self, cdf: np.ndarray) -> int:
        return int(categorical_from_cdf(self.state, cdf))

    def spawn(self, stream: int) -> "PhiloxStream":
        """Fresh stream with the same seed; draws are independent of this one."""
        return PhiloxStream(self.seed, stream)


def as_stream(rng, default_stream: int = 0) -> PhiloxStream:
    """Accept a PhiloxStream, an int seed, or a (seed, stream) pair."""
    if isinstance(rng, PhiloxStream):
        return rng
    if isinstance(rng, tuple):
        seed, stream = rng
        return PhiloxStream(seed, stream)
    return PhiloxStream(int(rng), default_stream)
