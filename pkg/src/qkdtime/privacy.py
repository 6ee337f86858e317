"""Toeplitz-hash privacy amplification.

The Toeplitz matrix is read from a seed of ``n_in + n_out - 1`` bits as
``T[i][j] = seed[i + n_in - 1 - j]``.  With this convention output bit ``i``
is coefficient ``i + n_in - 1`` of the polynomial product ``seed * input``,
which the fast path evaluates with a number-theoretic transform modulo
998244353 and then reduces mod 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .decoy import DecoyEstimates, binary_entropy
from .errors import InvalidInputError

NTT_PRIME = 998_244_353  # 119 * 2**23 + 1
NTT_GENERATOR = 3
NTT_MAX_LOG2 = 23


@dataclass(frozen=True, eq=False)
class ToeplitzSeed:
    bits: np.ndarray
    n_in: int
    n_out: int

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        object.__setattr__(self, "bits", bits)
        if self.n_out < 0 or self.n_in < 0:
            raise InvalidInputError("hash dimensions must be non-negative")
        if self.n_out > self.n_in:
            raise InvalidInputError(f"n_out={self.n_out} exceeds n_in={self.n_in}")
        if len(bits) != max(self.n_in + self.n_out - 1, 0):
            raise InvalidInputError(
                f"seed needs n_in + n_out - 1 = {self.n_in + self.n_out - 1} bits, got {len(bits)}"
            )

    def __eq__(self, other):
        if not isinstance(other, ToeplitzSeed):
            return NotImplemented
        return (self.n_in, self.n_out) == (other.n_in, other.n_out) and np.array_equal(self.bits, other.bits)

    @classmethod
    def random(cls, n_in: int, n_out: int, rng: np.random.Generator) -> "ToeplitzSeed":
        return cls(rng.integers(0, 2, max(n_in + n_out - 1, 0), dtype=np.uint8), n_in, n_out)

    def matrix(self) -> np.ndarray:
        """Dense ``n_out x n_in`` matrix; only for small dimensions."""
        i = np.arange(self.n_out)[:, None]
        j = np.arange(self.n_in)[None, :]
        return self.bits[i + self.n_in - 1 - j] if self.n_out else np.zeros((0, self.n_in), np.uint8)


@dataclass(frozen=True, eq=False)
class SecretKey:
    bits: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def length(self) -> int:
        return len(self.bits)


def _check_input(seed: ToeplitzSeed, data) -> np.ndarray:
    data = np.asarray(data, dtype=np.uint8)
    if data.shape != (seed.n_in,):
        raise InvalidInputError(f"input has {data.size} bits, hash expects {seed.n_in}")
    return data


def _to_int(bits: np.ndarray) -> int:
    return int.from_bytes(np.packbits(bits, bitorder="little").tobytes(), "little")


def toeplitz_hash(seed: ToeplitzSeed, data) -> np.ndarray:
    """Direct GF(2) matrix-vector product, one output row at a time."""
    data = _check_input(seed, data)
    if seed.n_out == 0:
        return np.zeros(0, dtype=np.uint8)
    s = _to_int(seed.bits)
    # bit k of x is data[n_in - 1 - k], so row i is popcount((s >> i) & x) mod 2
    x = _to_int(data[::-1])
    out = np.fromiter(((((s >> i) & x).bit_count()) & 1 for i in range(seed.n_out)), dtype=np.uint8,
                      count=seed.n_out)
    return out


_root_cache: dict[tuple[int, bool], np.ndarray] = {}


def _roots(n: int, inverse: bool = False) -> np.ndarray:
    """``w^k mod p`` for ``k < n/2``, ``w`` a primitive ``n``-th root of unity (or its inverse)."""
    key = (n, inverse)
    if key not in _root_cache:
        w = pow(NTT_GENERATOR, (NTT_PRIME - 1) // n, NTT_PRIME)
        if inverse:
            w = pow(w, NTT_PRIME - 2, NTT_PRIME)
        roots = np.ones(1, dtype=np.int64)
        while len(roots) < n // 2:
            step = pow(w, len(roots), NTT_PRIME)
            roots = np.concatenate([roots, roots * step % NTT_PRIME])
        _root_cache[key] = roots
    return _root_cache[key]


_rev_cache: dict[int, np.ndarray] = {}


def _bit_reverse(n: int) -> np.ndarray:
    if n not in _rev_cache:
        bits = n.bit_length() - 1
        idx = np.arange(n)
        rev = np.zeros(n, dtype=np.int64)
        for b in range(bits):
            rev |= ((idx >> b) & 1) << (bits - 1 - b)
        _rev_cache[n] = rev
    return _rev_cache[n]


def ntt(a: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Iterative radix-2 transform over Z/pZ; ``len(a)`` must be a power of two."""
    n = len(a)
    if n & (n - 1) or n > 1 << NTT_MAX_LOG2:
        raise InvalidInputError(f"NTT length must be a power of two <= 2^{NTT_MAX_LOG2}, got {n}")
    a = np.asarray(a, dtype=np.int64)[_bit_reverse(n)] % NTT_PRIME
    roots = _roots(n, inverse)
    out = np.empty_like(a)
    length = 2
    while length <= n:
        half = length // 2
        tw = roots[:: n // length][:half]
        blocks = a.reshape(-1, length)
        u = blocks[:, :half]
        v = blocks[:, half:] * tw
        v %= NTT_PRIME
        dst = out.reshape(-1, length)
        np.add(u, v, out=dst[:, :half])
        np.subtract(u, v, out=dst[:, half:])
        dst[:, half:] += NTT_PRIME
        # both halves now lie in [0, 2p); one conditional subtraction suffices
        out[out >= NTT_PRIME] -= NTT_PRIME
        a, out = out, a
        length *= 2
    if inverse:
        a = a * pow(n, NTT_PRIME - 2, NTT_PRIME) % NTT_PRIME
    return a


def _cyclic(a, b, n: int) -> np.ndarray:
    fa = ntt(np.pad(np.asarray(a, np.int64), (0, n - len(a))))
    fb = ntt(np.pad(np.asarray(b, np.int64), (0, n - len(b))))
    return ntt(fa * fb % NTT_PRIME, inverse=True)


def convolve_mod(a, b) -> np.ndarray:
    """Exact integer linear convolution for non-negative inputs whose result stays below p."""
    size = len(a) + len(b) - 1
    if size <= 0:
        return np.zeros(0, dtype=np.int64)
    n = 1 << max(size - 1, 0).bit_length()
    return _cyclic(a, b, n)[:size]


def toeplitz_hash_ntt(seed: ToeplitzSeed, data) -> np.ndarray:
    """Same output as :func:`toeplitz_hash`, computed by NTT convolution."""
    data = _check_input(seed, data)
    if seed.n_out == 0:
        return np.zeros(0, dtype=np.uint8)
    # Only coefficients n_in-1 .. n_in+n_out-2 are needed.  A cyclic
    # convolution of length >= len(seed) folds the upper tail onto indices
    # below n_in-1, so it leaves the wanted window intact.  Each coefficient
    # is at most n_in < p.
    size = len(seed.bits)
    n = 1 << max(size - 1, 0).bit_length()
    conv = _cyclic(seed.bits, data, n)
    return (conv[seed.n_in - 1: seed.n_in - 1 + seed.n_out] & 1).astype(np.uint8)


def final_key_length(
    n_corrected: int,
    estimates: DecoyEstimates,
    leakage_total: int,
    s_margin: int = 0,
) -> int:
    """``floor(n (Q1_L/Q_mu)(1 - H2(e1_U)) - leakage - s_margin)``, floored at 0.

    ``n_corrected`` counts error-corrected signal-class bits; ``leakage_total``
    the bits disclosed during reconciliation and verification.
    """
    if estimates.q_mu <= 0 or estimates.y1_l <= 0 or n_corrected <= 0:
        return 0
    single_photon_share = estimates.q1_l / estimates.q_mu
    value = n_corrected * single_photon_share * (1 - binary_entropy(estimates.e1_u)) - leakage_total - s_margin
    return max(0, math.floor(value))


def amplify(key_bits, n_out: int, rng: np.random.Generator) -> tuple[ToeplitzSeed, SecretKey]:
    """Draw a public seed and compress ``key_bits`` to ``n_out`` bits."""
    key_bits = np.asarray(key_bits, dtype=np.uint8)
    n_out = min(n_out, len(key_bits))
    seed = ToeplitzSeed.random(len(key_bits), n_out, rng)
    return seed, SecretKey(toeplitz_hash_ntt(seed, key_bits), {"n_in": len(key_bits)})
