"""
From sifted bits to a secret key
================================

Bob's sifted bits differ from Alice's at the QBER.  Alice discloses the
syndrome of her block under a sparse parity-check code; Bob runs belief
propagation to find the error pattern.  What leaked (syndrome bits) is
then squeezed out by a random Toeplitz hash.
"""

import time

import numpy as np

from qkdtime import generate_code, syndrome, toeplitz_hash, toeplitz_hash_ntt
from qkdtime.decoy import binary_entropy
from qkdtime.ldpc import decode_many, reconciliation_efficiency
from qkdtime.privacy import ToeplitzSeed

rng = np.random.default_rng(1)

# %%
# A rate-adapted code for 3.5% QBER at efficiency 1.2.  Building a
# 10^4-bit code by progressive edge growth takes a few seconds.
t0 = time.perf_counter()
code = generate_code(10**4, 0.035, f=1.2, seed=0)
print(f"code: n={code.n}, m={code.m} checks, rate {code.rate:.3f}, built in {time.perf_counter() - t0:.1f} s")
print(f"efficiency at 3.5%: {reconciliation_efficiency(code, 0.035):.3f}  "
      f"(Shannon minimum {code.n * binary_entropy(0.035):.0f} bits)")

# %%
# Forty blocks at three error rates.
for qber in (0.02, 0.035, 0.04):
    alice = rng.integers(0, 2, (40, code.n), dtype=np.uint8)
    bob = alice ^ (rng.random(alice.shape) < qber).astype(np.uint8)
    t0 = time.perf_counter()
    results = decode_many(code, bob, [syndrome(code, a) for a in alice], qber)
    ok = sum(r.success for r in results)
    iters = np.mean([r.iterations_used for r in results])
    print(f"QBER {qber:.3f}: {ok}/40 blocks corrected, mean {iters:.1f} iterations, "
          f"{(time.perf_counter() - t0) / 40 * 1e3:.0f} ms per block")

# %%
# Privacy amplification: hash a corrected block down by the leaked
# syndrome plus a margin.  The NTT path computes the same product as the
# bit-packed dense one; at this length the dense path is still quicker,
# and the transform only pays off for keys of several times 10^4 bits.
key = alice[0]
n_out = code.n - code.m - 500
seed = ToeplitzSeed.random(code.n, n_out, rng)
t0 = time.perf_counter()
slow = toeplitz_hash(seed, key)
t1 = time.perf_counter()
fast = toeplitz_hash_ntt(seed, key)
t2 = time.perf_counter()
print(f"\nToeplitz {code.n} -> {n_out} bits: naive {1e3 * (t1 - t0):.1f} ms, NTT {1e3 * (t2 - t1):.1f} ms, "
      f"identical={np.array_equal(slow, fast)}")
print(f"first 64 secret bits: {''.join(map(str, fast[:64]))}")
print(f"compression {n_out / code.n:.3f}; {code.m} syndrome bits and a 500-bit margin removed")
