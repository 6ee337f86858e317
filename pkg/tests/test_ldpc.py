import itertools

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qkdtime.errors import InvalidBlockError, InvalidParameterError, InvalidRateError
from qkdtime.ldpc import (
    LdpcCode,
    decode,
    decode_many,
    generate_code,
    leakage_bits,
    reconciliation_efficiency,
    required_checks,
    syndrome,
)

TOY = LdpcCode(6, ((0, 1, 2), (2, 3, 4), (4, 5, 0)))


def h2_oracle(p):
    p = mp.mpf(p)
    return -p * mp.log(p, 2) - (1 - p) * mp.log(1 - p, 2)


@pytest.fixture(scope="module")
def small_code():
    return generate_code(2000, 0.035, 1.2, seed=3)


# ---------------------------------------------------------------- construction

def test_check_count_matches_entropy_oracle():
    mp.mp.dps = 30
    expected = int(mp.ceil(10**4 * mp.mpf("1.2") * h2_oracle("0.035")))
    assert expected == 2627
    assert required_checks(10**4, 0.035, 1.2) == 2627


def test_generated_code_structure(small_code):
    c = small_code
    assert c.n == 2000 and c.m == required_checks(2000, 0.035, 1.2)
    assert 0 < c.rate < 1
    assert c.column_weights.min() >= 2
    assert all(len(set(chk)) == len(chk) for chk in c.checks)
    assert c.construction_seed == 3


@pytest.mark.parametrize("n, profile", [(4000, None), (2000, {2: 0.3, 3: 0.7})])
def test_four_cycles_avoided_when_room_allows(n, profile):
    # at n=2000 the default profile's degree-14 columns leave no 4-cycle-free choice
    assert not generate_code(n, 0.035, 1.2, seed=3, profile=profile).has_four_cycle()


def test_generation_is_deterministic():
    a = generate_code(600, 0.05, 1.2, seed=11)
    b = generate_code(600, 0.05, 1.2, seed=11)
    assert a.checks == b.checks and a.code_id == b.code_id
    assert generate_code(600, 0.05, 1.2, seed=12).checks != a.checks


def test_generation_rejects_bad_parameters():
    with pytest.raises(InvalidParameterError):
        generate_code(5, 0.03)
    with pytest.raises(InvalidParameterError):
        generate_code(100, 0.2)
    with pytest.raises(InvalidParameterError):
        generate_code(100, 0.03, f=0.9)
    with pytest.raises(InvalidRateError):
        generate_code(10, 0.1, f=5.0)


def test_toy_code_is_valid():
    assert TOY.m == 3 and TOY.rate == 0.5
    with pytest.raises(InvalidParameterError):
        LdpcCode(6, ((0, 0, 1),))
    with pytest.raises(InvalidRateError):
        LdpcCode(2, ((0,), (1,)))


# ---------------------------------------------------------------- syndromes

def test_syndrome_examples():
    assert not syndrome(TOY, np.zeros(6)).bits.any()
    assert syndrome(TOY, [1, 0, 1, 0, 1, 0]).bits.tolist() == [0, 0, 0]
    for v in range(6):
        flip = np.zeros(6, np.uint8)
        flip[v] = 1
        changed = set(np.flatnonzero(syndrome(TOY, flip).bits))
        assert changed == {j for j, chk in enumerate(TOY.checks) if v in chk}
    with pytest.raises(InvalidBlockError):
        syndrome(TOY, np.zeros(7))


@settings(max_examples=50)
@given(st.lists(st.integers(0, 1), min_size=6, max_size=6), st.lists(st.integers(0, 1), min_size=6, max_size=6))
def test_syndrome_linearity(a, b):
    a, b = np.array(a, np.uint8), np.array(b, np.uint8)
    lhs = syndrome(TOY, a ^ b).bits
    assert np.array_equal(lhs, syndrome(TOY, a).bits ^ syndrome(TOY, b).bits)


def test_syndrome_linearity_large(small_code):
    rng = np.random.default_rng(0)
    a, b = rng.integers(0, 2, (2, small_code.n), dtype=np.uint8)
    assert np.array_equal(syndrome(small_code, a ^ b).bits, syndrome(small_code, a).bits ^ syndrome(small_code, b).bits)


# ---------------------------------------------------------------- decoding

def _coset_leaders(code):
    """Brute force over all 2^n patterns: syndrome -> list of minimum-weight patterns."""
    best = {}
    for bits in itertools.product((0, 1), repeat=code.n):
        e = np.array(bits, np.uint8)
        s = tuple(syndrome(code, e).bits)
        w = int(e.sum())
        if s not in best or w < best[s][0]:
            best[s] = (w, [e])
        elif w == best[s][0]:
            best[s][1].append(e)
    return best


def test_zero_errors_succeed_immediately():
    rng = np.random.default_rng(1)
    alice = rng.integers(0, 2, 6, dtype=np.uint8)
    r = decode(TOY, alice, syndrome(TOY, alice), 0.05)
    assert r.success and r.iterations_used == 0 and r.estimated_qber == 0
    np.testing.assert_array_equal(r.corrected_bits, alice)


def test_toy_decoder_matches_coset_leader_oracle():
    leaders = _coset_leaders(TOY)
    alice = np.array([1, 0, 1, 1, 0, 0], np.uint8)
    checked = 0
    for w in (1, 2):
        for pos in itertools.combinations(range(6), w):
            err = np.zeros(6, np.uint8)
            err[list(pos)] = 1
            weight, patterns = leaders[tuple(syndrome(TOY, err).bits)]
            if len(patterns) != 1:
                continue
            r = decode(TOY, alice ^ err, syndrome(TOY, alice), 0.1)
            if w == 1:
                assert r.success  # a single planted error is always its own unique leader here
            if r.success:
                found = r.corrected_bits ^ alice ^ err
                np.testing.assert_array_equal(found, patterns[0])
                checked += 1
    assert checked >= 6


def test_success_implies_exact_syndrome_match(small_code):
    rng = np.random.default_rng(2)
    alice = rng.integers(0, 2, (20, small_code.n), dtype=np.uint8)
    noisy = alice ^ (rng.random(alice.shape) < 0.03).astype(np.uint8)
    results = decode_many(small_code, noisy, [syndrome(small_code, a) for a in alice], 0.03)
    assert sum(r.success for r in results) >= 18
    for a, nb, r in zip(alice, noisy, results):
        assert r.iterations_used <= 100
        if r.success:
            assert np.array_equal(syndrome(small_code, r.corrected_bits).bits, syndrome(small_code, a).bits)
            np.testing.assert_array_equal(np.flatnonzero(r.corrected_bits ^ nb), r.flipped_positions)
            assert r.estimated_qber == len(r.flipped_positions) / small_code.n
        else:
            assert r.corrected_bits is None


def test_failure_is_a_flag_not_an_exception(small_code):
    rng = np.random.default_rng(3)
    alice = rng.integers(0, 2, small_code.n, dtype=np.uint8)
    noisy = alice ^ (rng.random(small_code.n) < 0.2).astype(np.uint8)
    r = decode(small_code, noisy, syndrome(small_code, alice), 0.035, max_iterations=5)
    assert not r.success and r.iterations_used == 5


def test_decoder_argument_checks():
    with pytest.raises(InvalidBlockError):
        decode(TOY, np.zeros(5), syndrome(TOY, np.zeros(6)), 0.1)
    with pytest.raises(InvalidParameterError):
        decode(TOY, np.zeros(6), syndrome(TOY, np.zeros(6)), 0.0)
    with pytest.raises(InvalidParameterError):
        decode(TOY, np.zeros(6), syndrome(TOY, np.zeros(6)), 0.1, max_iterations=0)


def test_success_rate_non_increasing_in_qber(small_code):
    rng = np.random.default_rng(4)
    rates = []
    for p in (0.01, 0.035, 0.06):
        alice = rng.integers(0, 2, (100, small_code.n), dtype=np.uint8)
        noisy = alice ^ (rng.random(alice.shape) < p).astype(np.uint8)
        res = decode_many(small_code, noisy, [syndrome(small_code, a) for a in alice], p)
        rates.append(sum(r.success for r in res) / 100)
    assert rates[0] >= rates[1] >= rates[2]
    assert rates[0] == 1.0 and rates[2] < 0.5


# ---------------------------------------------------------------- leakage

def test_leakage_and_efficiency():
    code = LdpcCode(10**4, tuple((j,) for j in range(2627)))
    assert leakage_bits(code) == 2627
    assert reconciliation_efficiency(code, 0.035) == pytest.approx(2627 / 2188.72, abs=1e-4)
    assert reconciliation_efficiency(code, 0.0) is None
    assert leakage_bits(LdpcCode(10, ())) == 0
    doubled = LdpcCode(10**4, code.checks + code.checks)
    assert leakage_bits(doubled) == 2 * leakage_bits(code)
