import numpy as np
import pytest
from hypothesis import given, strategies as st

from mcmwc import gf

elem = st.integers(0, 255)


def test_tables_match_bitwise_multiply_exhaustively():
    ref = np.array([[gf.gf_mul_bitwise(a, b) for b in range(256)] for a in range(256)], dtype=np.uint8)
    assert np.array_equal(ref, gf.MUL)


def test_known_products():
    # 0x80 * x overflows into x^8 = x^4 + x^3 + x^2 + 1
    assert gf.gf_mul(0x02, 0x80) == 0x1D
    assert gf.gf_mul(0x53, 0x01) == 0x53
    assert gf.gf_mul(0x00, 0xFF) == 0


def test_generator_has_full_order():
    assert len(set(gf.EXP[:255].tolist())) == 255
    assert gf.EXP[255] == 1


def test_inverse_table():
    for a in range(1, 256):
        assert gf.gf_mul(a, gf.gf_inv(a)) == 1


def test_inverse_of_zero_raises():
    with pytest.raises(ZeroDivisionError, match="no inverse of zero"):
        gf.gf_inv(0)


def test_out_of_range_element():
    with pytest.raises(ValueError):
        gf.gf_mul(256, 1)


def test_field_axioms_sampled(rng):
    a, b, c = rng.integers(0, 256, size=(3, 10_000))
    M = gf.MUL.astype(np.int64)
    assert np.array_equal(M[a, b], M[b, a])
    assert np.array_equal(M[M[a, b], c], M[a, M[b, c]])
    assert np.array_equal(M[a, b ^ c], M[a, b] ^ M[a, c])
    assert np.array_equal(M[a, 1], a)
    assert ((a ^ a) == 0).all()


@given(elem, elem)
def test_add_is_xor_and_self_inverse(a, b):
    s = gf.gf_add(a, b)
    assert s == a ^ b
    assert gf.gf_add(s, b) == a


@given(st.integers(1, 255), st.integers(1, 255))
def test_no_zero_divisors(a, b):
    assert gf.gf_mul(a, b) != 0


def test_payload_axpy(rng):
    dst = rng.integers(0, 256, 32, dtype=np.uint8)
    src = rng.integers(0, 256, 32, dtype=np.uint8)
    out = gf.payload_axpy(dst, 7, src)
    ref = np.array([d ^ gf.gf_mul_bitwise(7, s) for d, s in zip(dst, src)], dtype=np.uint8)
    assert np.array_equal(out, ref)
    # applying it twice cancels in characteristic 2
    assert np.array_equal(gf.payload_axpy(out, 7, src), dst)


def test_payload_axpy_length_mismatch():
    with pytest.raises(ValueError, match="length mismatch"):
        gf.payload_axpy(np.zeros(4, np.uint8), 1, np.zeros(5, np.uint8))


def test_combine_matches_scalar_oracle(rng):
    coeffs = rng.integers(0, 256, (3, 5), dtype=np.uint8)
    pays = rng.integers(0, 256, (5, 16), dtype=np.uint8)
    out = gf.combine(coeffs, pays)
    for j in range(3):
        for s in range(16):
            acc = 0
            for l in range(5):
                acc ^= gf.gf_mul_bitwise(int(coeffs[j, l]), int(pays[l, s]))
            assert out[j, s] == acc


def test_tables_are_read_only():
    with pytest.raises(ValueError):
        gf.MUL[1, 1] = 0
