"""Arithmetic in GF(2^8) with reduction polynomial x^8+x^4+x^3+x^2+1 (0x11D).

Field elements are plain ints in ``[0, 255]``; payloads are 1-D ``uint8``
arrays. Multiplication goes through log/antilog tables built once at import
from the generator ``2``; :func:`gf_mul_bitwise` is the independent
shift-and-reduce definition used to validate them.
"""
import numpy as np

from . import kernels

POLY = 0x11D
ORDER = 256
DEFAULT_PAYLOAD_LEN = 32


def _build_tables():
    exp = np.zeros(2 * ORDER, dtype=np.uint8)
    log = np.zeros(ORDER, dtype=np.int64)
    x = 1
    for i in range(ORDER - 1):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x & 0x100:
            x ^= POLY
    exp[ORDER - 1 : 2 * ORDER - 2] = exp[: ORDER - 1]
    return exp, log


EXP, LOG = _build_tables()


def _build_mul_table():
    a = np.arange(ORDER)
    table = EXP[LOG[a][:, None] + LOG[a][None, :]]
    table[0, :] = 0
    table[:, 0] = 0
    return table.astype(np.uint8)


MUL = _build_mul_table()
INV = np.zeros(ORDER, dtype=np.uint8)
INV[1:] = EXP[(ORDER - 1) - LOG[1:]]

for _t in (EXP, MUL, INV):
    _t.setflags(write=False)


def _check(a):
    a = int(a)
    if not 0 <= a < ORDER:
        raise ValueError(f"field element out of range: {a}")
    return a


def gf_mul_bitwise(a, b):
    """Carry-less multiply then reduce modulo ``POLY``; no tables involved."""
    a, b = _check(a), _check(b)
    acc = 0
    while b:
        if b & 1:
            acc ^= a
        b >>= 1
        a <<= 1
        if a & 0x100:
            a ^= POLY
    return acc


def gf_mul(a, b):
    return int(MUL[_check(a), _check(b)])


def gf_inv(a):
    a = _check(a)
    if a == 0:
        raise ZeroDivisionError("no inverse of zero")
    return int(INV[a])


def gf_add(a, b):
    return _check(a) ^ _check(b)


def payload_axpy(dst, coeff, src):
    """Return ``dst ^ coeff*src`` element-wise (a fresh array)."""
    dst = np.asarray(dst, dtype=np.uint8)
    src = np.asarray(src, dtype=np.uint8)
    if dst.shape != src.shape:
        raise ValueError(f"payload length mismatch: {dst.shape[0]} != {src.shape[0]}")
    return dst ^ MUL[_check(coeff)][src]


def payload_axpy_inplace(dst, coeff, src):
    if dst.shape != src.shape:
        raise ValueError(f"payload length mismatch: {dst.shape[0]} != {src.shape[0]}")
    dst ^= MUL[coeff][src]
    return dst


def combine(coeffs, payloads):
    """Linear combinations: row ``j`` of the result is sum_l coeffs[j,l]*payloads[l]."""
    coeffs = np.ascontiguousarray(coeffs, dtype=np.uint8)
    payloads = np.ascontiguousarray(payloads, dtype=np.uint8)
    if coeffs.ndim != 2 or payloads.ndim != 2 or coeffs.shape[1] != payloads.shape[0]:
        raise ValueError("combine expects (m, w) coefficients and (w, L) payloads")
    return kernels.gf_combine(coeffs, payloads, MUL)


def random_payloads(rng, count, length=DEFAULT_PAYLOAD_LEN):
    return rng.integers(0, ORDER, size=(count, length), dtype=np.uint8)
