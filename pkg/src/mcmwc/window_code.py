"""Moving-window encoder, determinable-packet decoders and anonymous feedback.

Two decoder fidelities share one state type. The ideal decoder follows the
counting recursions for the determinable count ``S`` and the virtual queue
``Q = A - S``. The concrete decoder regenerates each coded packet's
coefficients from the shared seed, Gaussian-eliminates them over GF(2^8)
against a row-reduced basis and back-substitutes payloads when ``Q`` hits 0.

Packet indices are global and 1-based across the merged stream.
"""
import struct
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import gf, kernels

_M64 = (1 << 64) - 1
_HEADER = struct.Struct("<QQQH")


class WindowCodeError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Shared-seed coefficients (counter-mode: a hash of (seed, t, j, l))


def _splitmix(z):
    z = (z + 0x9E3779B97F4A7C15) & _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def _splitmix_vec(z):
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def coefficients(seed, t, j, lo, hi):
    """phi_{l,j}^t for l = lo..hi, uniform over all 256 field values."""
    if hi < lo:
        return np.zeros(0, dtype=np.uint8)
    key = _splitmix(_splitmix(_splitmix(seed & _M64) ^ (t & _M64)) ^ (j & _M64))
    ls = np.arange(lo, hi + 1, dtype=np.uint64)
    return (_splitmix_vec(ls ^ np.uint64(key)) & np.uint64(0xFF)).astype(np.uint8)


# ---------------------------------------------------------------------------
# Packets


@dataclass
class CodedPacket:
    payload: np.ndarray
    A: int
    Z: int
    t: int
    j: int

    def __post_init__(self):
        if self.Z > self.A:
            raise WindowCodeError(f"header inconsistency: Z={self.Z} > A={self.A}")

    @property
    def idle(self):
        return self.A == self.Z

    def to_bytes(self):
        return _HEADER.pack(self.A, self.Z, self.t, self.j) + bytes(self.payload)

    @classmethod
    def from_bytes(cls, blob):
        A, Z, t, j = _HEADER.unpack_from(blob)
        payload = np.frombuffer(blob, dtype=np.uint8, offset=_HEADER.size).copy()
        return cls(payload, A, Z, t, j)


class DecodedPacket(NamedTuple):
    index: int
    payload: Optional[np.ndarray]


# ---------------------------------------------------------------------------
# Encoder


@dataclass
class EncoderState:
    m: int
    coeff_seed: int = 0
    payload_len: int = gf.DEFAULT_PAYLOAD_LEN
    A: int = 0
    Z: int = 0
    t: int = 0
    naks: int = 0
    _buf: np.ndarray = field(default=None, repr=False)
    _start: int = 0

    def __post_init__(self):
        if self._buf is None:
            self._buf = np.zeros((64, self.payload_len), dtype=np.uint8)

    @property
    def window(self):
        """Payloads of packets Z+1 .. A, oldest first."""
        return self._buf[self._start : self._start + self.A - self.Z]

    @property
    def window_size(self):
        return self.A - self.Z

    def _reserve(self, extra):
        live = self.A - self.Z
        need = live + extra
        if self._start + need <= self._buf.shape[0]:
            return
        cap = self._buf.shape[0]
        while cap < 2 * need:
            cap *= 2
        buf = np.zeros((cap, self.payload_len), dtype=np.uint8)
        buf[:live] = self.window
        self._buf, self._start = buf, 0

    def _drop(self, count):
        self.Z += count
        self._start += count


def encoder_ingest(enc, arrivals):
    """Start a new slot and append ``arrivals`` (payload rows) to the window."""
    enc.t += 1
    arrivals = np.asarray(arrivals, dtype=np.uint8).reshape(-1, enc.payload_len)
    k = arrivals.shape[0]
    if k:
        enc._reserve(k)
        end = enc._start + enc.A - enc.Z
        enc._buf[end : end + k] = arrivals
        enc.A += k
    return enc


def encode_slot(enc):
    """One coded packet per channel over the current window (``idle`` if empty)."""
    lo, hi = enc.Z + 1, enc.A
    if hi < lo:
        zero = np.zeros(enc.payload_len, dtype=np.uint8)
        return [CodedPacket(zero.copy(), enc.A, enc.Z, enc.t, j) for j in range(enc.m)]
    coeffs = np.stack([coefficients(enc.coeff_seed, enc.t, j, lo, hi) for j in range(enc.m)])
    payloads = gf.combine(coeffs, enc.window)
    return [CodedPacket(payloads[j], enc.A, enc.Z, enc.t, j) for j in range(enc.m)]


# ---------------------------------------------------------------------------
# Decoder


@dataclass
class DecoderState:
    """Receiver state; ``mode`` is ``'ideal'`` or ``'concrete'``."""

    mode: str = "ideal"
    coeff_seed: int = 0
    payload_len: int = gf.DEFAULT_PAYLOAD_LEN
    A: int = 0
    S: int = 0
    delivered: int = 0
    t: int = 0
    decode_log: list = field(default_factory=list)
    receptions: int = 0
    innovative: int = 0
    ops: int = 0
    # concrete basis, relative index k <-> global index delivered + 1 + k
    rows: np.ndarray = field(default=None, repr=False)
    pays: np.ndarray = field(default=None, repr=False)
    pivot: np.ndarray = field(default=None, repr=False)
    known: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.mode not in ("ideal", "concrete"):
            raise ValueError(f"unknown decoder mode {self.mode!r}")
        if self.mode == "concrete" and self.rows is None:
            self._alloc(32)

    @property
    def Q(self):
        return self.A - self.S

    def _alloc(self, cap):
        rows = np.zeros((cap, cap), dtype=np.uint8)
        pays = np.zeros((cap, self.payload_len), dtype=np.uint8)
        pivot = np.zeros(cap, dtype=np.bool_)
        if self.rows is not None:
            old = self.rows.shape[0]
            rows[:old, :old] = self.rows
            pays[:old] = self.pays
            pivot[:old] = self.pivot
        self.rows, self.pays, self.pivot = rows, pays, pivot

    def _ensure(self, n):
        cap = self.rows.shape[0]
        if n > cap:
            while cap < n:
                cap *= 2
            self._alloc(cap)


def decoder_receive_ideal(dec, a_t, c_t, t=None):
    """Counting update: A += a_t, then S advances by min(c_t, A - S)."""
    dec.t = dec.t + 1 if t is None else t
    dec.A += int(a_t)
    gain = min(int(c_t), dec.A - dec.S)
    dec.receptions += int(c_t)
    dec.innovative += gain
    dec.S += gain
    return dec


def decoder_receive_concrete(dec, pkts, A_t=None, t=None):
    """Insert the received packets' coefficient rows into the basis.

    ``A_t`` is the encoder's arrival count this slot. Receivers learn it from
    headers, but the virtual queue is defined even in slots with no reception,
    so the simulator passes it explicitly.
    """
    if dec.mode != "concrete":
        raise WindowCodeError("decoder_receive_concrete needs a concrete decoder")
    if t is not None:
        dec.t = t
    elif pkts:
        dec.t = pkts[0].t
    else:
        dec.t += 1
    for pkt in pkts:
        if pkt.Z > pkt.A:
            raise WindowCodeError(f"header inconsistency: Z={pkt.Z} > A={pkt.A}")
        dec.A = max(dec.A, pkt.A)
    if A_t is not None:
        dec.A = max(dec.A, int(A_t))
    for pkt in pkts:
        _insert(dec, pkt)
    _advance_prefix(dec)
    return dec


def _insert(dec, pkt):
    dec.receptions += 1
    lo, hi = pkt.Z + 1, pkt.A
    if hi < lo:
        return
    phi = coefficients(dec.coeff_seed, pkt.t, pkt.j, lo, hi)
    pay = np.array(pkt.payload, dtype=np.uint8, copy=True)
    L = dec.payload_len
    # subtract packets this receiver has already decoded
    for l in range(lo, min(hi, dec.delivered) + 1):
        f = int(phi[l - lo])
        if f:
            gf.payload_axpy_inplace(pay, f, dec.known[l])
            dec.ops += L
    base = dec.delivered + 1
    n = hi - base + 1
    if n <= 0:
        return
    dec._ensure(n)
    row = np.zeros(n, dtype=np.uint8)
    first = max(lo, base)
    row[first - base :] = phi[first - lo :]
    pos, ops = kernels.reduce_insert(dec.rows, dec.pays, dec.pivot, row, pay, n, gf.MUL, gf.INV)
    dec.ops += int(ops)
    if pos >= 0:
        dec.innovative += 1
    # known packets older than the sender's window never reappear
    if pkt.Z >= 1:
        for l in [k for k in dec.known if k <= pkt.Z]:
            del dec.known[l]


def _advance_prefix(dec):
    k = dec.S - dec.delivered
    cap = dec.pivot.shape[0]
    while dec.S < dec.A and k < cap and dec.pivot[k]:
        k += 1
        dec.S += 1


def try_decode(dec, A_t=None, t=None):
    """Deliver every pending packet when Q == 0; otherwise return None."""
    if A_t is not None:
        dec.A = max(dec.A, int(A_t))
    if t is not None:
        dec.t = t
    if dec.mode == "concrete":
        _advance_prefix(dec)
    if dec.Q != 0:
        return None
    dec.decode_log.append(dec.t)
    lo, hi = dec.delivered + 1, dec.A
    if hi < lo:
        return []
    if dec.mode == "ideal":
        dec.delivered = hi
        return [DecodedPacket(l, None) for l in range(lo, hi + 1)]
    n = hi - lo + 1
    if n > dec.pivot.shape[0] or not dec.pivot[:n].all():
        raise WindowCodeError("rank inconsistency: Q == 0 but the basis is incomplete")
    dec.ops += int(kernels.back_substitute(dec.rows, dec.pays, n, gf.MUL))
    out = []
    for k in range(n):
        p = dec.pays[k].copy()
        dec.known[lo + k] = p
        out.append(DecodedPacket(lo + k, p))
    dec.rows[:n, :n] = 0
    dec.pays[:n] = 0
    dec.pivot[:n] = False
    dec.delivered = hi
    return out


# ---------------------------------------------------------------------------
# Anonymous feedback


def feedback_round(enc, all_decoders):
    """NAK if any receiver misses one of the oldest min(m, A-Z) packets; else drop them."""
    r = min(enc.m, enc.A - enc.Z)
    if r <= 0:
        return enc
    if any(d.S < enc.Z + r for d in all_decoders):
        enc.naks += 1
        return enc
    enc._drop(r)
    return enc
