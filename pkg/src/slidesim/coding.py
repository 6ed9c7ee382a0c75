"""Systematic Reed-Solomon erasure coding over GF(2^16).

A message is split into (1-lam)*D data parcels; lam*D parity parcels are
appended so that any (1-lam)*D of the D parcels reconstruct the message
exactly.  Symbols are 16-bit, so parcel payloads must be a whole number
of symbols and D can grow to 65535 evaluation points.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np


class CodingError(Exception):
    pass


class SizeMismatch(CodingError):
    pass


class InsufficientParcels(CodingError):
    pass


class CorruptParcel(CodingError):
    pass


_PRIM_POLY = 0x1100B  # x^16 + x^12 + x^3 + x + 1, primitive over GF(2)
_FIELD = 1 << 16


def _build_tables():
    exp = np.zeros(2 * (_FIELD - 1), dtype=np.int64)
    log = np.zeros(_FIELD, dtype=np.int64)
    x = 1
    for i in range(_FIELD - 1):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x & _FIELD:
            x ^= _PRIM_POLY
    if x != 1:
        raise CodingError("field generator does not have full period")
    exp[_FIELD - 1 :] = exp[: _FIELD - 1]
    return exp, log


_EXP, _LOG = _build_tables()


def gf_mul(a: int, b: int) -> int:
    if a == 0 or b == 0:
        return 0
    return int(_EXP[_LOG[a] + _LOG[b]])


def gf_inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("inverse of 0 in GF(2^16)")
    return int(_EXP[(_FIELD - 1) - _LOG[a]])


def _gf_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(m,k) x (k,s) matrix product over GF(2^16), via log tables."""
    m, k = a.shape
    _, s = b.shape
    out = np.zeros((m, s), dtype=np.int64)
    log_b = _LOG[b]
    for j in range(k):
        col = a[:, j]
        nz = col != 0
        if not nz.any():
            continue
        row = b[j]
        prod = np.zeros((m, s), dtype=np.int64)
        row_nz = row != 0
        if not row_nz.any():
            continue
        idx = _LOG[col[nz]][:, None] + log_b[j][None, row_nz]
        vals = _EXP[idx]
        sub = np.zeros((int(nz.sum()), s), dtype=np.int64)
        sub[:, row_nz] = vals
        prod[nz] = sub
        out ^= prod
    return out


@dataclass(frozen=True)
class CodingParams:
    """Erasure-code geometry for one codeword of D parcels."""

    D: int
    lam: Fraction
    payload_bits: int

    def __post_init__(self):
        if self.D < 2:
            raise CodingError("D must be at least 2")
        if not (0 < self.lam < 1):
            raise CodingError("redundancy fraction must lie in (0, 1)")
        if (1 / self.lam).denominator != 1:
            raise CodingError("1/lam must be an integer")
        if (self.lam * self.D).denominator != 1:
            raise CodingError("lam * D must be an integer")
        if self.payload_bits % 16 or self.payload_bits <= 0:
            raise CodingError("payload_bits must be a positive multiple of 16")
        if self.D > _FIELD - 1:
            raise CodingError("D exceeds the number of GF(2^16) evaluation points")

    @property
    def data_count(self) -> int:
        return self.D - int(self.lam * self.D)

    @property
    def symbols(self) -> int:
        return self.payload_bits // 16

    @property
    def message_bits(self) -> int:
        return self.data_count * self.payload_bits


def derive_parcel_count(k: int, n: int, C: int, lam: Fraction) -> int:
    """The default codeword size k*n*C/lam; raises if it is not integral."""
    d = Fraction(k * n * C) / lam
    if d.denominator != 1:
        raise CodingError("k*n*C/lam is not an integer; adjust lam")
    return int(d)


def _lagrange_matrix(targets: list[int], points: list[int]) -> np.ndarray:
    """W[t,r] so that P(targets[t]) = sum_r W[t,r] * P(points[r])."""
    order = _FIELD - 1
    pts = np.asarray(points, dtype=np.int64)
    tg = np.asarray(targets, dtype=np.int64)

    pd = pts[:, None] ^ pts[None, :]
    np.fill_diagonal(pd, 1)  # xor with self is 0; log(1) = 0 keeps the sum right
    logden = _LOG[pd].sum(axis=1) % order

    td = tg[:, None] ^ pts[None, :]
    zero_mask = td == 0
    logtd = _LOG[np.where(zero_mask, 1, td)]
    full = logtd.sum(axis=1)

    w = np.zeros((len(tg), len(pts)), dtype=np.int64)
    coincident = zero_mask.any(axis=1)
    if coincident.any():
        rows = np.nonzero(coincident)[0]
        w[rows, np.argmax(zero_mask[rows], axis=1)] = 1
    general = ~coincident
    if general.any():
        lnum = (full[general][:, None] - logtd[general]) % order
        w[general] = _EXP[(lnum - logden[None, :]) % order]
    return w


class _ParityCache(dict):
    def for_params(self, params: CodingParams) -> np.ndarray:
        key = (params.D, params.data_count)
        if key not in self:
            data_pts = list(range(params.data_count))
            parity_pts = list(range(params.data_count, params.D))
            self[key] = _lagrange_matrix(parity_pts, data_pts)
        return self[key]


_parity_cache = _ParityCache()


def _to_symbols(payloads: np.ndarray) -> np.ndarray:
    return payloads[:, 0::2].astype(np.int64) | (payloads[:, 1::2].astype(np.int64) << 8)


def _to_bytes(symbols: np.ndarray) -> np.ndarray:
    rows, s = symbols.shape
    out = np.zeros((rows, 2 * s), dtype=np.uint8)
    out[:, 0::2] = symbols & 0xFF
    out[:, 1::2] = symbols >> 8
    return out


def encode(message: bytes, params: CodingParams) -> list[bytes]:
    """Split the message into D parcel payloads, data first, parity after."""
    if len(message) * 8 != params.message_bits:
        raise SizeMismatch(
            f"message is {len(message) * 8} bits, geometry wants {params.message_bits}"
        )
    kd = params.data_count
    pb = params.payload_bits // 8
    data = np.frombuffer(message, dtype=np.uint8).reshape(kd, pb)
    data_sym = _to_symbols(data)
    parity_sym = _gf_matmul(_parity_cache.for_params(params), data_sym)
    parity = _to_bytes(parity_sym)
    payloads = [data[i].tobytes() for i in range(kd)]
    payloads += [parity[j].tobytes() for j in range(params.D - kd)]
    return payloads


def decode(parcels, params: CodingParams) -> bytes:
    """Rebuild the message from any data_count distinct (index, payload) pairs.

    Extra parcels and duplicate indices are tolerated; conflicting payloads
    for the same index raise CorruptParcel.
    """
    kd = params.data_count
    pb = params.payload_bits // 8
    seen: dict[int, bytes] = {}
    for idx, payload in parcels:
        if not 0 <= idx < params.D:
            raise CorruptParcel(f"parcel index {idx} outside 0..{params.D - 1}")
        if len(payload) != pb:
            raise CorruptParcel(f"parcel {idx} payload is {len(payload)} bytes, want {pb}")
        if idx in seen:
            if seen[idx] != payload:
                raise CorruptParcel(f"conflicting payloads for parcel {idx}")
            continue
        seen[idx] = payload
    if len(seen) < kd:
        raise InsufficientParcels(f"have {len(seen)} distinct parcels, need {kd}")

    if all(i in seen for i in range(kd)):
        return b"".join(seen[i] for i in range(kd))

    points = sorted(seen)[:kd]
    received = np.frombuffer(b"".join(seen[i] for i in points), dtype=np.uint8)
    received = received.reshape(kd, pb)
    w = _lagrange_matrix(list(range(kd)), points)
    data_sym = _gf_matmul(w, _to_symbols(received))
    return _to_bytes(data_sym).tobytes()
