"""Signature and additively homomorphic tag encryption backends.

Two homomorphic backends share one interface: ``transparent`` keeps the
plaintext vector next to a random nonce (fast, used for bulk simulation),
``exp-elgamal`` lifts plaintexts into the exponent of a prime-order
subgroup and decrypts by table lookup.  Signatures are either a keyed-hash
stand-in (``hmac``) or real ``ed25519``; both produce short byte strings
verified against a per-node verification key.
"""

from __future__ import annotations

import hashlib
import hmac as _hmac
import random
import struct
from dataclasses import dataclass


class CryptoError(Exception):
    pass


class ContextMismatch(CryptoError):
    """Two ciphertexts from different contexts were combined."""


class MissingSecretKey(CryptoError):
    """Decryption was attempted through a public-only context view."""


class IndexOutOfRange(CryptoError):
    """Unit-vector index outside 1..K."""


def derive_seed(master: int, label: str) -> int:
    """Stable per-component seed, independent of PYTHONHASHSEED."""
    h = hashlib.sha256(f"{master}:{label}".encode()).digest()
    return int.from_bytes(h[:8], "little")


# ---------------------------------------------------------------------------
# signatures


@dataclass(frozen=True)
class SignatureKeyPair:
    owner: int
    signing_key: bytes
    verification_key: bytes
    backend: str


class HmacSignatures:
    """Keyed-hash stand-in: signing and verification key are the same secret.

    Only sound inside the simulation, where strategy hooks are handed a
    signer bound to their own identity and never the raw key table.
    """

    name = "hmac"
    sig_bytes = 16

    @staticmethod
    def keygen(seed: int, n: int) -> list[SignatureKeyPair]:
        rng = random.Random(derive_seed(seed, "sig-hmac"))
        pairs = []
        for i in range(n):
            key = rng.randbytes(32)
            pairs.append(SignatureKeyPair(i, key, key, "hmac"))
        return pairs

    @staticmethod
    def sign(signing_key: bytes, message: bytes) -> bytes:
        return _hmac.new(signing_key, message, hashlib.sha256).digest()[:16]

    @staticmethod
    def verify(verification_key: bytes, message: bytes, sig: bytes) -> bool:
        want = _hmac.new(verification_key, message, hashlib.sha256).digest()[:16]
        return _hmac.compare_digest(want, sig)


class Ed25519Signatures:
    name = "ed25519"
    sig_bytes = 64

    @staticmethod
    def keygen(seed: int, n: int) -> list[SignatureKeyPair]:
        from cryptography.hazmat.primitives.asymmetric.ed25519 import (
            Ed25519PrivateKey,
        )

        rng = random.Random(derive_seed(seed, "sig-ed25519"))
        pairs = []
        for i in range(n):
            raw = rng.randbytes(32)
            sk = Ed25519PrivateKey.from_private_bytes(raw)
            vk = sk.public_key().public_bytes_raw()
            pairs.append(SignatureKeyPair(i, raw, vk, "ed25519"))
        return pairs

    @staticmethod
    def sign(signing_key: bytes, message: bytes) -> bytes:
        from cryptography.hazmat.primitives.asymmetric.ed25519 import (
            Ed25519PrivateKey,
        )

        return Ed25519PrivateKey.from_private_bytes(signing_key).sign(message)

    @staticmethod
    def verify(verification_key: bytes, message: bytes, sig: bytes) -> bool:
        from cryptography.exceptions import InvalidSignature
        from cryptography.hazmat.primitives.asymmetric.ed25519 import (
            Ed25519PublicKey,
        )

        try:
            Ed25519PublicKey.from_public_bytes(verification_key).verify(sig, message)
            return True
        except InvalidSignature:
            return False


_SIG_BACKENDS = {"hmac": HmacSignatures, "ed25519": Ed25519Signatures}


def signature_scheme(name: str):
    try:
        return _SIG_BACKENDS[name]
    except KeyError:
        raise CryptoError(f"unknown signature backend {name!r}") from None


class Signer:
    """Capability handed to a node: signs as one fixed identity."""

    __slots__ = ("owner", "_scheme", "_sk")

    def __init__(self, owner: int, scheme, signing_key: bytes):
        self.owner = owner
        self._scheme = scheme
        self._sk = signing_key

    def sign(self, message: bytes) -> bytes:
        return self._scheme.sign(self._sk, message)


# ---------------------------------------------------------------------------
# homomorphic tag encryption


@dataclass(frozen=True)
class HEVector:
    """K coordinate ciphertexts of a vector over Z_N."""

    ctx_id: int
    coords: tuple


def _is_prime(m: int) -> bool:
    if m < 2:
        return False
    for p in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        if m % p == 0:
            return m == p
    d, s = m - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        x = pow(a, d, m)
        if x in (1, m - 1):
            continue
        for _ in range(s - 1):
            x = x * x % m
            if x == m - 1:
                break
        else:
            return False
    return True


def next_prime(m: int) -> int:
    """Smallest prime strictly greater than m."""
    c = m + 1
    while not _is_prime(c):
        c += 1
    return c


class HEContext:
    """Key material plus modulus for one transmission's tag space.

    The Sender holds the full context; every other participant gets
    ``public_view()`` which raises MissingSecretKey on decryption.
    """

    _next_id = 0

    def __init__(self, backend: str, K: int, N: int, seed: int, secret=True):
        if K < 1:
            raise CryptoError("K must be positive")
        if not _is_prime(N):
            raise CryptoError("tag modulus N must be prime")
        self.backend = backend
        self.K = K
        self.N = N
        self.ctx_id = HEContext._next_id
        HEContext._next_id += 1
        self._rng = random.Random(derive_seed(seed, f"he-{backend}"))
        self.has_secret = secret

    def public_view(self) -> "HEContext":
        raise NotImplementedError

    # subclasses: _enc_value, _add_coord, _dec_coord, _zero_coord,
    #             coord_bytes, coord_pack, coord_unpack


class TransparentHE(HEContext):
    """Plaintext coordinates plus a whole-vector nonce.

    Two encryptions of the same unit vector still differ bytewise (fresh
    nonce); addition sums coordinates mod N and nonces mod 2^32.
    """

    coord_bytes = 4

    def __init__(self, K: int, N: int, seed: int, secret=True):
        if N >= 1 << 32:
            raise CryptoError("transparent backend packs coordinates as u32")
        super().__init__("transparent", K, N, seed, secret)

    def public_view(self) -> "TransparentHE":
        view = TransparentHE.__new__(TransparentHE)
        view.__dict__.update(self.__dict__)
        view.has_secret = False
        return view

    def encrypt_unit(self, index: int, rng=None) -> HEVector:
        if not 1 <= index <= self.K:
            raise IndexOutOfRange(f"unit index {index} outside 1..{self.K}")
        rng = rng or self._rng
        coords = tuple(1 if j == index - 1 else 0 for j in range(self.K))
        return HEVector(self.ctx_id, (coords, rng.getrandbits(32)))

    def zero(self) -> HEVector:
        return HEVector(self.ctx_id, (tuple([0] * self.K), 0))

    def add(self, a: HEVector, b: HEVector) -> HEVector:
        av, an = a.coords
        bv, bn = b.coords
        n = self.N
        return HEVector(
            self.ctx_id,
            (tuple((x + y) % n for x, y in zip(av, bv)), (an + bn) & 0xFFFFFFFF),
        )

    def decrypt(self, v: HEVector) -> tuple:
        if not self.has_secret:
            raise MissingSecretKey("decryption needs the Sender-held context")
        return v.coords[0]

    def vector_pack(self, v: HEVector) -> bytes:
        vals, nonce = v.coords
        return struct.pack(f"<{self.K}I", *vals) + struct.pack("<I", nonce)

    def vector_unpack(self, data: bytes, off: int) -> tuple[HEVector, int]:
        vals = struct.unpack_from(f"<{self.K}I", data, off)
        off += 4 * self.K
        (nonce,) = struct.unpack_from("<I", data, off)
        return HEVector(self.ctx_id, (vals, nonce)), off + 4

    def vector_wire_bytes(self) -> int:
        return 4 * self.K + 4


class ExpElgamalHE(HEContext):
    """Exponential ElGamal over the order-N subgroup of Z_p*.

    p = c*N + 1 for the smallest even c making p prime, so the plaintext
    group is exactly Z_N.  Decryption recovers g^m and walks a lookup
    table built once per context (N entries, fine at simulation scale).
    """

    def __init__(self, K: int, N: int, seed: int, secret=True):
        if N > 1 << 22:
            raise CryptoError("exp-elgamal lookup table capped at N <= 2^22")
        super().__init__("exp-elgamal", K, N, seed, secret)
        c = 2
        while not _is_prime(c * N + 1):
            c += 2
        self.p = c * N + 1
        g = 1
        while g == 1:
            h = self._rng.randrange(2, self.p - 1)
            g = pow(h, (self.p - 1) // N, self.p)
        self.g = g
        self.x = self._rng.randrange(1, N)
        self.y = pow(g, self.x, self.p)
        self._dlog: dict[int, int] | None = None
        self.elem_bytes = (self.p.bit_length() + 7) // 8

    def public_view(self) -> "ExpElgamalHE":
        view = ExpElgamalHE.__new__(ExpElgamalHE)
        view.__dict__.update(self.__dict__)
        view.has_secret = False
        view.x = None
        return view

    def _dlog_table(self) -> dict[int, int]:
        if self._dlog is None:
            table = {}
            acc = 1
            for m in range(self.N):
                table[acc] = m
                acc = acc * self.g % self.p
            self._dlog = table
        return self._dlog

    def _enc(self, m: int, rng) -> tuple[int, int]:
        r = rng.randrange(1, self.N)
        return (pow(self.g, r, self.p), pow(self.g, m, self.p) * pow(self.y, r, self.p) % self.p)

    def encrypt_unit(self, index: int, rng=None) -> HEVector:
        if not 1 <= index <= self.K:
            raise IndexOutOfRange(f"unit index {index} outside 1..{self.K}")
        rng = rng or self._rng
        coords = tuple(self._enc(1 if j == index - 1 else 0, rng) for j in range(self.K))
        return HEVector(self.ctx_id, coords)

    def zero(self) -> HEVector:
        return HEVector(self.ctx_id, tuple((1, 1) for _ in range(self.K)))

    def add(self, a: HEVector, b: HEVector) -> HEVector:
        p = self.p
        return HEVector(
            self.ctx_id,
            tuple(
                (x[0] * y[0] % p, x[1] * y[1] % p) for x, y in zip(a.coords, b.coords)
            ),
        )

    def decrypt(self, v: HEVector) -> tuple:
        if not self.has_secret or self.x is None:
            raise MissingSecretKey("decryption needs the Sender-held context")
        table = self._dlog_table()
        out = []
        for a, b in v.coords:
            gm = b * pow(a, self.p - 1 - self.x, self.p) % self.p
            out.append(table[gm])
        return tuple(out)

    def vector_pack(self, v: HEVector) -> bytes:
        eb = self.elem_bytes
        return b"".join(
            a.to_bytes(eb, "little") + b.to_bytes(eb, "little") for a, b in v.coords
        )

    def vector_unpack(self, data: bytes, off: int) -> tuple[HEVector, int]:
        eb = self.elem_bytes
        coords = []
        for _ in range(self.K):
            a = int.from_bytes(data[off : off + eb], "little")
            b = int.from_bytes(data[off + eb : off + 2 * eb], "little")
            coords.append((a, b))
            off += 2 * eb
        return HEVector(self.ctx_id, tuple(coords)), off

    def vector_wire_bytes(self) -> int:
        return 2 * self.elem_bytes * self.K


def make_he_context(backend: str, K: int, N: int, seed: int) -> HEContext:
    if backend == "transparent":
        return TransparentHE(K, N, seed)
    if backend == "exp-elgamal":
        return ExpElgamalHE(K, N, seed)
    raise CryptoError(f"unknown homomorphic backend {backend!r}")


def he_add(ctx: HEContext, a: HEVector, b: HEVector) -> HEVector:
    if a.ctx_id != b.ctx_id or a.ctx_id != ctx.ctx_id:
        raise ContextMismatch("ciphertexts belong to different contexts")
    return ctx.add(a, b)


def he_sum(ctx: HEContext, vectors) -> HEVector:
    acc = ctx.zero()
    for v in vectors:
        acc = he_add(ctx, acc, v)
    return acc
