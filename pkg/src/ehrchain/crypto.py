"""Deterministic cryptographic primitives behind stable byte encodings.

Group arithmetic is a from-scratch short-Weierstrass implementation over
secp256k1 (Jacobian ladders internally, affine at the edges). Hashing and
HMAC come from the standard library; authenticated encryption is AES-128-GCM
from ``cryptography``. Everything that consumes randomness takes an explicit
``rng`` (any ``random.Random``-compatible object), so protocol runs replay
bit-for-bit from a seed.

Canonical encodings, used verbatim for hashing and signing elsewhere:

* points   — 33-byte compressed SEC1 (``02``/``03`` prefix + x), identity ``00``
* scalars  — 32-byte big-endian
* digests  — 32 raw bytes
* symmetric ciphertext — ``alg(1) || nonce(12) || body+tag``
* public-key ciphertext — ``alg(1) || ephemeral point(33) || symmetric ct``
* signature — ``alg(1) || commitment point(33) || s(32)``
"""

from __future__ import annotations

import hashlib
import hmac as _hmac
import random
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import EhrChainError

__all__ = [
    "CryptoError",
    "EncodingError",
    "DecryptionError",
    "Scalar",
    "Point",
    "G",
    "CURVE_ORDER",
    "FIELD_PRIME",
    "SystemParams",
    "KeyPair",
    "setup_params",
    "keygen",
    "point_mul",
    "h1_point_to_scalar",
    "h2_hash",
    "h2_keyed",
    "sym_encrypt",
    "sym_decrypt",
    "pk_encrypt",
    "pk_decrypt",
    "sign",
    "verify",
    "xor_mask",
    "SYM_KEY_LEN",
    "DIGEST_LEN",
    "POINT_LEN",
    "SCALAR_LEN",
]


class CryptoError(EhrChainError):
    code = "crypto"


class EncodingError(CryptoError):
    code = "encoding"


class DecryptionError(CryptoError):
    """Authenticated decryption failed: wrong key or tampered ciphertext."""

    code = "decryption"


# secp256k1 domain parameters (SEC 2 v2 §2.4.1): y^2 = x^3 + 7 over F_p.
FIELD_PRIME = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEFFFFFC2F
CURVE_ORDER = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141
_CURVE_B = 7
_GX = 0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798
_GY = 0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8

SCALAR_LEN = 32
POINT_LEN = 33
DIGEST_LEN = 32
SYM_KEY_LEN = 16  # 128-bit symmetric keys
NONCE_LEN = 12

IDENTITY_MARKER = b"\x00"

# Algorithm tags carried as the first byte of opaque crypto blobs.
ALG_AEAD_AES128GCM = 0x01
ALG_PKE_INTEGRATED = 0x02
ALG_SIG_SCHNORR = 0x03

_HASHES = {
    "sha256": hashlib.sha256,
    "sha3_256": hashlib.sha3_256,
}

_P = FIELD_PRIME
_N = CURVE_ORDER

_default_rng = random.SystemRandom()


def _hash_fn(alg: str):
    try:
        return _HASHES[alg]
    except KeyError:
        raise CryptoError(f"unknown hash algorithm {alg!r}") from None


class Scalar:
    """Element of Z_n, n the group order. Encodes as 32 bytes big-endian."""

    __slots__ = ("value",)

    def __init__(self, value: int):
        self.value = value % _N

    @classmethod
    def random(cls, rng=None, *, nonzero: bool = True) -> "Scalar":
        rng = rng or _default_rng
        lo = 1 if nonzero else 0
        return cls(rng.randrange(lo, _N))

    def encode(self) -> bytes:
        return self.value.to_bytes(SCALAR_LEN, "big")

    @classmethod
    def decode(cls, data: bytes) -> "Scalar":
        if len(data) != SCALAR_LEN:
            raise EncodingError(f"scalar must be {SCALAR_LEN} bytes, got {len(data)}")
        v = int.from_bytes(data, "big")
        if v >= _N:
            raise EncodingError("scalar not reduced modulo group order")
        return cls(v)

    def __add__(self, other: "Scalar") -> "Scalar":
        return Scalar(self.value + other.value)

    def __mul__(self, other: "Scalar") -> "Scalar":
        return Scalar(self.value * other.value)

    def __neg__(self) -> "Scalar":
        return Scalar(-self.value)

    def __eq__(self, other) -> bool:
        return isinstance(other, Scalar) and self.value == other.value

    def __hash__(self) -> int:
        return hash(("Scalar", self.value))

    def __int__(self) -> int:
        return self.value

    def __repr__(self) -> str:
        return f"Scalar(0x{self.value:064x})"


def _sqrt_mod_p(a: int) -> int | None:
    # p ≡ 3 (mod 4), so a^((p+1)/4) is a square root when one exists.
    r = pow(a, (_P + 1) // 4, _P)
    return r if r * r % _P == a % _P else None


class Point:
    """Curve point in affine coordinates; ``x is None`` marks the identity O."""

    __slots__ = ("x", "y")

    def __init__(self, x: int | None, y: int | None):
        if (x is None) != (y is None):
            raise EncodingError("both coordinates must be set, or neither")
        if x is not None:
            x %= _P
            y %= _P
            if (y * y - x * x * x - _CURVE_B) % _P != 0:
                raise EncodingError("point is not on the curve")
        self.x = x
        self.y = y

    @classmethod
    def identity(cls) -> "Point":
        return cls(None, None)

    def is_identity(self) -> bool:
        return self.x is None

    def encode(self) -> bytes:
        if self.x is None:
            return IDENTITY_MARKER
        prefix = 0x02 if self.y % 2 == 0 else 0x03
        return bytes([prefix]) + self.x.to_bytes(32, "big")

    @classmethod
    def decode(cls, data: bytes) -> "Point":
        if data == IDENTITY_MARKER:
            return cls.identity()
        if len(data) != POINT_LEN or data[0] not in (0x02, 0x03):
            raise EncodingError("expected 33-byte compressed point or identity marker")
        x = int.from_bytes(data[1:], "big")
        if x >= _P:
            raise EncodingError("x coordinate out of field range")
        y = _sqrt_mod_p((x * x * x + _CURVE_B) % _P)
        if y is None:
            raise EncodingError("x coordinate has no point on the curve")
        if (y % 2 == 0) != (data[0] == 0x02):
            y = _P - y
        return cls(x, y)

    def __add__(self, other: "Point") -> "Point":
        if not isinstance(other, Point):
            return NotImplemented
        if self.x is None:
            return other
        if other.x is None:
            return self
        if self.x == other.x:
            if (self.y + other.y) % _P == 0:
                return Point.identity()
            s = 3 * self.x * self.x * pow(2 * self.y, -1, _P) % _P
        else:
            s = (other.y - self.y) * pow(other.x - self.x, -1, _P) % _P
        x3 = (s * s - self.x - other.x) % _P
        y3 = (s * (self.x - x3) - self.y) % _P
        return Point(x3, y3)

    def __neg__(self) -> "Point":
        if self.x is None:
            return self
        return Point(self.x, _P - self.y)

    def mul(self, k) -> "Point":
        """Scalar multiplication k·P via a Jacobian double-and-add ladder."""
        k = int(k) % _N
        if k == 0 or self.x is None:
            return Point.identity()
        rx, ry, rz = _jac_mul(k, self.x, self.y)
        if rz == 0:
            return Point.identity()
        zi = pow(rz, -1, _P)
        zi2 = zi * zi % _P
        return Point(rx * zi2 % _P, ry * zi2 * zi % _P)

    def __eq__(self, other) -> bool:
        return isinstance(other, Point) and self.x == other.x and self.y == other.y

    def __hash__(self) -> int:
        return hash(("Point", self.x, self.y))

    def __repr__(self) -> str:
        if self.x is None:
            return "Point(identity)"
        return f"Point(0x{self.x:064x}, 0x{self.y:064x})"


def _jac_double(x1: int, y1: int, z1: int) -> tuple[int, int, int]:
    if y1 == 0:
        return 0, 1, 0
    a = x1 * x1 % _P
    b = y1 * y1 % _P
    c = b * b % _P
    d = 2 * ((x1 + b) * (x1 + b) - a - c) % _P
    e = 3 * a % _P
    x3 = (e * e - 2 * d) % _P
    y3 = (e * (d - x3) - 8 * c) % _P
    z3 = 2 * y1 * z1 % _P
    return x3, y3, z3


def _jac_add(x1, y1, z1, x2, y2, z2) -> tuple[int, int, int]:
    if z1 == 0:
        return x2, y2, z2
    if z2 == 0:
        return x1, y1, z1
    z1z1 = z1 * z1 % _P
    z2z2 = z2 * z2 % _P
    u1 = x1 * z2z2 % _P
    u2 = x2 * z1z1 % _P
    s1 = y1 * z2 * z2z2 % _P
    s2 = y2 * z1 * z1z1 % _P
    if u1 == u2:
        if s1 != s2:
            return 0, 1, 0
        return _jac_double(x1, y1, z1)
    h = (u2 - u1) % _P
    i = 4 * h * h % _P
    j = h * i % _P
    r = 2 * (s2 - s1) % _P
    v = u1 * i % _P
    x3 = (r * r - j - 2 * v) % _P
    y3 = (r * (v - x3) - 2 * s1 * j) % _P
    z3 = 2 * h * z1 * z2 % _P
    return x3, y3, z3


def _jac_mul(k: int, px: int, py: int) -> tuple[int, int, int]:
    ax, ay, az = px, py, 1
    rx, ry, rz = 0, 1, 0
    while k:
        if k & 1:
            rx, ry, rz = _jac_add(rx, ry, rz, ax, ay, az)
        ax, ay, az = _jac_double(ax, ay, az)
        k >>= 1
    return rx, ry, rz


G = Point(_GX, _GY)

_CURVES = {
    "secp256k1": (FIELD_PRIME, CURVE_ORDER, G),
}


@dataclass(frozen=True)
class SystemParams:
    """Public parameter tuple published at system setup."""

    curve_id: str
    field_prime: int
    order: int
    generator: Point
    h1_id: str
    h2_id: str

    def encode(self) -> bytes:
        from . import codec

        return (
            codec.pack_str(self.curve_id)
            + self.field_prime.to_bytes(32, "big")
            + self.order.to_bytes(32, "big")
            + self.generator.encode()
            + codec.pack_str(self.h1_id)
            + codec.pack_str(self.h2_id)
        )

    @classmethod
    def decode(cls, data: bytes) -> "SystemParams":
        from . import codec

        r = codec.Reader(data)
        curve_id = r.string()
        field_prime = int.from_bytes(r.take(32), "big")
        order = int.from_bytes(r.take(32), "big")
        generator = Point.decode(r.take(POINT_LEN))
        h1_id = r.string()
        h2_id = r.string()
        r.done()
        return cls(curve_id, field_prime, order, generator, h1_id, h2_id)


@dataclass(frozen=True)
class KeyPair:
    secret: Scalar
    public: Point


def setup_params(curve_id: str = "secp256k1", h1_id: str = "sha256", h2_id: str = "sha256") -> SystemParams:
    """Fix the curve and hash identifiers; deterministic for given inputs."""
    if curve_id not in _CURVES:
        raise CryptoError(f"unknown curve {curve_id!r}")
    _hash_fn(h1_id)
    _hash_fn(h2_id)
    prime, order, gen = _CURVES[curve_id]
    return SystemParams(curve_id, prime, order, gen, h1_id, h2_id)


def keygen(params: SystemParams, rng=None) -> KeyPair:
    """Fresh keypair: secret uniform in [1, order-1], public = secret·G."""
    secret = Scalar.random(rng)
    return KeyPair(secret, params.generator.mul(secret))


def point_mul(k: Scalar, p: Point) -> Point:
    return p.mul(k)


def h1_point_to_scalar(p: Point, alg: str = "sha256") -> Scalar:
    """Hash a non-identity point into [1, order-1]."""
    if p.is_identity():
        raise CryptoError("h1 is undefined on the identity point")
    digest = _hash_fn(alg)(p.encode()).digest()
    return Scalar(1 + int.from_bytes(digest, "big") % (_N - 1))


def h2_hash(msg: bytes, alg: str = "sha256") -> bytes:
    return _hash_fn(alg)(msg).digest()


def h2_keyed(msg: bytes, key: bytes, alg: str = "sha256") -> bytes:
    """Keyed variant of h2: HMAC over the configured hash."""
    return _hmac.new(key, msg, _hash_fn(alg)).digest()


def sym_encrypt(key: bytes, plaintext: bytes, rng=None) -> bytes:
    """AES-128-GCM with a fresh rng-supplied nonce. Tamper-evident."""
    if len(key) != SYM_KEY_LEN:
        raise CryptoError(f"symmetric key must be {SYM_KEY_LEN} bytes")
    rng = rng or _default_rng
    nonce = rng.randbytes(NONCE_LEN)
    body = AESGCM(key).encrypt(nonce, plaintext, None)
    return bytes([ALG_AEAD_AES128GCM]) + nonce + body


def sym_decrypt(key: bytes, ciphertext: bytes) -> bytes:
    if len(key) != SYM_KEY_LEN:
        raise CryptoError(f"symmetric key must be {SYM_KEY_LEN} bytes")
    if len(ciphertext) < 1 + NONCE_LEN + 16 or ciphertext[0] != ALG_AEAD_AES128GCM:
        raise EncodingError("malformed symmetric ciphertext")
    nonce = ciphertext[1 : 1 + NONCE_LEN]
    body = memoryview(ciphertext)[1 + NONCE_LEN :]  # records can be large; skip the copy
    try:
        return AESGCM(key).decrypt(nonce, body, None)
    except InvalidTag:
        raise DecryptionError("authentication failed: wrong key or modified ciphertext") from None


def _ecdh_key(shared: Point) -> bytes:
    if shared.is_identity():
        raise CryptoError("degenerate shared point")
    return hashlib.sha256(b"ehrchain/pke-key/v1" + shared.encode()).digest()[:SYM_KEY_LEN]


def pk_encrypt(pk: Point, plaintext: bytes, rng=None) -> bytes:
    """Integrated encryption: ephemeral ECDH then AES-128-GCM."""
    if pk.is_identity():
        raise CryptoError("cannot encrypt to the identity point")
    rng = rng or _default_rng
    eph = Scalar.random(rng)
    shared = pk.mul(eph)
    body = sym_encrypt(_ecdh_key(shared), plaintext, rng)
    return bytes([ALG_PKE_INTEGRATED]) + G.mul(eph).encode() + body


def pk_decrypt(sk: Scalar, ciphertext: bytes) -> bytes:
    if len(ciphertext) < 1 + POINT_LEN or ciphertext[0] != ALG_PKE_INTEGRATED:
        raise EncodingError("malformed public-key ciphertext")
    eph_pub = Point.decode(ciphertext[1 : 1 + POINT_LEN])
    if eph_pub.is_identity():
        raise EncodingError("identity ephemeral point")
    shared = eph_pub.mul(sk)
    return sym_decrypt(_ecdh_key(shared), ciphertext[1 + POINT_LEN :])


def _sig_challenge(commitment: bytes, pub: bytes, msg: bytes) -> int:
    digest = hashlib.sha256(b"ehrchain/sig/v1" + commitment + pub + msg).digest()
    return int.from_bytes(digest, "big") % _N


def sign(sk: Scalar, msg: bytes, rng=None) -> bytes:
    """Schnorr signature over the group: ``alg || R || s``."""
    rng = rng or _default_rng
    k = Scalar.random(rng)
    commitment = G.mul(k)
    pub = G.mul(sk)
    e = _sig_challenge(commitment.encode(), pub.encode(), msg)
    s = (int(k) + e * int(sk)) % _N
    return bytes([ALG_SIG_SCHNORR]) + commitment.encode() + s.to_bytes(32, "big")


def verify(pk: Point, msg: bytes, sig: bytes) -> bool:
    """True iff ``sig`` is a valid signature on ``msg`` under ``pk``.

    Malformed input returns False, never raises.
    """
    if len(sig) != 1 + POINT_LEN + SCALAR_LEN or sig[0] != ALG_SIG_SCHNORR:
        return False
    try:
        commitment = Point.decode(sig[1 : 1 + POINT_LEN])
    except EncodingError:
        return False
    if commitment.is_identity() or pk.is_identity():
        return False
    s = int.from_bytes(sig[1 + POINT_LEN :], "big")
    if s >= _N:
        return False
    e = _sig_challenge(commitment.encode(), pk.encode(), msg)
    return G.mul(s) == commitment + pk.mul(e)


def xor_mask(value: bytes, pad: bytes) -> bytes:
    """Bytewise XOR of ``value`` with the pad truncated to its length."""
    if len(value) > len(pad):
        raise CryptoError(f"value ({len(value)} bytes) longer than pad ({len(pad)} bytes)")
    return bytes(v ^ p for v, p in zip(value, pad))
