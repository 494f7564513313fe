"""Textbook RSA primitives shared by every other module.

Keys are plain big integers with no padding scheme, which is what makes the
RSA blind signature in :mod:`appraide.credentials` work. Long content goes
through a hybrid envelope: a random session integer is RSA-wrapped and the
body is sealed with AES-GCM under a key derived from that integer.

Every randomized operation takes an explicit ``random.Random`` so simulator
runs are reproducible. Passing ``None`` falls back to the OS generator.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass
from typing import Optional

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from sympy import isprime

DEFAULT_BITS = 2048
MIN_BITS = 16
DIGEST_SIZE = 32
NONCE_SIZE = 12

_PREFERRED_E = 65537


class IntegrityError(Exception):
    """An envelope failed authentication (tampered, or wrong private key)."""


@dataclass(frozen=True)
class PublicKey:
    n: int
    e: int

    def to_hex(self) -> str:
        return f"{self.n:x}:{self.e:x}"

    @classmethod
    def from_hex(cls, text: str) -> PublicKey:
        n, e = text.split(":")
        return cls(int(n, 16), int(e, 16))


@dataclass(frozen=True)
class KeyPair:
    modulus_n: int
    public_e: int
    private_d: int
    p: Optional[int] = None
    q: Optional[int] = None

    @property
    def public(self) -> PublicKey:
        return PublicKey(self.modulus_n, self.public_e)

    def to_hex(self) -> str:
        return f"{self.modulus_n:x}:{self.public_e:x}:{self.private_d:x}"

    @classmethod
    def from_hex(cls, text: str) -> KeyPair:
        n, e, d = (int(x, 16) for x in text.split(":"))
        return cls(n, e, d)


@dataclass(frozen=True)
class Signature:
    value: int


@dataclass(frozen=True)
class Envelope:
    wrapped_key: int
    body: bytes
    nonce: bytes


def _rng(rng: Optional[random.Random]) -> random.Random:
    return rng if rng is not None else random.SystemRandom()


def _random_prime(bits: int, rng: random.Random) -> int:
    while True:
        # top two bits set so that p*q has exactly 2*bits bits
        candidate = rng.getrandbits(bits) | (0b11 << (bits - 2)) | 1
        if isprime(candidate):
            return candidate


def _choose_exponent(phi: int) -> int:
    if _PREFERRED_E < phi and math.gcd(_PREFERRED_E, phi) == 1:
        return _PREFERRED_E
    e = 3
    while math.gcd(e, phi) != 1:
        e += 2
    return e


def generate_keypair(bit_length: int = DEFAULT_BITS, rng: Optional[random.Random] = None) -> KeyPair:
    """Generate an RSA keypair whose modulus has exactly ``bit_length`` bits.

    Deterministic for a seeded ``rng``. Sizes below 16 bits are rejected.
    """
    if bit_length < MIN_BITS:
        raise ValueError(f"bit_length must be >= {MIN_BITS}, got {bit_length}")
    rng = _rng(rng)
    half = bit_length // 2
    while True:
        p = _random_prime(bit_length - half, rng)
        q = _random_prime(half, rng)
        if p == q:
            continue
        n = p * q
        if n.bit_length() != bit_length:
            continue
        phi = (p - 1) * (q - 1)
        e = _choose_exponent(phi)
        return KeyPair(n, e, pow(e, -1, phi), p, q)


def _factor_small(n: int) -> tuple[int, int]:
    if n % 2 == 0:
        return 2, n // 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return f, n // f
        f += 2
    raise ValueError(f"{n} is prime")


def is_valid_keypair(kp: KeyPair) -> bool:
    """Check n = p*q (distinct primes) and e*d = 1 mod (p-1)(q-1).

    Factors the modulus by trial division when p and q are not stored, so
    this is only practical for toy moduli in that case.
    """
    if kp.p is not None and kp.q is not None:
        p, q = kp.p, kp.q
    else:
        try:
            p, q = _factor_small(kp.modulus_n)
        except ValueError:
            return False
    if p == q or p * q != kp.modulus_n or not (isprime(p) and isprime(q)):
        return False
    return (kp.public_e * kp.private_d) % ((p - 1) * (q - 1)) == 1


def digest(data: bytes) -> bytes:
    """SHA-256 of ``data``."""
    return hashlib.sha256(data).digest()


def _digest_int(data: bytes, n: int) -> int:
    return int.from_bytes(digest(data), "big") % n


def sign(priv: KeyPair, message: bytes) -> Signature:
    """Hash-then-sign: the digest, reduced mod n, raised to d."""
    n = priv.modulus_n
    return Signature(pow(_digest_int(message, n), priv.private_d, n))


def verify(pub: PublicKey, message: bytes, sig: Signature) -> bool:
    if not 0 <= sig.value < pub.n:
        return False
    return pow(sig.value, pub.e, pub.n) == _digest_int(message, pub.n)


def _session_key(secret: int) -> bytes:
    return hashlib.sha256(b"appraide-envelope|" + format(secret, "x").encode()).digest()


def _wrapped_aad(wrapped: int) -> bytes:
    return format(wrapped, "x").encode()


def encrypt_envelope(pub: PublicKey, plaintext: bytes, rng: Optional[random.Random] = None) -> Envelope:
    rng = _rng(rng)
    if pub.n < 4:
        raise ValueError("modulus too small to wrap a session key")
    secret = rng.randrange(2, pub.n - 1)
    wrapped = pow(secret, pub.e, pub.n)
    nonce = rng.getrandbits(8 * NONCE_SIZE).to_bytes(NONCE_SIZE, "big")
    body = AESGCM(_session_key(secret)).encrypt(nonce, plaintext, _wrapped_aad(wrapped))
    return Envelope(wrapped, body, nonce)


def decrypt_envelope(priv: KeyPair, env: Envelope) -> bytes:
    """Open an envelope; raises :class:`IntegrityError` on any mismatch."""
    if len(env.nonce) != NONCE_SIZE:
        raise IntegrityError("bad nonce length")
    secret = pow(env.wrapped_key, priv.private_d, priv.modulus_n)
    try:
        return AESGCM(_session_key(secret)).decrypt(env.nonce, env.body, _wrapped_aad(env.wrapped_key))
    except InvalidTag as exc:
        raise IntegrityError("envelope authentication failed") from exc


# length-prefixed framing shared by the wire formats


def frame(*fields: bytes) -> bytes:
    return b"".join(len(f).to_bytes(4, "big") + f for f in fields)


def unframe(data: bytes) -> list[bytes]:
    out = []
    i = 0
    while i < len(data):
        if i + 4 > len(data):
            raise ValueError("truncated frame header")
        size = int.from_bytes(data[i:i + 4], "big")
        i += 4
        if i + size > len(data):
            raise ValueError("truncated frame body")
        out.append(data[i:i + size])
        i += size
    return out


def envelope_to_bytes(env: Envelope) -> bytes:
    return frame(format(env.wrapped_key, "x").encode(), env.nonce, env.body)


def envelope_from_bytes(data: bytes) -> Envelope:
    fields = unframe(data)
    if len(fields) != 3:
        raise ValueError("envelope needs 3 fields")
    return Envelope(int(fields[0], 16), fields[2], fields[1])
