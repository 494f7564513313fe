"""Anonymous credentials built on RSA blind signatures.

The learner blinds a value with a random factor ``r``, the issuer signs the
blinded value without seeing it, and the learner strips ``r`` to obtain an
ordinary RSA signature. A credential is a blind signature over the
pseudonym, the attestation and the issuer's plain signature of that
attestation, so a verifier can check it against the issuer's public key
without ever learning who the learner was at the issuer.

Verifiers keep a revocation list of presented pseudonyms so a credential is
only ever accepted once.
"""

from __future__ import annotations

import base64
import enum
import math
import random
import threading
from dataclasses import dataclass, field
from typing import Optional, Union

from . import crypto_core as cc
from .crypto_core import Envelope, KeyPair, PublicKey, Signature


@dataclass(frozen=True)
class BlindingState:
    r: int
    r_inverse: int
    signer_modulus: int


def blind(u: int, signer_pub: PublicKey, rng: Optional[random.Random] = None,
          r: Optional[int] = None) -> tuple[int, BlindingState]:
    """Compute ``t = u * r^e mod N``.

    ``r`` is drawn from ``rng`` (redrawn until coprime with N) unless given
    explicitly, which the worked examples use.
    """
    n, e = signer_pub.n, signer_pub.e
    if not 0 < u < n:
        raise ValueError(f"pseudonym must satisfy 0 < u < N (u={u}, N={n})")
    if r is None:
        rng = rng if rng is not None else random.SystemRandom()
        r = rng.randrange(1, n)
        while math.gcd(r, n) != 1:
            r = rng.randrange(1, n)
    elif math.gcd(r, n) != 1:
        raise ValueError("blinding factor must be coprime with N")
    t = (u * pow(r, e, n)) % n
    return t, BlindingState(r, pow(r, -1, n), n)


def sign_blinded(t: int, signer_priv: KeyPair) -> int:
    n = signer_priv.modulus_n
    if not 0 <= t < n:
        raise ValueError("blinded value out of range")
    return pow(t, signer_priv.private_d, n)


def unblind(t_prime: int, state: BlindingState) -> int:
    return (t_prime * state.r_inverse) % state.signer_modulus


def encode_message(u: int, m: bytes, inner: Signature, n: int) -> int:
    """Map ``u || m || S_SK(m)`` into the signing domain [1, N-1].

    The three parts are length-prefixed (u and the signature as lowercase
    hex) and hashed with SHA-256; the digest is reduced into [1, N-1] so the
    blinding precondition ``0 < M < N`` always holds.
    """
    packed = cc.frame(format(u, "x").encode(), m, format(inner.value, "x").encode())
    return 1 + int.from_bytes(cc.digest(packed), "big") % (n - 1)


@dataclass(frozen=True)
class AnonymousCredential:
    pseudonym_u: int
    message_m: bytes
    inner_signature: Signature
    blind_signature_s: int


class Issuer:
    """The e-learning system side of the issuing protocol.

    Every value the issuer receives is appended to ``transcript`` so tests
    can check that the learner's pseudonym never reaches it in the clear.
    """

    def __init__(self, keys: KeyPair):
        self.keys = keys
        self.transcript: list[Union[int, bytes]] = []

    @property
    def public(self) -> PublicKey:
        return self.keys.public

    def sign_attestation(self, m: bytes) -> Signature:
        self.transcript.append(m)
        return cc.sign(self.keys, m)

    def sign_blinded(self, t: int) -> int:
        self.transcript.append(t)
        return sign_blinded(t, self.keys)


def issue_credential(u: int, m: bytes, issuer: Union[Issuer, KeyPair],
                     rng: Optional[random.Random] = None) -> AnonymousCredential:
    if isinstance(issuer, KeyPair):
        issuer = Issuer(issuer)
    inner = issuer.sign_attestation(m)
    big_m = encode_message(u, m, inner, issuer.public.n)
    t, state = blind(big_m, issuer.public, rng)
    s = unblind(issuer.sign_blinded(t), state)
    return AnonymousCredential(u, m, inner, s)


def verify_credential(cred: AnonymousCredential, issuer_pub: PublicKey) -> bool:
    if not cc.verify(issuer_pub, cred.message_m, cred.inner_signature):
        return False
    if not 0 <= cred.blind_signature_s < issuer_pub.n:
        return False
    expected = encode_message(cred.pseudonym_u, cred.message_m, cred.inner_signature, issuer_pub.n)
    return pow(cred.blind_signature_s, issuer_pub.e, issuer_pub.n) == expected


class Presentation(enum.Enum):
    ACCEPTED = "accept"
    BAD_SIGNATURE = "bad-signature"
    ALREADY_USED = "already-used"

    @property
    def accepted(self) -> bool:
        return self is Presentation.ACCEPTED


@dataclass
class RACL:
    """Revocation of Anonymous Credentials List: pseudonyms already presented."""

    used_pseudonyms: set[int] = field(default_factory=set)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def __contains__(self, u: int) -> bool:
        return u in self.used_pseudonyms

    def __len__(self) -> int:
        return len(self.used_pseudonyms)

    def insert_if_absent(self, u: int) -> bool:
        with self._lock:
            if u in self.used_pseudonyms:
                return False
            self.used_pseudonyms.add(u)
            return True


def present_credential(cred: AnonymousCredential, issuer_pub: PublicKey, racl: RACL) -> Presentation:
    """Signature check first, then the RACL lookup; inserts u on acceptance."""
    if not verify_credential(cred, issuer_pub):
        return Presentation.BAD_SIGNATURE
    if not racl.insert_if_absent(cred.pseudonym_u):
        return Presentation.ALREADY_USED
    return Presentation.ACCEPTED


# blind digital certificates


class RevealRejected(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class BlindDigitalCertificate:
    encrypted_identity_y: Envelope
    holder_public_key: PublicKey
    ca_signature: Signature

    def signed_part(self) -> bytes:
        """Canonical bytes of ``z = [y, PK]``."""
        return cc.frame(cc.envelope_to_bytes(self.encrypted_identity_y),
                        self.holder_public_key.to_hex().encode())


def create_bdc(identity_p: bytes, ca_keys: KeyPair, rng: Optional[random.Random] = None,
               holder_bits: int = 512) -> tuple[BlindDigitalCertificate, KeyPair]:
    holder = cc.generate_keypair(holder_bits, rng)
    y = cc.encrypt_envelope(holder.public, identity_p, rng)
    unsigned = BlindDigitalCertificate(y, holder.public, Signature(0))
    sig = cc.sign(ca_keys, unsigned.signed_part())
    return BlindDigitalCertificate(y, holder.public, sig), holder


def reveal_bdc(bdc: BlindDigitalCertificate, holder_private: KeyPair, ca_pub: PublicKey) -> bytes:
    if not cc.verify(ca_pub, bdc.signed_part(), bdc.ca_signature):
        raise RevealRejected("bad-ca-signature")
    try:
        return cc.decrypt_envelope(holder_private, bdc.encrypted_identity_y)
    except cc.IntegrityError as exc:
        raise RevealRejected("decryption-failure") from exc


# structured-text record

_CRED_FIELDS = ("issuer_n", "issuer_e", "pseudonym_u", "message_m", "inner_signature", "blind_signature_s")


def dump_credential(cred: AnonymousCredential, issuer_pub: PublicKey) -> str:
    values = {
        "issuer_n": f"{issuer_pub.n:x}",
        "issuer_e": f"{issuer_pub.e:x}",
        "pseudonym_u": f"{cred.pseudonym_u:x}",
        "message_m": base64.b64encode(cred.message_m).decode(),
        "inner_signature": f"{cred.inner_signature.value:x}",
        "blind_signature_s": f"{cred.blind_signature_s:x}",
    }
    return "".join(f"{k}: {values[k]}\n" for k in _CRED_FIELDS)


def load_credential(text: str) -> tuple[AnonymousCredential, PublicKey]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition(":")
        if not sep or key.strip() not in _CRED_FIELDS:
            raise ValueError(f"line {lineno}: unexpected entry {line!r}")
        values[key.strip()] = value.strip()
    missing = [k for k in _CRED_FIELDS if k not in values]
    if missing:
        raise ValueError(f"missing fields: {', '.join(missing)}")
    cred = AnonymousCredential(
        int(values["pseudonym_u"], 16),
        base64.b64decode(values["message_m"]),
        Signature(int(values["inner_signature"], 16)),
        int(values["blind_signature_s"], 16),
    )
    return cred, PublicKey(int(values["issuer_n"], 16), int(values["issuer_e"], 16))
