"""Sign-then-encrypt private messages.

The sender signs the digest of the body with its private key, appends the
signature to the clear body and encrypts the whole under the receiver's
public key. The receiver decrypts, recomputes the digest and checks the
signature; any mismatch rejects the message and nothing is stored.

Wire layout (see ``docs/wire.md``): length-prefixed sender id, receiver id
and serialized envelope. Inside the envelope: length-prefixed body and the
signature as lowercase hex.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import MutableSequence, Optional, Union

from . import crypto_core as cc
from .crypto_core import Envelope, KeyPair, PublicKey, Signature
from .metadata import UserId

# peers are addressed by UserId, the server by a plain name
Principal = Union[UserId, str]


class MessageRejected(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class SignedMessage:
    sender: str
    receiver: str
    wire: Envelope

    def to_bytes(self) -> bytes:
        return cc.frame(self.sender.encode(), self.receiver.encode(), cc.envelope_to_bytes(self.wire))

    @classmethod
    def from_bytes(cls, data: bytes) -> SignedMessage:
        fields = cc.unframe(data)
        if len(fields) != 3:
            raise ValueError("signed message needs 3 fields")
        return cls(fields[0].decode(), fields[1].decode(), cc.envelope_from_bytes(fields[2]))


def compose_signed(sender: Principal, sender_keys: KeyPair, receiver: Principal, receiver_pub: PublicKey,
                   body: bytes, rng: Optional[random.Random] = None) -> SignedMessage:
    sig = cc.sign(sender_keys, cc.digest(body))
    inner = cc.frame(body, format(sig.value, "x").encode())
    return SignedMessage(str(sender), str(receiver), cc.encrypt_envelope(receiver_pub, inner, rng))


def receive_signed(receiver: Principal, receiver_keys: KeyPair, sender_pub: PublicKey, msg: SignedMessage,
                   store: Optional[MutableSequence[bytes]] = None) -> bytes:
    """Open and authenticate ``msg``; append the body to ``store`` on success."""
    if msg.receiver != str(receiver):
        raise MessageRejected("wrong-recipient")
    try:
        inner = cc.decrypt_envelope(receiver_keys, msg.wire)
        fields = cc.unframe(inner)
        if len(fields) != 2:
            raise ValueError("bad inner layout")
        body, sig_hex = fields
        sig = Signature(int(sig_hex, 16))
    except (cc.IntegrityError, ValueError) as exc:
        raise MessageRejected("integrity") from exc
    if not cc.verify(sender_pub, cc.digest(body), sig):
        raise MessageRejected("integrity")
    if store is not None:
        store.append(body)
    return body
