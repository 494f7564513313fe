"""Privacy Defender and Replication Manager decisions.

These are pure functions over publications, replicas and keyrings. The
simulator (:mod:`appraide.simnet`) drives them from network events:

* where a publication may be replicated, and in which form;
* whether a holder answers an access request, and what it duplicates;
* whether a viewer's feed shows a replica or hides it;
* what audience a reshared publication ends up with;
* signed deletion requests and confirmations.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Union

from . import crypto_core as cc
from .crypto_core import Envelope, KeyPair, PublicKey, Signature
from .metadata import (
    AccessRights,
    AudienceSpec,
    ClassAudience,
    Distribution,
    MeOnly,
    Origin,
    PersonList,
    Protection,
    Public,
    Publication,
    PublicationMetadata,
    UserId,
    audience_viewers,
    parse_metadata,
    serialize_metadata,
)

SERVER = "server"

ContentKey = tuple[UserId, int]


class EngineError(ValueError):
    pass


class Form(enum.Enum):
    CLEAR = "clear"
    ENCRYPTED = "encrypted"


@dataclass(frozen=True)
class Placement:
    holder: Union[UserId, str]
    form: Form


def place_and_replicate(pub: Publication, friends, known_classes=None) -> list[Placement]:
    """Where ``pub`` is replicated and in which form.

    Class content goes encrypted to every friend (the duplication peers),
    person-list content goes in clear to the listed persons only, public
    content sits in clear on the server and nowhere else, and owner-only
    content never leaves the owner.
    """
    meta = pub.metadata
    audience = meta.audience
    if isinstance(audience, MeOnly):
        return []
    if isinstance(audience, Public):
        return [Placement(SERVER, Form.CLEAR)]
    if not meta.rights.duplication_authorized:
        return []
    if isinstance(audience, PersonList):
        return [Placement(u, Form.CLEAR) for u in sorted(audience.members) if u != meta.owner]
    if known_classes is not None:
        for cid in audience.class_ids:
            if cid not in known_classes:
                raise EngineError(f"unknown connection class {cid!r}")
    return [Placement(u, Form.ENCRYPTED) for u in sorted(friends) if u != meta.owner]


@dataclass(frozen=True)
class ReplicaRecord:
    metadata: PublicationMetadata
    holder: UserId
    form: Form
    received_at: int
    body: Optional[bytes] = None
    envelope: Optional[Envelope] = None
    class_id: Optional[str] = None
    key_version: int = 0
    duplication_peers: frozenset[UserId] = frozenset()

    @property
    def key(self) -> ContentKey:
        return self.metadata.key

    @property
    def owner(self) -> UserId:
        return self.metadata.owner

    def to_payload(self) -> bytes:
        if self.form is Form.CLEAR:
            content = self.body
        else:
            content = cc.envelope_to_bytes(self.envelope)
        peers = ",".join(str(u) for u in sorted(self.duplication_peers))
        return cc.frame(serialize_metadata(self.metadata), self.form.value.encode(),
                        (self.class_id or "").encode(), str(self.key_version).encode(),
                        content, peers.encode())

    @classmethod
    def from_payload(cls, data: bytes, holder: UserId, received_at: int) -> ReplicaRecord:
        meta_xml, form, class_id, version, content, peers = cc.unframe(data)
        form = Form(form.decode())
        return cls(
            metadata=parse_metadata(meta_xml),
            holder=holder,
            form=form,
            received_at=received_at,
            body=content if form is Form.CLEAR else None,
            envelope=cc.envelope_from_bytes(content) if form is Form.ENCRYPTED else None,
            class_id=class_id.decode() or None,
            key_version=int(version),
            duplication_peers=frozenset(UserId.parse(p) for p in peers.decode().split(",") if p),
        )


def build_replica(pub: Publication, holder: UserId, form: Form, now: int, class_keys: Mapping[str, tuple[int, KeyPair]],
                  duplication_peers=frozenset(), rng: Optional[random.Random] = None) -> ReplicaRecord:
    """Make the copy the owner ships to ``holder``.

    ``class_keys`` maps each class id of the audience to its current
    (version, keypair). Encrypted copies use the first audience class the
    holder belongs to, or the first class otherwise.
    """
    meta = pub.metadata.for_duplication()
    if form is Form.CLEAR:
        return ReplicaRecord(meta, holder, form, now, body=pub.body, duplication_peers=duplication_peers)
    audience = meta.audience
    if not isinstance(audience, ClassAudience):
        raise EngineError("only class audiences are replicated encrypted")
    class_id = audience.class_ids[0]
    version, keypair = class_keys[class_id]
    env = cc.encrypt_envelope(keypair.public, pub.body, rng)
    return ReplicaRecord(meta, holder, form, now, envelope=env, class_id=class_id, key_version=version,
                         duplication_peers=duplication_peers)


class Deny(enum.Enum):
    NOT_AUTHORIZED = "not-authorized"
    UNKNOWN_CONTENT = "unknown-content"


@dataclass(frozen=True)
class AccessDecision:
    allowed: bool
    duplicate: Optional[Form] = None
    reason: Optional[Deny] = None


def handle_access_request(requester: UserId, item: Union[Publication, ReplicaRecord, None], *,
                          duplication_peers=frozenset(), blocked=frozenset()) -> AccessDecision:
    """Answer ``requester`` asking the local holder for ``item``.

    ``item`` is the owner's own :class:`Publication` or a replica this peer
    stores. ``duplication_peers`` is the owner's duplication table (for a
    replica, the snapshot that came with it). A denial never carries clear
    content: at most the encrypted form goes to a duplication peer.
    """
    if item is None:
        return AccessDecision(False, reason=Deny.UNKNOWN_CONTENT)
    meta = item.metadata
    if requester in blocked:
        return AccessDecision(False, reason=Deny.NOT_AUTHORIZED)
    audience = meta.audience
    if isinstance(audience, Public):
        return AccessDecision(True)
    if isinstance(audience, MeOnly) or requester == meta.owner:
        return AccessDecision(requester == meta.owner)
    dup_ok = meta.rights.duplication_authorized
    if isinstance(item, ReplicaRecord) and item.form is Form.CLEAR and not isinstance(audience, PersonList):
        return AccessDecision(False, reason=Deny.NOT_AUTHORIZED)
    if isinstance(audience, PersonList):
        if requester in audience.members:
            return AccessDecision(True, Form.CLEAR if dup_ok else None)
        return AccessDecision(False, reason=Deny.NOT_AUTHORIZED)
    if requester in audience.members:
        return AccessDecision(True, Form.ENCRYPTED if dup_ok else None)
    if dup_ok and requester in duplication_peers:
        return AccessDecision(False, Form.ENCRYPTED, Deny.NOT_AUTHORIZED)
    return AccessDecision(False, reason=Deny.NOT_AUTHORIZED)


Keyring = Mapping[tuple[UserId, str], Mapping[int, KeyPair]]


def render_feed_item(viewer: UserId, replica: Union[ReplicaRecord, Publication], keyring: Keyring,
                     hidden_authors=frozenset()) -> Optional[bytes]:
    """Plaintext if the viewer may see this item, else ``None`` (hidden).

    The audience check comes first: holding the class key is not enough.
    """
    meta = replica.metadata
    if meta.owner in hidden_authors or (meta.origin is not None and meta.origin.owner in hidden_authors):
        return None
    viewers = meta.viewers()
    if viewers is not None and viewer not in viewers:
        return None
    if isinstance(replica, Publication):
        return replica.body
    if replica.form is Form.CLEAR:
        return replica.body
    key = keyring.get((meta.owner, replica.class_id), {}).get(replica.key_version)
    if key is None:
        return None
    try:
        return cc.decrypt_envelope(key, replica.envelope)
    except cc.IntegrityError:
        return None


class ReshareDenied(EngineError):
    pass


def _intersect(a: Optional[frozenset], b: Optional[frozenset]) -> Optional[frozenset]:
    if a is None:
        return b
    if b is None:
        return a
    return a & b


def reshare_audience(resharer: UserId, original: PublicationMetadata, new_audience: AudienceSpec) -> AudienceSpec:
    """Audience of a reshare: the new choice narrowed to the original's viewers.

    Raises :class:`ReshareDenied` when the original forbids distribution.
    """
    rights = original.rights
    if resharer != original.owner and rights.distribution is Distribution.NONE:
        raise ReshareDenied("no-distribution")
    allowed = original.viewers()
    if rights.distribution is Distribution.RESTRICTED:
        allowed = _intersect(allowed, rights.distribution_to | {original.owner})
    effective = _intersect(audience_viewers(resharer, new_audience), allowed)
    if effective is None:
        return Public()
    others = frozenset(effective - {resharer})
    if isinstance(new_audience, MeOnly) or not others:
        return MeOnly()
    if isinstance(new_audience, ClassAudience):
        return replace(new_audience, members=others)
    return PersonList(others)


def reshare(resharer: UserId, original: PublicationMetadata, plaintext: bytes, new_audience: AudienceSpec,
            content_id: int) -> Publication:
    """Derived publication owned by ``resharer``, carrying the original's origin."""
    audience = reshare_audience(resharer, original, new_audience)
    src = original.rights
    if isinstance(audience, Public):
        protection = Protection.CLEAR
    elif isinstance(audience, ClassAudience):
        protection = Protection.ENCRYPTED
    else:
        protection = Protection.CLEAR
    rights = AccessRights(src.distribution, protection, not isinstance(audience, (MeOnly, Public)),
                          src.distribution_to)
    origin = original.origin or Origin(original.owner, original.content_id)
    meta = PublicationMetadata(resharer, content_id, original.publication_type, original.science,
                               original.level, audience, rights, origin)
    return Publication(meta, plaintext)


# deletion


@dataclass(frozen=True)
class DeletionRequest:
    owner: UserId
    content_id: Optional[int]
    owner_signature: Signature
    pending_holders: frozenset[UserId] = frozenset()

    @property
    def scope(self) -> str:
        return "account" if self.content_id is None else "content"

    @property
    def request_id(self) -> tuple[UserId, Optional[int]]:
        return (self.owner, self.content_id)

    def signed_bytes(self) -> bytes:
        return deletion_signed_bytes(self.owner, self.content_id)

    def to_text(self) -> str:
        pending = ",".join(str(u) for u in sorted(self.pending_holders))
        cid = "-" if self.content_id is None else str(self.content_id)
        return (f"owner: {self.owner}\ncontent_id: {cid}\nscope: {self.scope}\n"
                f"signature: {self.owner_signature.value:x}\npending: {pending}\n")

    @classmethod
    def from_text(cls, text: str) -> DeletionRequest:
        f = _fields(text)
        cid = None if f["content_id"] == "-" else int(f["content_id"])
        if (cid is None) != (f["scope"] == "account"):
            raise ValueError("scope does not match content_id")
        pending = frozenset(UserId.parse(u) for u in f["pending"].split(",") if u)
        return cls(UserId.parse(f["owner"]), cid, Signature(int(f["signature"], 16)), pending)


def deletion_signed_bytes(owner: UserId, content_id: Optional[int]) -> bytes:
    scope = "account" if content_id is None else "content"
    cid = "-" if content_id is None else str(content_id)
    return f"DELETE|{owner}|{cid}|{scope}".encode()


def make_deletion_request(owner: UserId, owner_keys: KeyPair, content_id: Optional[int],
                          pending_holders=frozenset()) -> DeletionRequest:
    sig = cc.sign(owner_keys, deletion_signed_bytes(owner, content_id))
    return DeletionRequest(owner, content_id, sig, frozenset(pending_holders))


def verify_deletion_request(req: DeletionRequest, owner_pub: PublicKey) -> bool:
    return cc.verify(owner_pub, req.signed_bytes(), req.owner_signature)


@dataclass(frozen=True)
class DeletionConfirmation:
    owner: UserId
    content_id: Optional[int]
    confirming_holder: UserId
    holder_signature: Signature

    def signed_bytes(self) -> bytes:
        return confirmation_signed_bytes(self.owner, self.content_id, self.confirming_holder)

    def to_text(self) -> str:
        cid = "-" if self.content_id is None else str(self.content_id)
        return (f"owner: {self.owner}\ncontent_id: {cid}\nholder: {self.confirming_holder}\n"
                f"signature: {self.holder_signature.value:x}\n")

    @classmethod
    def from_text(cls, text: str) -> DeletionConfirmation:
        f = _fields(text)
        cid = None if f["content_id"] == "-" else int(f["content_id"])
        return cls(UserId.parse(f["owner"]), cid, UserId.parse(f["holder"]), Signature(int(f["signature"], 16)))


def confirmation_signed_bytes(owner: UserId, content_id: Optional[int], holder: UserId) -> bytes:
    cid = "-" if content_id is None else str(content_id)
    return f"DELETED|{owner}|{cid}|{holder}".encode()


def confirm_deletion(req: DeletionRequest, holder: UserId, holder_keys: KeyPair) -> DeletionConfirmation:
    sig = cc.sign(holder_keys, confirmation_signed_bytes(req.owner, req.content_id, holder))
    return DeletionConfirmation(req.owner, req.content_id, holder, sig)


def verify_confirmation(conf: DeletionConfirmation, holder_pub: PublicKey) -> bool:
    return cc.verify(holder_pub, conf.signed_bytes(), conf.holder_signature)


def covered_by(req: DeletionRequest, meta: PublicationMetadata) -> bool:
    """Whether a deletion request reaches this publication or replica.

    Reshares are covered through their origin: deleting a post also removes
    the copies other users reshared.
    """
    refs = [meta.key]
    if meta.origin is not None:
        refs.append((meta.origin.owner, meta.origin.content_id))
    for owner, cid in refs:
        if owner == req.owner and (req.content_id is None or req.content_id == cid):
            return True
    return False


def _fields(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise ValueError(f"malformed record line {line!r}")
        out[key.strip()] = value.strip()
    return out
