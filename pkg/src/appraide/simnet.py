"""Deterministic discrete-event simulation of peers and the central server.

Every cross-node interaction is a signed, enveloped wire message delivered
``latency`` ticks after it is sent. A message for a peer that is offline is
kept by its sender and flushed when the server announces the peer again.
The server only holds what a hybrid architecture needs: the directory, the
credential digests, public posts, deletion escrow, reputation and the RACL.

After every tick a scanner checks the confidentiality and locality
invariants against the ground truth the world keeps on the side (the
catalog of every publication ever made). Violations are collected in
``world.violations``; peers never read that catalog.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import logging
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Optional, Union

from . import crypto_core as cc
from . import engine
from . import matching as mt
from .credentials import RACL
from .crypto_core import KeyPair, PublicKey
from .engine import (
    SERVER,
    DeletionConfirmation,
    DeletionRequest,
    Form,
    ReplicaRecord,
)
from .messaging import MessageRejected, compose_signed, receive_signed
from .metadata import (
    MIN_PSEUDONYM,
    AccessRights,
    Distribution,
    Level,
    MeOnly,
    Public,
    Publication,
    PublicationMetadata,
    PublicationType,
    Role,
    UserId,
    default_rights,
    parse_metadata,
    serialize_metadata,
)
from .profile import KeyDelivery, Profile, ProfileError, SelfTestResult

log = logging.getLogger(__name__)

Address = Union[UserId, str]
ContentKey = tuple[UserId, int]

PBKDF2_ROUNDS = 1000
EVALUATION_MARKER = "rating="
MATCHING_KINDS = ("HELP_REQUEST", "HELP_BROADCAST_REQ", "HELP_BROADCAST", "OFFER", "SESSION_ACCEPT", "SESSION_END")

# event phases within one tick: deliveries and timers, then commands, then asserts
PHASE_DELIVERY = 0
PHASE_COMMAND = 1
PHASE_ASSERT = 2


class SimError(Exception):
    """A command that cannot run in the current world state."""


class RegistrationRejected(SimError):
    pass


class AuthRejected(SimError):
    pass


@dataclass
class SimConfig:
    seed: int = 0
    latency: int = 1
    key_bits: int = 64
    class_key_bits: int = 64
    offer_window: int = mt.OFFER_WINDOW


@dataclass
class Pending:
    """A message the sender keeps until the receiver is reachable."""

    receiver: Address
    kind: str
    fields: tuple[bytes, ...]
    content: Optional[ContentKey] = None


@dataclass
class HelpState:
    request_id: str
    request: mt.HelpRequest
    sent_at: int
    offers: list[mt.Offer] = field(default_factory=list)
    escalated: bool = False
    accepted: Optional[UserId] = None


@dataclass
class Session:
    session_id: str
    helpee: UserId
    helper: UserId
    ended: bool = False


@dataclass
class PeerNode:
    uid: UserId
    password: str
    keys: KeyPair
    profile: Profile
    connected: bool = False
    address: Optional[str] = None
    deleted: bool = False
    replicas: dict[ContentKey, ReplicaRecord] = field(default_factory=dict)
    # Replication Manager log: content -> holders it was sent to
    replication_log: dict[ContentKey, set[UserId]] = field(default_factory=dict)
    tombstones: list[DeletionRequest] = field(default_factory=list)
    dead_accounts: set[UserId] = field(default_factory=set)
    confirmations: dict[tuple[UserId, Optional[int]], set[UserId]] = field(default_factory=dict)
    outbox: list[Pending] = field(default_factory=list)
    inbox: list[bytes] = field(default_factory=list)
    feed: dict[ContentKey, Publication] = field(default_factory=dict)
    hidden_authors: set[UserId] = field(default_factory=set)
    reported: set[UserId] = field(default_factory=set)
    evaluations: mt.EvaluationStore = field(default_factory=mt.EvaluationStore)
    prefs: Optional[mt.HelperPreferences] = None
    auto_offer: bool = False
    incoming_requests: dict[str, mt.HelpRequest] = field(default_factory=dict)
    help_states: dict[str, HelpState] = field(default_factory=dict)
    sessions: dict[str, Session] = field(default_factory=dict)
    pending_warnings: dict[UserId, list[bool]] = field(default_factory=dict)
    warnings: list[tuple[UserId, mt.WarnOutcome]] = field(default_factory=list)

    @property
    def excluded(self) -> set[UserId]:
        return self.profile.blocked | self.profile.removed

    def is_tombstoned(self, meta: PublicationMetadata) -> bool:
        if meta.owner in self.dead_accounts:
            return True
        if meta.origin is not None and meta.origin.owner in self.dead_accounts:
            return True
        return any(engine.covered_by(req, meta) for req in self.tombstones)


@dataclass
class DirectoryEntry:
    uid: UserId
    pseudonym: str
    public_key: PublicKey
    active: bool
    connected: bool = False
    address: Optional[str] = None


@dataclass
class AbuseReportRecord:
    reporter: UserId
    offender: UserId
    category: mt.ReportCategory
    incident: str
    content_ref: str
    content_digest: str


class ServerNode:
    def __init__(self, keys: KeyPair):
        self.keys = keys
        self.directory: dict[UserId, DirectoryEntry] = {}
        # pseudonym -> (uid, salt, digest)
        self.credentials: dict[str, tuple[UserId, bytes, bytes]] = {}
        self.retired_keys: dict[UserId, PublicKey] = {}
        self.public_store: dict[ContentKey, Publication] = {}
        # holder -> escrowed deletion requests
        self.deletion_escrow: dict[UserId, list[DeletionRequest]] = {}
        self.confirmations: dict[tuple[UserId, Optional[int]], set[UserId]] = {}
        # owner -> confirmation records waiting for the owner to log in
        self.confirm_outbox: dict[UserId, list[str]] = {}
        self.reputation_table: dict[UserId, mt.ReputationRecord] = {}
        self.abuse_reports: list[AbuseReportRecord] = []
        self.racl = RACL()
        self.deleted_accounts: set[UserId] = set()

    @property
    def public(self) -> PublicKey:
        return self.keys.public

    def connected_users(self) -> list[UserId]:
        return sorted(u for u, e in self.directory.items() if e.connected)

    def reputation(self, uid: UserId) -> mt.ReputationRecord:
        return self.reputation_table.get(uid) or mt.ReputationRecord(uid)

    def escrow_count(self) -> int:
        return sum(len(v) for v in self.deletion_escrow.values())

    def state_text(self) -> str:
        """Everything the server stores, as text, for the minimality scan."""
        parts = []
        for e in self.directory.values():
            parts.append(f"dir {e.uid} {e.pseudonym} {e.public_key.to_hex()} {e.active} {e.connected} {e.address}")
        for pseudo, (uid, salt, dig) in self.credentials.items():
            parts.append(f"cred {pseudo} {uid} {salt.hex()} {dig.hex()}")
        for key, pub in self.public_store.items():
            parts.append(f"pub {key[0]}:{key[1]}")
            parts.append(serialize_metadata(pub.metadata).decode())
            parts.append(pub.body.decode("utf-8", "replace"))
        for holder, reqs in self.deletion_escrow.items():
            parts.extend(f"escrow {holder}\n{r.to_text()}" for r in reqs)
        for rid, holders in self.confirmations.items():
            parts.append(f"confirm {rid[0]}:{rid[1]} " + ",".join(str(h) for h in sorted(holders)))
        for owner, texts in self.confirm_outbox.items():
            parts.extend(f"confirm-out {owner}\n{t}" for t in texts)
        parts.append(mt.export_reputation_table(self.reputation_table.values()))
        for r in self.abuse_reports:
            parts.append(f"report {r.reporter} {r.offender} {r.category.value} {r.incident} {r.content_ref} "
                         f"{r.content_digest}")
        parts.append("racl " + ",".join(format(u, "x") for u in sorted(self.racl.used_pseudonyms)))
        return "\n".join(parts)


@dataclass
class AuditEntry:
    tick: int
    sender: str
    receiver: str
    kind: str
    plaintext: bytes


@dataclass
class RenderEvent:
    tick: int
    viewer: UserId
    key: ContentKey
    shown: bool


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


def _key_bytes(key: ContentKey) -> bytes:
    return f"{key[0]}:{key[1]}".encode()


def _parse_key(data: bytes) -> ContentKey:
    owner, _, cid = data.decode().rpartition(":")
    return UserId.parse(owner), int(cid)


def _publication_bytes(pub: Publication) -> tuple[bytes, bytes]:
    return serialize_metadata(pub.metadata), pub.body


class SimWorld:
    """Peers, the server, the event queue and the trace.

    Scenario code calls the command methods (``publish``, ``connect``...) at
    scheduled ticks through :meth:`at`; :meth:`run` drives the queue.
    """

    def __init__(self, config: Optional[SimConfig] = None):
        self.config = config or SimConfig()
        self.rng = random.Random(self.config.seed)
        self.clock = 0
        self._queue: list = []
        self._seq = itertools.count()
        self.trace: list[str] = []
        self.audit: list[AuditEntry] = []
        self.renders: list[RenderEvent] = []
        self.violations: list[str] = []
        self.errors: list[str] = []
        self.peers: dict[UserId, PeerNode] = {}
        self.by_pseudonym: dict[str, UserId] = {}
        self.server = ServerNode(cc.generate_keypair(self.config.key_bits, self.rng))
        # ground truth for the scanner only
        self.catalog: dict[ContentKey, Publication] = {}
        self.direct_bodies: list[bytes] = []
        self.self_test_tokens: list[str] = []
        self._next_uid = 1
        self._address_counter = itertools.count(1)
        self._scan_audit_from = 0
        self._scan_render_from = 0
        self._new_replicas: list[ReplicaRecord] = []
        self._request_counter = itertools.count(1)

    # event loop

    def at(self, tick: int, action: Callable[[], None], phase: int = PHASE_COMMAND) -> None:
        if tick < self.clock:
            raise SimError(f"cannot schedule at {tick}, clock is {self.clock}")
        heapq.heappush(self._queue, (tick, phase, next(self._seq), action))

    def pending_events(self) -> int:
        return len(self._queue)

    def step(self) -> bool:
        """Process every event of the next timestamp; False if the queue is empty."""
        if not self._queue:
            return False
        tick = self._queue[0][0]
        self.clock = tick
        while self._queue and self._queue[0][0] == tick:
            _, _, _, action = heapq.heappop(self._queue)
            action()
        self.scan()
        return True

    def run(self, until: Optional[int] = None) -> None:
        while self._queue and (until is None or self._queue[0][0] <= until):
            self.step()
        if until is not None and until > self.clock:
            self.clock = until

    def quiesce(self, max_ticks: int = 1000) -> None:
        """Run until no events remain (bounded)."""
        limit = self.clock + max_ticks
        self.run(until=limit)

    def _trace(self, node: Address, event: str, payload: bytes = b"") -> None:
        self.trace.append(f"{self.clock}|{node}|{event}|{_digest(payload)}")

    def trace_text(self) -> str:
        return "".join(line + "\n" for line in self.trace)

    def error(self, node: Address, reason: str) -> None:
        self.errors.append(f"{self.clock} {node} {reason}")
        log.debug("tick %d %s: %s", self.clock, node, reason)
        self._trace(node, f"error:{reason}")

    # keys and addressing

    def lookup_key(self, who: Address) -> Optional[PublicKey]:
        if who == SERVER:
            return self.server.public
        entry = self.server.directory.get(who)
        if entry is not None:
            return entry.public_key
        return self.server.retired_keys.get(who)

    def _keys_of(self, who: Address) -> KeyPair:
        return self.server.keys if who == SERVER else self.peers[who].keys

    def is_connected(self, who: Address) -> bool:
        if who == SERVER:
            return True
        peer = self.peers.get(who)
        return peer is not None and peer.connected and not peer.deleted

    def peer(self, ref: Union[str, UserId]) -> PeerNode:
        if isinstance(ref, UserId):
            uid = ref
        elif ref in self.by_pseudonym:
            uid = self.by_pseudonym[ref]
        else:
            try:
                uid = UserId.parse(ref)
            except ValueError:
                raise SimError(f"unknown user {ref!r}") from None
        if uid not in self.peers:
            raise SimError(f"unknown user {ref!r}")
        return self.peers[uid]

    # wire

    def send(self, sender: Address, receiver: Address, kind: str, *fields: bytes,
             content: Optional[ContentKey] = None) -> None:
        item = Pending(receiver, kind, tuple(fields), content)
        if receiver != SERVER and not self.is_connected(receiver):
            self._hold(sender, item)
            return
        self._transmit(sender, item)

    def _transmit(self, sender: Address, item: Pending) -> None:
        payload = cc.frame(item.kind.encode(), *item.fields)
        pub = self.lookup_key(item.receiver)
        if pub is None:
            self.error(sender, f"no-key-for:{item.receiver}")
            return
        msg = compose_signed(sender, self._keys_of(sender), item.receiver, pub, payload, self.rng)
        self.audit.append(AuditEntry(self.clock, str(sender), str(item.receiver), item.kind, payload))
        self._trace(sender, f"send:{item.kind}>{item.receiver}", msg.to_bytes())
        self.at(self.clock + self.config.latency, lambda: self._deliver(sender, item, msg), PHASE_DELIVERY)

    def _hold(self, sender: Address, item: Pending) -> None:
        if sender == SERVER:
            if item.kind == "CONFIRM_FORWARD":
                self.server.confirm_outbox.setdefault(item.receiver, []).append(item.fields[0].decode())
            self._trace(SERVER, f"drop:{item.kind}>{item.receiver}")
            return
        peer = self.peers[sender]
        if peer.deleted or (isinstance(item.receiver, UserId) and item.receiver in self.server.deleted_accounts):
            return
        peer.outbox.append(item)
        self._trace(sender, f"queue:{item.kind}>{item.receiver}")

    def _deliver(self, sender: Address, item: Pending, msg) -> None:
        receiver = item.receiver
        if receiver != SERVER and not self.is_connected(receiver):
            self._trace(receiver, f"bounce:{item.kind}<{sender}")
            self._hold(sender, item)
            return
        sender_pub = self.lookup_key(sender)
        try:
            payload = receive_signed(receiver, self._keys_of(receiver), sender_pub, msg)
        except MessageRejected as exc:
            self.error(receiver, f"rejected:{exc.reason}")
            return
        kind, *fields = cc.unframe(payload)
        kind = kind.decode()
        self._trace(receiver, f"recv:{kind}<{sender}", payload)
        try:
            if receiver == SERVER:
                self._server_receive(sender, kind, fields)
            else:
                self._peer_receive(self.peers[receiver], sender, kind, fields)
        except (SimError, ValueError) as exc:
            self.error(receiver, f"{kind}:{exc}")

    def _flush(self, sender: UserId, receiver: UserId) -> None:
        peer = self.peers[sender]
        if not self.is_connected(sender):
            return
        keep, ready = [], []
        for item in peer.outbox:
            (ready if item.receiver == receiver else keep).append(item)
        peer.outbox = keep
        for item in ready:
            if item.content is not None and item.kind == "REPLICA" and item.content not in self._live_keys(peer):
                continue
            self.send(sender, receiver, item.kind, *item.fields, content=item.content)

    def _live_keys(self, peer: PeerNode) -> set[ContentKey]:
        return {p.metadata.key for p in peer.profile.publications.values()}

    # registration and sessions

    def register(self, pseudonym: str, password: str, role: Role) -> UserId:
        if len(pseudonym) < MIN_PSEUDONYM:
            raise RegistrationRejected("pseudonym-too-short")
        if pseudonym in self.server.credentials or pseudonym in self.by_pseudonym:
            raise RegistrationRejected("pseudonym-taken")
        uid = UserId(role, self._next_uid, pseudonym)
        self._next_uid += 1
        keys = cc.generate_keypair(self.config.key_bits, self.rng)
        profile = Profile(uid, keys, self.rng, self.config.class_key_bits)
        self.peers[uid] = PeerNode(uid, password, keys, profile)
        self.by_pseudonym[pseudonym] = uid
        salt = self.rng.getrandbits(128).to_bytes(16, "big")
        digest = hashlib.pbkdf2_hmac("sha256", password.encode(), salt, PBKDF2_ROUNDS)
        self.server.credentials[pseudonym] = (uid, salt, digest)
        self.server.directory[uid] = DirectoryEntry(uid, pseudonym, keys.public, active=role is Role.APPRENANT)
        self._trace(SERVER, f"register:{uid}", pseudonym.encode())
        return uid

    def approve_teacher(self, ref) -> None:
        uid = self.peer(ref).uid
        entry = self.server.directory.get(uid)
        if entry is None or uid.role is not Role.ENSEIGNANT:
            raise SimError(f"{ref} is not a registered teacher")
        entry.active = True
        self._trace(SERVER, f"approve:{uid}")

    def authenticate(self, pseudonym: str, password: str) -> UserId:
        record = self.server.credentials.get(pseudonym)
        if record is None:
            raise AuthRejected("bad-credentials")
        uid, salt, digest = record
        if hashlib.pbkdf2_hmac("sha256", password.encode(), salt, PBKDF2_ROUNDS) != digest:
            raise AuthRejected("bad-credentials")
        entry = self.server.directory[uid]
        if not entry.active:
            raise AuthRejected("pending-approval")
        if self.server.reputation(uid).suspended:
            raise AuthRejected("suspended")
        return uid

    def connect(self, ref) -> None:
        peer = self.peer(ref)
        if peer.deleted:
            raise AuthRejected("account-deleted")
        if peer.connected:
            return
        uid = self.authenticate(peer.uid.pseudonym, peer.password)
        entry = self.server.directory[uid]
        entry.connected = True
        entry.address = f"addr-{next(self._address_counter):04d}"
        peer.connected = True
        peer.address = entry.address
        self._trace(uid, "connect", entry.address.encode())
        self._on_login(uid)

    def disconnect(self, ref) -> None:
        peer = self.peer(ref)
        if not peer.connected:
            return
        peer.connected = False
        peer.address = None
        entry = self.server.directory.get(peer.uid)
        if entry is not None:
            entry.connected = False
            entry.address = None
        self._trace(peer.uid, "disconnect")

    def _on_login(self, uid: UserId) -> None:
        server = self.server
        fields = []
        for key in server.public_store:
            fields.extend(_publication_bytes(server.public_store[key]))
        self.send(SERVER, uid, "PUBLIC_SYNC", *fields)
        for req in server.deletion_escrow.get(uid, []):
            self.send(SERVER, uid, "DELETE_REQUEST", req.to_text().encode())
        for text in server.confirm_outbox.pop(uid, []):
            self.send(SERVER, uid, "CONFIRM_FORWARD", text.encode())
        online = [u for u in server.connected_users() if u != uid]
        self.send(SERVER, uid, "ONLINE", ",".join(str(u) for u in online).encode())
        for other in online:
            self.send(SERVER, other, "PRESENCE", str(uid).encode())

    # social graph

    def befriend(self, a_ref, b_ref) -> None:
        a, b = self.peer(a_ref), self.peer(b_ref)
        for x, y in ((a, b), (b, a)):
            try:
                x.profile.add_friend(y.uid, y.keys.public)
            except ProfileError as exc:
                raise SimError(str(exc)) from exc
        self._trace(a.uid, f"befriend:{b.uid}")
        for x, y in ((a, b), (b, a)):
            if self.is_connected(x.uid):
                for pub in list(x.profile.publications.values()):
                    self._replicate(x, pub, only=y.uid)

    def unfriend(self, a_ref, b_ref) -> None:
        a, b = self.peer(a_ref), self.peer(b_ref)
        self._require_connected(a)
        self._send_keys(a, a.profile.unfriend(b.uid))
        b.profile.friends.discard(a.uid)
        self._trace(a.uid, f"unfriend:{b.uid}")

    def assign_class(self, owner_ref, member_ref, class_ref: str) -> None:
        owner, member = self.peer(owner_ref), self.peer(member_ref)
        self._require_connected(owner)
        try:
            deliveries = owner.profile.assign_to_class(member.uid, class_ref)
        except ProfileError as exc:
            raise SimError(str(exc)) from exc
        self._trace(owner.uid, f"assign:{member.uid}>{class_ref}")
        self._send_keys(owner, deliveries)

    def remove_class(self, owner_ref, member_ref, class_ref: str) -> None:
        owner, member = self.peer(owner_ref), self.peer(member_ref)
        self._require_connected(owner)
        try:
            deliveries = owner.profile.remove_from_class(member.uid, class_ref)
        except ProfileError as exc:
            raise SimError(str(exc)) from exc
        self._trace(owner.uid, f"unassign:{member.uid}>{class_ref}")
        self._send_keys(owner, deliveries)

    def _send_keys(self, owner: PeerNode, deliveries: Iterable[KeyDelivery]) -> None:
        for d in deliveries:
            self.send(owner.uid, d.recipient, "KEY_DELIVERY", d.to_payload())

    def _require_connected(self, peer: PeerNode) -> None:
        if peer.deleted:
            raise SimError(f"{peer.uid} has deleted its account")
        if not peer.connected:
            raise SimError(f"{peer.uid} is not connected")

    # publishing and replication

    def publish(self, owner_ref, publication_type: PublicationType, science: str, level: Level, audience_choice,
                body: bytes, distribution: Union[Distribution, frozenset, None] = None) -> ContentKey:
        owner = self.peer(owner_ref)
        self._require_connected(owner)
        try:
            audience = owner.profile.resolve_audience(audience_choice)
        except (ProfileError, ValueError) as exc:
            raise SimError(str(exc)) from exc
        rights = default_rights(audience)
        if isinstance(distribution, Distribution):
            rights = AccessRights(distribution, rights.replication_protection, rights.duplication_authorized)
        elif distribution is not None:
            rights = AccessRights(Distribution.RESTRICTED, rights.replication_protection,
                                  rights.duplication_authorized, frozenset(distribution))
        pub = owner.profile.publish(publication_type, science, level, audience_choice, body, rights)
        self._register_publication(owner, pub)
        return pub.metadata.key

    def _register_publication(self, owner: PeerNode, pub: Publication) -> None:
        key = pub.metadata.key
        self.catalog[key] = pub
        self._trace(owner.uid, f"publish:{key[0]}:{key[1]}", serialize_metadata(pub.metadata))
        if isinstance(pub.metadata.audience, Public):
            self.send(owner.uid, SERVER, "PUBLIC_POST", *_publication_bytes(pub), content=key)
        else:
            self._replicate(owner, pub)

    def _replicate(self, owner: PeerNode, pub: Publication, only: Optional[UserId] = None) -> None:
        """Send replicas per the placement plan to holders not served yet."""
        if isinstance(pub.metadata.audience, (Public, MeOnly)):
            return
        key = pub.metadata.key
        dup_peers = owner.profile.duplication_peers()
        plan = engine.place_and_replicate(pub, dup_peers)
        served = owner.replication_log.setdefault(key, set())
        class_keys = {}
        for placement in plan:
            holder = placement.holder
            if holder in served or holder in owner.profile.blocked or (only is not None and holder != only):
                continue
            if holder in owner.dead_accounts or holder not in self.peers:
                continue
            if placement.form is Form.ENCRYPTED and not class_keys:
                class_keys = {cid: owner.profile.class_key(cid) for cid in pub.metadata.audience.class_ids}
            rec = engine.build_replica(pub, holder, placement.form, self.clock, class_keys,
                                       frozenset(dup_peers), self.rng)
            served.add(holder)
            self.send(owner.uid, holder, "REPLICA", rec.to_payload(), content=key)

    def view(self, viewer_ref, key: ContentKey) -> Optional[bytes]:
        """Render locally if a copy is held, else ask the owner for access."""
        viewer = self.peer(viewer_ref)
        self._require_connected(viewer)
        item = self._local_item(viewer, key)
        if item is not None:
            return self._render(viewer, item)
        owner = key[0]
        self.send(viewer.uid, owner, "ACCESS_REQUEST", _key_bytes(key))
        return None

    def _local_item(self, peer: PeerNode, key: ContentKey):
        if key[0] == peer.uid:
            return peer.profile.publications.get(key[1])
        return peer.replicas.get(key) or peer.feed.get(key)

    def _render(self, viewer: PeerNode, item) -> Optional[bytes]:
        hidden = viewer.hidden_authors | viewer.profile.blocked
        if item.metadata.owner == viewer.uid:
            hidden = set()
        out = engine.render_feed_item(viewer.uid, item, viewer.profile.keyring, hidden)
        key = item.metadata.key
        self.renders.append(RenderEvent(self.clock, viewer.uid, key, out is not None))
        self._trace(viewer.uid, f"render:{key[0]}:{key[1]}:{'shown' if out is not None else 'hidden'}")
        return out

    def can_render(self, viewer_ref, key: ContentKey) -> bool:
        """Assertion helper: whether the viewer's local state renders ``key``."""
        viewer = self.peer(viewer_ref)
        item = self._local_item(viewer, key)
        return item is not None and self._render(viewer, item) is not None

    def reshare(self, resharer_ref, key: ContentKey, audience_choice) -> ContentKey:
        peer = self.peer(resharer_ref)
        self._require_connected(peer)
        item = self._local_item(peer, key)
        plaintext = self._render(peer, item) if item is not None else None
        if plaintext is None:
            raise SimError("resharer cannot render the original")
        try:
            audience = peer.profile.resolve_audience(audience_choice)
            derived = engine.reshare(peer.uid, item.metadata, plaintext, audience, peer.profile.allocate_content_id())
        except (ProfileError, ValueError) as exc:
            raise SimError(str(exc)) from exc
        peer.profile.store(derived)
        self._register_publication(peer, derived)
        return derived.metadata.key

    # messaging and local records

    def send_message(self, sender_ref, receiver_ref, body: bytes) -> None:
        sender, receiver = self.peer(sender_ref), self.peer(receiver_ref)
        self._require_connected(sender)
        if receiver.uid in sender.profile.blocked:
            raise SimError("receiver is blocked")
        self.direct_bodies.append(body)
        self.send(sender.uid, receiver.uid, "DIRECT", body)

    def self_test(self, ref, test_id: str, score: Fraction) -> None:
        peer = self.peer(ref)
        peer.profile.record_self_test(SelfTestResult(peer.uid, test_id, score, self.clock))
        self.self_test_tokens.append(test_id)
        self._trace(peer.uid, "self-test")

    # deletion

    def delete_content(self, owner_ref, cid: int) -> DeletionRequest:
        owner = self.peer(owner_ref)
        self._require_connected(owner)
        pub = owner.profile.publications.get(cid)
        if pub is None:
            raise SimError(f"unknown content {owner.uid}:{cid}")
        key = pub.metadata.key
        holders = frozenset(owner.replication_log.get(key, set()))
        offline = frozenset(h for h in holders if not self.is_connected(h))
        req = engine.make_deletion_request(owner.uid, owner.keys, cid, offline)
        self._apply_deletion_locally(owner, req, forward=False)
        owner.confirmations.setdefault(req.request_id, set())
        text = req.to_text().encode()
        if isinstance(pub.metadata.audience, Public):
            self.send(owner.uid, SERVER, "PUBLIC_DELETE", text)
        for h in sorted(holders):
            if h in offline:
                self.send(owner.uid, SERVER, "ESCROW", text, str(h).encode())
            else:
                self.send(owner.uid, h, "DELETE_REQUEST", text)
        self._trace(owner.uid, f"delete:{cid}", text)
        return req

    def _apply_deletion_locally(self, peer: PeerNode, req: DeletionRequest, forward: bool) -> None:
        """Drop every copy and derived publication the request covers.

        Derived publications owned by this peer (reshares) are deleted too and
        the request goes on to the holders this peer replicated them to.
        """
        peer.tombstones.append(req)
        for key in [k for k, r in peer.replicas.items() if engine.covered_by(req, r.metadata)]:
            del peer.replicas[key]
        for key in [k for k, p in peer.feed.items() if engine.covered_by(req, p.metadata)]:
            del peer.feed[key]
        peer.outbox = [p for p in peer.outbox
                       if not (p.content is not None and p.content[0] == req.owner
                               and (req.content_id is None or req.content_id == p.content[1]))]
        if peer.uid == req.owner:
            if req.content_id is not None:
                peer.profile.publications.pop(req.content_id, None)
            return
        text = req.to_text().encode()
        for cid, pub in list(peer.profile.publications.items()):
            if not engine.covered_by(req, pub.metadata):
                continue
            del peer.profile.publications[cid]
            if not forward:
                continue
            key = pub.metadata.key
            if isinstance(pub.metadata.audience, Public):
                self.send(peer.uid, SERVER, "PUBLIC_DELETE", text)
            for h in sorted(peer.replication_log.get(key, set())):
                if h == req.owner:
                    continue
                if self.is_connected(h):
                    self.send(peer.uid, h, "DELETE_REQUEST", text)
                else:
                    self.send(peer.uid, SERVER, "ESCROW", text, str(h).encode())
        peer.outbox = [p for p in peer.outbox if not (p.kind == "REPLICA" and p.content is not None
                                                      and p.content not in self._live_keys(peer)
                                                      and p.content[0] == peer.uid)]

    def delete_account(self, owner_ref) -> Optional[DeletionRequest]:
        owner = self.peer(owner_ref)
        if owner.deleted:
            return None
        self._require_connected(owner)
        holders = set(owner.profile.friends)
        for served in owner.replication_log.values():
            holders |= served
        holders -= {owner.uid}
        req = engine.make_deletion_request(owner.uid, owner.keys, None, frozenset(holders))
        owner.confirmations.setdefault(req.request_id, set())
        self.send(owner.uid, SERVER, "ACCOUNT_DELETE", req.to_text().encode())
        self._trace(owner.uid, "delete-account", req.to_text().encode())
        return req

    def _holder_process_deletion(self, peer: PeerNode, sender: Address, req: DeletionRequest) -> None:
        owner_pub = self.lookup_key(req.owner)
        if owner_pub is None or not engine.verify_deletion_request(req, owner_pub):
            self._trace(peer.uid, "delete-ignored", req.to_text().encode())
            return
        already = any(t.request_id == req.request_id for t in peer.tombstones)
        if not already:
            self._apply_deletion_locally(peer, req, forward=True)
            if req.content_id is None:
                self._forget_account(peer, req.owner)
        conf = engine.confirm_deletion(req, peer.uid, peer.keys)
        target = sender
        if sender != SERVER and not self.is_connected(sender):
            target = SERVER
        self.send(peer.uid, target, "DELETE_CONFIRM", conf.to_text().encode())

    def _forget_account(self, peer: PeerNode, owner: UserId) -> None:
        peer.dead_accounts.add(owner)
        for key in [k for k in peer.profile.keyring if k[0] == owner]:
            del peer.profile.keyring[key]
        peer.profile.friends.discard(owner)
        for cls in peer.profile.classes.values():
            if owner in cls.members:
                cls.members.remove(owner)
        peer.outbox = [p for p in peer.outbox if p.receiver != owner]

    def _record_confirmation(self, store: dict, conf: DeletionConfirmation) -> bool:
        pub = self.lookup_key(conf.confirming_holder)
        if pub is None or not engine.verify_confirmation(conf, pub):
            return False
        store.setdefault((conf.owner, conf.content_id), set()).add(conf.confirming_holder)
        return True

    def confirmations_for(self, owner: UserId, cid: Optional[int]) -> set[UserId]:
        out = set(self.server.confirmations.get((owner, cid), set()))
        for peer in self.peers.values():
            out |= peer.confirmations.get((owner, cid), set())
        return out

    # matching

    def set_prefs(self, ref, prefs: mt.HelperPreferences, auto_offer: bool = False) -> None:
        peer = self.peer(ref)
        peer.prefs = prefs
        peer.auto_offer = auto_offer
        self._trace(peer.uid, "set-prefs")

    def request_help(self, ref, req: mt.HelpRequest) -> str:
        peer = self.peer(ref)
        self._require_connected(peer)
        rid = f"{peer.uid}#{next(self._request_counter)}"
        state = HelpState(rid, req, self.clock)
        peer.help_states[rid] = state
        text = req.to_text().encode()
        friends = sorted(f for f in peer.profile.friends - peer.excluded if self.is_connected(f))
        for f in friends:
            self.send(peer.uid, f, "HELP_REQUEST", rid.encode(), text)
        self._trace(peer.uid, f"request-help:{rid}", text)
        if not friends:
            self._escalate(peer, state)
        else:
            self.at(self.clock + self.config.offer_window, lambda: self._offer_timeout(peer, state), PHASE_DELIVERY)
        return rid

    def _offer_timeout(self, peer: PeerNode, state: HelpState) -> None:
        if state.offers or state.escalated or state.accepted is not None or not self.is_connected(peer.uid):
            return
        self._escalate(peer, state)

    def _escalate(self, peer: PeerNode, state: HelpState) -> None:
        state.escalated = True
        self.send(peer.uid, SERVER, "HELP_BROADCAST_REQ", state.request_id.encode(), state.request.to_text().encode())

    def offer(self, helper_ref, rid: str, proposal: str) -> None:
        helper = self.peer(helper_ref)
        self._require_connected(helper)
        if rid not in helper.incoming_requests:
            raise SimError(f"{helper.uid} has not received request {rid}")
        req = helper.incoming_requests[rid]
        off = mt.Offer(helper.uid, rid, proposal)
        self.send(helper.uid, req.requester, "OFFER", off.to_text().encode())

    def ranked_offers(self, ref, rid: str) -> list[mt.Offer]:
        peer = self.peer(ref)
        state = peer.help_states.get(rid)
        if state is None:
            raise SimError(f"unknown request {rid}")
        return mt.filter_and_rank_offers(state.offers, peer.excluded, peer.evaluations)

    def accept_offer(self, ref, rid: str, offerer_ref=None) -> UserId:
        peer = self.peer(ref)
        self._require_connected(peer)
        ranked = self.ranked_offers(ref, rid)
        if not ranked:
            raise SimError(f"no acceptable offers for {rid}")
        if offerer_ref is None:
            chosen = ranked[0].offerer
        else:
            chosen = self.peer(offerer_ref).uid
            if chosen not in {o.offerer for o in ranked}:
                raise SimError(f"{chosen} made no acceptable offer")
        peer.help_states[rid].accepted = chosen
        peer.sessions[rid] = Session(rid, peer.uid, chosen)
        self.send(peer.uid, chosen, "SESSION_ACCEPT", rid.encode())
        return chosen

    def end_session(self, ref, rid: str) -> None:
        peer = self.peer(ref)
        session = peer.sessions.get(rid)
        if session is None:
            raise SimError(f"no session {rid}")
        session.ended = True
        other = session.helper if peer.uid == session.helpee else session.helpee
        self.send(peer.uid, other, "SESSION_END", rid.encode())

    def evaluate(self, ref, rid: str, rating, again: bool) -> None:
        peer = self.peer(ref)
        session = peer.sessions.get(rid)
        if session is None or not session.ended:
            raise SimError(f"session {rid} has not ended")
        is_helpee = peer.uid == session.helpee
        expected = mt.HelpRating if is_helpee else mt.HelpeeRating
        if not isinstance(rating, expected):
            raise SimError(f"{rating} is not a {expected.__name__}")
        other = session.helper if is_helpee else session.helpee
        try:
            peer.evaluations.record_given(mt.Evaluation(rid, other, rating, again))
        except mt.MatchingError as exc:
            raise SimError(str(exc)) from exc
        body = f"session={rid}\n{EVALUATION_MARKER}{rating.value}\nagain={'oui' if again else 'non'}".encode()
        self.send(peer.uid, other, "EVALUATION", body)

    # abuse and reputation

    def report_abuse(self, victim_ref, offender_ref, category: mt.ReportCategory,
                     content: Optional[ContentKey] = None) -> None:
        victim, offender = self.peer(victim_ref), self.peer(offender_ref)
        if victim.uid == offender.uid:
            raise SimError("a user cannot report themselves")
        self._require_connected(victim)
        victim.hidden_authors.add(offender.uid)
        victim.reported.add(offender.uid)
        ref, dig = "-", "-"
        if content is not None:
            item = self._local_item(victim, content)
            ref = f"{content[0]}:{content[1]}"
            if item is not None:
                dig = cc.digest(serialize_metadata(item.metadata)).hex()
        incident = f"{victim.uid}>{ref}"
        self.send(victim.uid, SERVER, "ABUSE_REPORT", str(offender.uid).encode(), category.value.encode(),
                  incident.encode(), ref.encode(), dig.encode())

    def block(self, owner_ref, other_ref) -> None:
        owner, other = self.peer(owner_ref), self.peer(other_ref)
        if owner.uid == other.uid:
            raise SimError("a user cannot block themselves")
        self._require_connected(owner)
        self._send_keys(owner, owner.profile.block(other.uid))
        other.profile.friends.discard(owner.uid)
        if other.uid not in owner.reported:
            self.send(owner.uid, SERVER, "BLOCK_REPORT", str(other.uid).encode(), f"block:{owner.uid}".encode())
        self._trace(owner.uid, f"block:{other.uid}")

    def admin_review(self, ref, false_declarations: int = 0, suspend: bool = False) -> None:
        uid = self.peer(ref).uid
        self._update_reputation(uid, mt.AdminReview(false_declarations, suspend))

    def _update_reputation(self, uid: UserId, event) -> Optional[str]:
        record, action = mt.update_reputation(self.server.reputation(uid), event)
        self.server.reputation_table[uid] = record
        self._trace(SERVER, f"reputation:{uid}:{action or '-'}")
        if record.suspended and self.is_connected(uid):
            self.disconnect(uid)
        return action

    def warn(self, ref, suspect_ref, answers: list[bool]) -> None:
        peer, suspect = self.peer(ref), self.peer(suspect_ref)
        self._require_connected(peer)
        peer.pending_warnings[suspect.uid] = list(answers)
        self.send(peer.uid, SERVER, "REPUTATION_QUERY", str(suspect.uid).encode())

    # message handlers

    def _server_receive(self, sender: Address, kind: str, fields: list[bytes]) -> None:
        server = self.server
        if kind == "PUBLIC_POST":
            meta = parse_metadata(fields[0])
            if not isinstance(meta.audience, Public) or meta.owner != sender:
                raise SimError("only the owner's public publications go to the server")
            pub = Publication(meta, fields[1])
            server.public_store[meta.key] = pub
            for uid in server.connected_users():
                self.send(SERVER, uid, "FEED", *fields)
        elif kind == "PUBLIC_DELETE":
            req = DeletionRequest.from_text(fields[0].decode())
            pub_key = self.lookup_key(req.owner)
            if pub_key is None or not engine.verify_deletion_request(req, pub_key):
                raise SimError("forged public deletion")
            self._server_purge(req)
        elif kind == "ESCROW":
            req = DeletionRequest.from_text(fields[0].decode())
            holder = UserId.parse(fields[1].decode())
            pub_key = self.lookup_key(req.owner)
            if pub_key is None or not engine.verify_deletion_request(req, pub_key):
                raise SimError("forged deletion request")
            self._escrow(req, holder)
        elif kind == "DELETE_CONFIRM":
            conf = DeletionConfirmation.from_text(fields[0].decode())
            if not self._record_confirmation(server.confirmations, conf):
                raise SimError("bad confirmation signature")
            rid = (conf.owner, conf.content_id)
            held = server.deletion_escrow.get(conf.confirming_holder, [])
            server.deletion_escrow[conf.confirming_holder] = [r for r in held if r.request_id != rid]
            if not server.deletion_escrow[conf.confirming_holder]:
                del server.deletion_escrow[conf.confirming_holder]
            if conf.owner not in server.deleted_accounts:
                self.send(SERVER, conf.owner, "CONFIRM_FORWARD", fields[0])
        elif kind == "ACCOUNT_DELETE":
            req = DeletionRequest.from_text(fields[0].decode())
            if req.owner != sender or req.content_id is not None:
                raise SimError("account deletion must come from the owner")
            if req.owner in server.deleted_accounts:
                return
            if not engine.verify_deletion_request(req, self.lookup_key(req.owner)):
                raise SimError("forged account deletion")
            self._server_purge(req)
            entry = server.directory.pop(req.owner)
            server.retired_keys[req.owner] = entry.public_key
            server.credentials.pop(entry.pseudonym, None)
            server.reputation_table.pop(req.owner, None)
            server.confirm_outbox.pop(req.owner, None)
            server.deleted_accounts.add(req.owner)
            for holder in sorted(req.pending_holders):
                self._escrow(req, holder)
            self.send(SERVER, req.owner, "ACCOUNT_DELETED", fields[0])
        elif kind == "HELP_BROADCAST_REQ":
            requester = sender
            for uid in server.connected_users():
                if uid != requester:
                    self.send(SERVER, uid, "HELP_BROADCAST", fields[0], fields[1])
        elif kind == "ABUSE_REPORT":
            offender = UserId.parse(fields[0].decode())
            category = mt.ReportCategory(fields[1].decode())
            incident = fields[2].decode()
            server.abuse_reports.append(AbuseReportRecord(sender, offender, category, incident,
                                                          fields[3].decode(), fields[4].decode()))
            self._update_reputation(offender, mt.Report(sender, category, incident))
        elif kind == "BLOCK_REPORT":
            offender = UserId.parse(fields[0].decode())
            self._update_reputation(offender, mt.SpamBlock(sender, fields[1].decode()))
        elif kind == "REPUTATION_QUERY":
            suspect = UserId.parse(fields[0].decode())
            self._update_reputation(suspect, mt.AssistantVisit(sender))
            prior = server.reputation(suspect).total_reports
            self.send(SERVER, sender, "REPUTATION_REPLY", fields[0], str(prior).encode())
        else:
            raise SimError(f"server cannot handle {kind}")

    def _server_purge(self, req: DeletionRequest) -> None:
        server = self.server
        gone = [k for k, p in server.public_store.items() if engine.covered_by(req, p.metadata)]
        for k in gone:
            del server.public_store[k]
        if gone:
            for uid in server.connected_users():
                self.send(SERVER, uid, "FEED_RETRACT", req.to_text().encode())

    def _escrow(self, req: DeletionRequest, holder: UserId) -> None:
        queue = self.server.deletion_escrow.setdefault(holder, [])
        if all(r.request_id != req.request_id for r in queue):
            queue.append(req)
        if self.is_connected(holder):
            self.send(SERVER, holder, "DELETE_REQUEST", req.to_text().encode())

    def _peer_receive(self, peer: PeerNode, sender: Address, kind: str, fields: list[bytes]) -> None:
        if kind == "KEY_DELIVERY":
            d = KeyDelivery.from_payload(peer.uid, fields[0])
            if d.owner != sender:
                raise SimError("key delivery from a non-owner")
            peer.profile.install_class_key(d)
        elif kind == "REPLICA":
            rec = ReplicaRecord.from_payload(fields[0], peer.uid, self.clock)
            if rec.owner != sender:
                raise SimError("replica from a non-owner")
            if peer.is_tombstoned(rec.metadata):
                self._trace(peer.uid, "replica-dropped")
                return
            peer.replicas[rec.key] = rec
            self._new_replicas.append(rec)
        elif kind == "ACCESS_REQUEST":
            key = _parse_key(fields[0])
            item = self._local_item(peer, key)
            if item is not None and isinstance(item, Publication) and item.metadata.owner != peer.uid:
                item = None
            decision = engine.handle_access_request(sender, item, duplication_peers=peer.profile.duplication_peers(),
                                                    blocked=frozenset(peer.profile.blocked))
            if decision.duplicate is not None and isinstance(item, Publication):
                self._answer_with_replica(peer, item, sender, decision.duplicate)
            if not decision.allowed:
                reason = decision.reason.value if decision.reason else "not-authorized"
                self.send(peer.uid, sender, "ACCESS_DENIED", fields[0], reason.encode())
        elif kind == "ACCESS_DENIED":
            self._trace(peer.uid, f"access-denied:{fields[1].decode()}")
        elif kind in ("DELETE_REQUEST",):
            req = DeletionRequest.from_text(fields[0].decode())
            self._holder_process_deletion(peer, sender, req)
        elif kind in ("DELETE_CONFIRM", "CONFIRM_FORWARD"):
            conf = DeletionConfirmation.from_text(fields[0].decode())
            if not self._record_confirmation(peer.confirmations, conf):
                raise SimError("bad confirmation signature")
        elif kind == "FEED":
            pub = Publication(parse_metadata(fields[0]), fields[1])
            if not isinstance(pub.metadata.audience, Public) or peer.is_tombstoned(pub.metadata):
                return
            peer.feed[pub.metadata.key] = pub
            self._render(peer, pub)
        elif kind == "FEED_RETRACT":
            req = DeletionRequest.from_text(fields[0].decode())
            for key in [k for k, p in peer.feed.items() if engine.covered_by(req, p.metadata)]:
                del peer.feed[key]
        elif kind == "PUBLIC_SYNC":
            peer.feed = {}
            for i in range(0, len(fields), 2):
                pub = Publication(parse_metadata(fields[i]), fields[i + 1])
                if isinstance(pub.metadata.audience, Public) and pub.metadata.owner != peer.uid:
                    peer.feed[pub.metadata.key] = pub
        elif kind == "ONLINE":
            names = [n for n in fields[0].decode().split(",") if n]
            for name in names:
                self._flush(peer.uid, UserId.parse(name))
        elif kind == "PRESENCE":
            self._flush(peer.uid, UserId.parse(fields[0].decode()))
        elif kind == "DIRECT":
            peer.inbox.append(fields[0])
        elif kind in ("HELP_REQUEST", "HELP_BROADCAST"):
            rid = fields[0].decode()
            req = mt.HelpRequest.from_text(fields[1].decode())
            if rid in peer.incoming_requests or req.requester in peer.excluded or req.requester == peer.uid:
                return
            if peer.prefs is None or not mt.match_request_to_prefs(req, peer.prefs, peer.uid.role):
                return
            peer.incoming_requests[rid] = req
            if peer.auto_offer:
                off = mt.Offer(peer.uid, rid, f"offre de {peer.uid}")
                self.send(peer.uid, req.requester, "OFFER", off.to_text().encode())
        elif kind == "OFFER":
            off = mt.Offer.from_text(fields[0].decode())
            state = peer.help_states.get(off.request_id)
            if state is None or state.accepted is not None or off.offerer != sender:
                return
            if any(o.offerer == off.offerer for o in state.offers):
                return
            state.offers.append(mt.Offer(off.offerer, off.request_id, off.proposal, len(state.offers)))
        elif kind == "SESSION_ACCEPT":
            rid = fields[0].decode()
            if rid not in peer.incoming_requests:
                raise SimError(f"unknown request {rid}")
            peer.sessions[rid] = Session(rid, sender, peer.uid)
        elif kind == "SESSION_END":
            session = peer.sessions.get(fields[0].decode())
            if session is not None:
                session.ended = True
        elif kind == "EVALUATION":
            lines = dict(line.split("=", 1) for line in fields[0].decode().splitlines())
            rid = lines["session"]
            session = peer.sessions.get(rid)
            if session is None:
                raise SimError(f"evaluation for unknown session {rid}")
            # the sender rated us; its scale depends on its side of the session
            scale = mt.HelpRating if sender == session.helpee else mt.HelpeeRating
            rating = scale(lines["rating"])
            peer.evaluations.record_received(mt.Evaluation(rid, sender, rating, lines["again"] == "oui"))
        elif kind == "REPUTATION_REPLY":
            suspect = UserId.parse(fields[0].decode())
            answers = peer.pending_warnings.pop(suspect, None)
            if answers is None:
                return
            outcome = mt.assistant_warn(int(fields[1]), answers)
            peer.warnings.append((suspect, outcome))
            self._trace(peer.uid, f"warn:{suspect}:{len(outcome.prompts)}:{'block' if outcome.block else 'keep'}")
            if outcome.block and self.is_connected(peer.uid) and suspect not in peer.profile.blocked:
                self.block(peer.uid, suspect)
        elif kind == "ACCOUNT_DELETED":
            peer.profile.publications.clear()
            peer.replicas.clear()
            peer.feed.clear()
            peer.outbox.clear()
            peer.deleted = True
            self.disconnect(peer.uid)
        else:
            raise SimError(f"peer cannot handle {kind}")

    def _answer_with_replica(self, owner: PeerNode, pub: Publication, requester: UserId, form: Form) -> None:
        key = pub.metadata.key
        class_keys = {}
        if form is Form.ENCRYPTED:
            class_keys = {cid: owner.profile.class_key(cid) for cid in pub.metadata.audience.class_ids}
        rec = engine.build_replica(pub, requester, form, self.clock, class_keys,
                                   owner.profile.duplication_peers(), self.rng)
        owner.replication_log.setdefault(key, set()).add(requester)
        self.send(owner.uid, requester, "REPLICA", rec.to_payload(), content=key)

    # invariant scanner

    def _allowed_viewers(self, key: ContentKey) -> Optional[frozenset[UserId]]:
        pub = self.catalog.get(key)
        if pub is None:
            return frozenset()
        viewers = pub.metadata.viewers()
        origin = pub.metadata.origin
        if origin is not None:
            root = self.catalog.get((origin.owner, origin.content_id))
            if root is not None:
                viewers = engine._intersect(viewers, root.metadata.viewers())
        return viewers

    def _violation(self, text: str) -> None:
        self.violations.append(f"{self.clock} {text}")
        self._trace("scanner", "violation", text.encode())

    def scan(self, full: bool = False) -> None:
        """Check the invariants against what happened since the last scan."""
        replicas = self._new_replicas
        if full:
            replicas = [r for p in self.peers.values() for r in p.replicas.values()]
        for rec in replicas:
            if rec.form is Form.CLEAR:
                viewers = self._allowed_viewers(rec.key)
                if viewers is not None and rec.holder not in viewers:
                    self._violation(f"clear replica of {rec.key[0]}:{rec.key[1]} held by {rec.holder}")
        self._new_replicas = []

        for ev in self.renders[self._scan_render_from:]:
            if ev.shown:
                viewers = self._allowed_viewers(ev.key)
                if viewers is not None and ev.viewer not in viewers:
                    self._violation(f"{ev.viewer} rendered {ev.key[0]}:{ev.key[1]}")
        self._scan_render_from = len(self.renders)

        for peer in self.peers.values():
            for (owner, class_id), versions in peer.profile.keyring.items():
                if owner == peer.uid or not versions or owner not in self.peers:
                    continue
                cls = self.peers[owner].profile.classes.get(class_id)
                if cls is None or peer.uid not in cls.ever_members:
                    self._violation(f"{peer.uid} holds {owner}/{class_id} key without membership")

        for key, pub in self.server.public_store.items():
            if not isinstance(pub.metadata.audience, Public):
                self._violation(f"server stores private {key[0]}:{key[1]}")

        entries = self.audit[self._scan_audit_from:]
        self._scan_audit_from = len(self.audit)
        for entry in entries:
            for token in self.self_test_tokens:
                if token.encode() in entry.plaintext:
                    self._violation(f"self-test {token} on the wire ({entry.kind})")
            if EVALUATION_MARKER.encode() in entry.plaintext and (
                    entry.kind in MATCHING_KINDS or SERVER in (entry.sender, entry.receiver)):
                self._violation(f"evaluation in {entry.kind} {entry.sender}>{entry.receiver}")
            if entry.kind == "DIRECT" and SERVER in (entry.sender, entry.receiver):
                self._violation("direct message through the server")

        if entries or full:
            state = self.server.state_text().encode()
            # a private reshare of a public post legitimately shares its body
            public_bodies = {p.body for p in self.catalog.values() if isinstance(p.metadata.audience, Public)}
            for key, pub in self.catalog.items():
                if isinstance(pub.metadata.audience, Public) or not pub.body or pub.body in public_bodies:
                    continue
                if pub.body in state:
                    self._violation(f"server state holds private body of {key[0]}:{key[1]}")
            for body in self.direct_bodies:
                if body and body in state:
                    self._violation("server state holds a direct message body")
            for token in self.self_test_tokens:
                if token.encode() in state:
                    self._violation("server state holds a self-test record")
            if EVALUATION_MARKER.encode() in state:
                self._violation("server state holds an evaluation")

    # inspection helpers

    def replica_count(self, key: ContentKey) -> int:
        """Copies of ``key`` (or of content derived from it) outside the owner."""
        def covers(meta: PublicationMetadata) -> bool:
            return meta.key == key or (meta.origin is not None
                                       and (meta.origin.owner, meta.origin.content_id) == key)
        n = 0
        for peer in self.peers.values():
            n += sum(1 for r in peer.replicas.values() if covers(r.metadata))
            n += sum(1 for p in peer.feed.values() if covers(p.metadata))
            if peer.uid != key[0]:
                n += sum(1 for p in peer.profile.publications.values() if covers(p.metadata))
        n += sum(1 for p in self.server.public_store.values() if covers(p.metadata))
        return n

    def holders_of(self, key: ContentKey) -> set[UserId]:
        """Every peer any Replication Manager logged as a holder of ``key`` or its reshares."""
        out = set()
        for peer in self.peers.values():
            for k, served in peer.replication_log.items():
                pub = self.catalog.get(k)
                if k == key or (pub is not None and pub.metadata.origin is not None
                                and (pub.metadata.origin.owner, pub.metadata.origin.content_id) == key):
                    out |= served
        return out

    def dump(self) -> str:
        """Text snapshot of the world state."""
        lines = [f"clock {self.clock}", f"violations {len(self.violations)}"]
        for uid in sorted(self.peers):
            p = self.peers[uid]
            lines.append(f"peer {uid} pseudonym={uid.pseudonym} connected={p.connected} deleted={p.deleted}")
            lines.append("  friends " + ",".join(str(u) for u in sorted(p.profile.friends)))
            lines.append("  blocked " + ",".join(str(u) for u in sorted(p.profile.blocked)))
            for cls in p.profile.classes.values():
                if cls.members or cls.key_versions:
                    lines.append(f"  class {cls.class_id} {cls.name} v{cls.version} "
                                 + ",".join(str(u) for u in cls.members))
            for (owner, cid), versions in sorted(p.profile.keyring.items(), key=lambda kv: (kv[0][0], kv[0][1])):
                lines.append(f"  key {owner}/{cid} versions={sorted(versions)}")
            for cid in sorted(p.profile.publications):
                m = p.profile.publications[cid].metadata
                lines.append(f"  pub {cid} {type(m.audience).__name__} dist={m.rights.distribution.value}")
            for key in sorted(p.replicas, key=lambda k: (k[0], k[1])):
                r = p.replicas[key]
                lines.append(f"  replica {key[0]}:{key[1]} {r.form.value} v{r.key_version}")
            for key in sorted(p.feed, key=lambda k: (k[0], k[1])):
                lines.append(f"  feed {key[0]}:{key[1]}")
            lines.append(f"  outbox {len(p.outbox)} inbox {len(p.inbox)}")
        s = self.server
        lines.append("server")
        for uid in sorted(s.directory):
            e = s.directory[uid]
            lines.append(f"  dir {uid} active={e.active} connected={e.connected}")
        for key in sorted(s.public_store, key=lambda k: (k[0], k[1])):
            lines.append(f"  public {key[0]}:{key[1]}")
        for holder in sorted(s.deletion_escrow):
            for r in s.deletion_escrow[holder]:
                lines.append(f"  escrow {holder} {r.owner}:{r.content_id if r.content_id is not None else '-'}")
        for rec in sorted(s.reputation_table.values(), key=lambda r: r.user):
            lines.append("  reputation " + "\t".join(rec.table_row()))
        return "\n".join(lines) + "\n"
