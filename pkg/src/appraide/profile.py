"""A user's local profile store: connection classes, keyring, settings.

Everything here lives on the user's own peer. Class keypairs leave it only
inside signed, enveloped key-delivery messages addressed to class members.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from . import crypto_core as cc
from .crypto_core import KeyPair, PublicKey
from .metadata import (
    AccessRights,
    AudienceSpec,
    ClassAudience,
    Level,
    MeOnly,
    PersonList,
    Protection,
    Public,
    Publication,
    PublicationMetadata,
    PublicationType,
    UserId,
    default_rights,
)

DEFAULT_CLASSES = (
    ("CC1", "Amis"),
    ("CC2", "Enseignants"),
    ("CC3", "Camarades"),
    ("CC4", "Aidants préférés"),
    ("CC5", "Famille"),
)


class ProfileError(ValueError):
    pass


@dataclass
class ConnectionClass:
    class_id: str
    name: str
    members: list[UserId] = field(default_factory=list)
    # every keypair the class ever had, oldest first; the last one is current
    key_versions: list[KeyPair] = field(default_factory=list)
    ever_members: set[UserId] = field(default_factory=set)

    @property
    def keypair(self) -> Optional[KeyPair]:
        return self.key_versions[-1] if self.key_versions else None

    @property
    def version(self) -> int:
        return len(self.key_versions) - 1


@dataclass(frozen=True)
class KeyDelivery:
    """A class keypair on its way to one member."""

    recipient: UserId
    owner: UserId
    class_id: str
    version: int
    keypair: KeyPair

    def to_payload(self) -> bytes:
        return f"{self.owner}|{self.class_id}|{self.version}|{self.keypair.to_hex()}".encode()

    @classmethod
    def from_payload(cls, recipient: UserId, data: bytes) -> KeyDelivery:
        owner, class_id, version, key = data.decode().split("|")
        return cls(recipient, UserId.parse(owner), class_id, int(version), KeyPair.from_hex(key))


@dataclass(frozen=True)
class SelfTestResult:
    owner: UserId
    test_id: str
    score: Fraction
    taken_at: int

    def __post_init__(self):
        if not 0 <= self.score <= 1:
            raise ValueError(f"score {self.score} outside [0, 1]")


# default privacy settings


@dataclass(frozen=True)
class SettingRow:
    content_type: str
    protection: Protection
    audience: AudienceSpec

    @property
    def protection_label(self) -> str:
        if self.protection is Protection.CLEAR:
            return "Droits d'accès (Clair)"
        return "Droits d'accès + Chiffrement"

    @property
    def audience_label(self) -> str:
        return self.audience.label


def _classes(*names: str) -> ClassAudience:
    return ClassAudience(names, " et ".join(names))


def default_settings() -> dict[str, SettingRow]:
    """The Privacy Assistant's defaults, one row per profile content type."""
    rows = [
        SettingRow("Identité", Protection.CLEAR, _classes("Famille")),
        SettingRow("Attributs démographiques", Protection.CLEAR, _classes("Famille")),
        SettingRow("Activités de réseautage social", Protection.ENCRYPTED, _classes("Amis")),
        SettingRow("Activités liées à l'apprentissage", Protection.CLEAR, MeOnly()),
        SettingRow("Critères de comparaison", Protection.CLEAR, MeOnly()),
        SettingRow("Ses intérêts", Protection.ENCRYPTED, _classes("Amis")),
        SettingRow("Les publications", Protection.ENCRYPTED, _classes("Amis")),
        SettingRow("Certification et diplôme", Protection.ENCRYPTED, _classes("Camarades", "Famille")),
        SettingRow("Les connexions", Protection.CLEAR, MeOnly()),
    ]
    return {row.content_type: row for row in rows}


class Profile:
    """Local store of one user.

    ``rng`` drives class key generation; ``class_key_bits`` sizes those keys.
    """

    def __init__(self, user: UserId, keys: KeyPair, rng: Optional[random.Random] = None,
                 class_key_bits: int = cc.DEFAULT_BITS):
        self.user = user
        self.keys = keys
        self.rng = rng
        self.class_key_bits = class_key_bits
        self.classes: dict[str, ConnectionClass] = {cid: ConnectionClass(cid, name) for cid, name in DEFAULT_CLASSES}
        self.friends: set[UserId] = set()
        self.blocked: set[UserId] = set()
        self.removed: set[UserId] = set()
        self.subscribers: set[UserId] = set()
        self.contacts: dict[UserId, PublicKey] = {}
        # (owner, class_id) -> {version: keypair}
        self.keyring: dict[tuple[UserId, str], dict[int, KeyPair]] = {}
        self.publications: dict[int, Publication] = {}
        self.settings = default_settings()
        self.self_tests: list[SelfTestResult] = []
        self._next_content_id = 1

    # classes and membership

    def find_class(self, ref: str) -> ConnectionClass:
        """Look a class up by id ("CC3") or by name, case-insensitively."""
        if ref in self.classes:
            return self.classes[ref]
        for cls in self.classes.values():
            if cls.name.casefold() == ref.casefold():
                return cls
        raise ProfileError(f"unknown connection class {ref!r}")

    def _ensure_key(self, cls: ConnectionClass) -> KeyPair:
        if cls.keypair is None:
            cls.key_versions.append(cc.generate_keypair(self.class_key_bits, self.rng))
            self._install_own(cls)
        return cls.keypair

    def _install_own(self, cls: ConnectionClass) -> None:
        self.keyring.setdefault((self.user, cls.class_id), {})[cls.version] = cls.keypair

    def _delivery(self, member: UserId, cls: ConnectionClass) -> KeyDelivery:
        return KeyDelivery(member, self.user, cls.class_id, cls.version, cls.keypair)

    def add_friend(self, other: UserId, public_key: PublicKey) -> None:
        if other == self.user:
            raise ProfileError("cannot befriend oneself")
        if other in self.blocked:
            raise ProfileError(f"{other} is blocked")
        self.friends.add(other)
        self.removed.discard(other)
        self.contacts[other] = public_key

    def assign_to_class(self, member: UserId, class_ref: str) -> list[KeyDelivery]:
        """Add a friend to a class; returns the key deliveries to send."""
        if member in self.blocked or member in self.removed:
            raise ProfileError(f"{member} is blocked or removed")
        if member not in self.friends:
            raise ProfileError(f"{member} is not a friend of {self.user}")
        cls = self.find_class(class_ref)
        self._ensure_key(cls)
        if member in cls.members:
            return []
        cls.members.append(member)
        cls.ever_members.add(member)
        return [self._delivery(member, cls)]

    def remove_from_class(self, member: UserId, class_ref: str) -> list[KeyDelivery]:
        """Drop a member and rotate the class key for everyone who remains.

        Replicas already delivered keep the old key; only later publications
        are protected from the removed member.
        """
        cls = self.find_class(class_ref)
        if member not in cls.members:
            return []
        cls.members.remove(member)
        cls.key_versions.append(cc.generate_keypair(self.class_key_bits, self.rng))
        self._install_own(cls)
        return [self._delivery(m, cls) for m in cls.members]

    def block(self, other: UserId) -> list[KeyDelivery]:
        """Block a user: out of every class and the friend list."""
        deliveries = []
        for cls in self.classes.values():
            deliveries.extend(self.remove_from_class(other, cls.class_id))
        self.friends.discard(other)
        self.blocked.add(other)
        return deliveries

    def unfriend(self, other: UserId) -> list[KeyDelivery]:
        deliveries = []
        for cls in self.classes.values():
            deliveries.extend(self.remove_from_class(other, cls.class_id))
        self.friends.discard(other)
        self.removed.add(other)
        return deliveries

    def install_class_key(self, delivery: KeyDelivery) -> bool:
        """Store a received class key; False if it was already present."""
        versions = self.keyring.setdefault((delivery.owner, delivery.class_id), {})
        if versions.get(delivery.version) == delivery.keypair:
            return False
        versions[delivery.version] = delivery.keypair
        return True

    def holds_class_key(self, owner: UserId, class_id: str) -> bool:
        return bool(self.keyring.get((owner, class_id)))

    def duplication_peers(self) -> frozenset[UserId]:
        return frozenset(self.friends - self.blocked - self.removed)

    # publishing

    def resolve_audience(self, choice) -> AudienceSpec:
        """Turn a user's sharing choice into metadata.

        ``choice`` is "me", "public", a class reference (id or name, or a
        tuple of them) or a set of user ids.
        """
        if choice in ("me", "moi-seulement"):
            return MeOnly()
        if choice == "public":
            return Public()
        if isinstance(choice, (set, frozenset)):
            members = frozenset(choice) - self.blocked - {self.user}
            if not members:
                raise ProfileError("person list is empty after removing blocked users")
            return PersonList(members)
        refs = (choice,) if isinstance(choice, str) else tuple(choice)
        classes = [self.find_class(r) for r in refs]
        members: set[UserId] = set()
        for cls in classes:
            members.update(cls.members)
        name = " et ".join(c.name for c in classes)
        return ClassAudience(tuple(c.class_id for c in classes), name, frozenset(members - self.blocked))

    def class_key(self, class_id: str) -> tuple[int, KeyPair]:
        cls = self.classes[class_id]
        self._ensure_key(cls)
        return cls.version, cls.keypair

    def allocate_content_id(self) -> int:
        cid = self._next_content_id
        self._next_content_id += 1
        return cid

    def publish(self, publication_type: PublicationType, science: str, level: Level, audience_choice,
                body: bytes, rights: Optional[AccessRights] = None) -> Publication:
        audience = self.resolve_audience(audience_choice)
        meta = PublicationMetadata(self.user, self.allocate_content_id(), publication_type, science, level,
                                   audience, rights or default_rights(audience))
        pub = Publication(meta, body)
        self.store(pub)
        return pub

    def store(self, pub: Publication) -> None:
        self.publications[pub.metadata.content_id] = pub

    # local-only learning records

    def record_self_test(self, result: SelfTestResult) -> None:
        if result.owner != self.user:
            raise ProfileError("self-test results belong to their owner's store only")
        self.self_tests.append(result)
