"""Users, publications and their rights metadata, with the XML codec.

The XML keeps the element names used by the original ApprAide tooling,
misspellings included (``AUDIANCE``, ``RELPLICATION_PROTECTION``), so files
produced here line up with existing records. The layout is documented in
``docs/metadata.md``.
"""

from __future__ import annotations

import enum
import xml.etree.ElementTree as ET
from dataclasses import dataclass, replace
from typing import Optional, Union

MIN_PSEUDONYM = 4


class Role(enum.Enum):
    APPRENANT = "Apprenant"
    ENSEIGNANT = "Enseignant"


@dataclass(frozen=True, eq=False)
class UserId:
    role: Role
    numeric_id: int
    pseudonym: Optional[str] = None

    def __post_init__(self):
        if self.pseudonym is not None and len(self.pseudonym) < MIN_PSEUDONYM:
            raise ValueError(f"pseudonym {self.pseudonym!r} shorter than {MIN_PSEUDONYM} characters")

    # identity is (role, numeric id); the pseudonym is a display attribute
    def __eq__(self, other):
        if not isinstance(other, UserId):
            return NotImplemented
        return (self.role, self.numeric_id) == (other.role, other.numeric_id)

    def __hash__(self):
        return hash((self.role.value, self.numeric_id))

    def __lt__(self, other):
        return (self.numeric_id, self.role.value) < (other.numeric_id, other.role.value)

    def __str__(self):
        return f"{self.role.value}_{self.numeric_id}"

    @classmethod
    def parse(cls, text: str, pseudonym: Optional[str] = None) -> UserId:
        role, _, num = text.strip().partition("_")
        return cls(Role(role), int(num), pseudonym)


# audiences


@dataclass(frozen=True)
class MeOnly:
    label = "Moi-seulement"


@dataclass(frozen=True)
class Public:
    label = "Public"


@dataclass(frozen=True)
class ClassAudience:
    """One or more connection classes.

    ``members`` is the id list the owner resolved when the metadata was
    generated; it is what every Privacy Defender checks, whoever holds the
    class key. ``name`` is dropped when the metadata travels with a replica.
    """

    class_ids: tuple[str, ...]
    name: Optional[str] = None
    members: frozenset[UserId] = frozenset()

    @property
    def label(self) -> str:
        return self.name or " et ".join(self.class_ids)


@dataclass(frozen=True)
class PersonList:
    members: frozenset[UserId]

    def __post_init__(self):
        if not self.members:
            raise ValueError("a person list audience cannot be empty")

    label = "Liste de personnes"


AudienceSpec = Union[MeOnly, ClassAudience, PersonList, Public]


def audience_viewers(owner: UserId, audience: AudienceSpec) -> Optional[frozenset[UserId]]:
    """Who may render content with this audience; ``None`` means everyone."""
    if isinstance(audience, Public):
        return None
    if isinstance(audience, MeOnly):
        return frozenset({owner})
    return audience.members | {owner}


class Protection(enum.Enum):
    CLEAR = "Clair"
    ENCRYPTED = "Crypté"


class Distribution(enum.Enum):
    NONE = "Non"
    ALLOWED = "Oui"
    RESTRICTED = "Restreinte"


@dataclass(frozen=True)
class AccessRights:
    distribution: Distribution = Distribution.NONE
    replication_protection: Protection = Protection.ENCRYPTED
    duplication_authorized: bool = True
    distribution_to: frozenset[UserId] = frozenset()

    def __post_init__(self):
        if self.distribution is Distribution.RESTRICTED and not self.distribution_to:
            raise ValueError("restricted distribution needs a recipient set")
        if self.distribution is not Distribution.RESTRICTED and self.distribution_to:
            raise ValueError("distribution_to only applies to restricted distribution")


class PublicationType(enum.Enum):
    DEMANDE_AIDE = "demande d'aide"
    INFORMATION = "information"
    DOCUMENT = "document"
    STATUT = "statut"


class Level(enum.Enum):
    PRIMAIRE = "Primaire"
    CEM = "CEM"
    LYCEE = "Lycée"


def default_rights(audience: AudienceSpec) -> AccessRights:
    if isinstance(audience, Public):
        return AccessRights(Distribution.ALLOWED, Protection.CLEAR, False)
    if isinstance(audience, MeOnly):
        return AccessRights(Distribution.NONE, Protection.CLEAR, False)
    if isinstance(audience, PersonList):
        return AccessRights(Distribution.NONE, Protection.CLEAR, True)
    return AccessRights(Distribution.NONE, Protection.ENCRYPTED, True)


@dataclass(frozen=True)
class Origin:
    """Where a reshared publication came from ("Bob via Alice")."""

    owner: UserId
    content_id: int


@dataclass(frozen=True)
class PublicationMetadata:
    owner: UserId
    content_id: int
    publication_type: PublicationType
    science: str
    level: Level
    audience: AudienceSpec
    rights: AccessRights
    origin: Optional[Origin] = None

    @property
    def key(self) -> tuple[UserId, int]:
        return (self.owner, self.content_id)

    def viewers(self) -> Optional[frozenset[UserId]]:
        return audience_viewers(self.owner, self.audience)

    def for_duplication(self) -> PublicationMetadata:
        """Copy sent along with replicas: the audience list name is removed."""
        if isinstance(self.audience, ClassAudience) and self.audience.name is not None:
            return replace(self, audience=replace(self.audience, name=None))
        return self


@dataclass(frozen=True)
class Publication:
    metadata: PublicationMetadata
    body: bytes


# XML codec


class MetadataError(ValueError):
    def __init__(self, kind: str, element: Optional[str] = None, detail: str = ""):
        msg = kind if element is None else f"{kind}: <{element}>"
        if detail:
            msg = f"{msg} ({detail})"
        super().__init__(msg)
        self.kind = kind
        self.element = element


_AUDIENCE_TYPES = {
    "Moi-seulement": MeOnly,
    "Classe de Connexion": ClassAudience,
    "Liste de personnes": PersonList,
    "Public": Public,
}
_TOP = ("ORIGIN", "OWNER", "TYPE", "Content_ID", "Science", "Level", "AUDIANCE", "RIGHTS")
_RIGHTS = ("ACCESS", "RELPLICATION_PROTECTION", "distribution", "DISTRIBUTION_LISTE", "DUPLICATION_AUTORISATION")


def _owner_attr(uid: UserId) -> str:
    return f"ID_{uid.role.value}"


def _user_element(parent: ET.Element, tag: str, uid: UserId) -> ET.Element:
    el = ET.SubElement(parent, tag)
    el.set(_owner_attr(uid), str(uid.numeric_id))
    if uid.pseudonym is not None:
        el.set("pseudonym", uid.pseudonym)
    return el


def _id_list(parent: ET.Element, tag: str, ids) -> None:
    lst = ET.SubElement(parent, tag)
    for uid in sorted(ids):
        ET.SubElement(lst, "USER_ID").text = str(uid)


def serialize_metadata(m: PublicationMetadata) -> bytes:
    root = ET.Element("PUBLICATION")
    if m.origin is not None:
        _user_element(root, "ORIGIN", m.origin.owner).set("Content_ID", str(m.origin.content_id))
    _user_element(root, "OWNER", m.owner)
    ET.SubElement(root, "TYPE").set("ID_TypeContenu", m.publication_type.value)
    ET.SubElement(root, "Content_ID").text = str(m.content_id)
    ET.SubElement(root, "Science").text = m.science
    ET.SubElement(root, "Level").text = m.level.value
    aud = ET.SubElement(root, "AUDIANCE")
    a = m.audience
    if isinstance(a, ClassAudience):
        if a.name is not None:
            aud.set("name", a.name)
        aud.set("type", "Classe de Connexion")
        aud.set("Audiance_ID", " ".join(a.class_ids))
        _id_list(aud, "LISTE", a.members)
    elif isinstance(a, PersonList):
        aud.set("type", "Liste de personnes")
        _id_list(aud, "LISTE", a.members)
    else:
        aud.set("type", a.label)
    rights = ET.SubElement(root, "RIGHTS")
    ET.SubElement(rights, "ACCESS")
    ET.SubElement(rights, "RELPLICATION_PROTECTION").text = m.rights.replication_protection.value
    ET.SubElement(rights, "distribution").text = m.rights.distribution.value
    if m.rights.distribution is Distribution.RESTRICTED:
        _id_list(rights, "DISTRIBUTION_LISTE", m.rights.distribution_to)
    ET.SubElement(rights, "DUPLICATION_AUTORISATION").text = "Oui" if m.rights.duplication_authorized else "Non"
    ET.indent(root)
    return ET.tostring(root, encoding="utf-8", xml_declaration=True) + b"\n"


def _parse_user(el: ET.Element) -> UserId:
    for role in Role:
        value = el.get(f"ID_{role.value}")
        if value is not None:
            try:
                return UserId(role, int(value), el.get("pseudonym"))
            except ValueError as exc:
                raise MetadataError("malformed-document", el.tag, str(exc)) from exc
    raise MetadataError("malformed-document", el.tag, "missing ID_Apprenant/ID_Enseignant")


def _parse_ids(el: Optional[ET.Element]) -> frozenset[UserId]:
    if el is None:
        return frozenset()
    ids = set()
    for child in el:
        if child.tag != "USER_ID":
            raise MetadataError("unknown-element", child.tag)
        try:
            ids.add(UserId.parse(child.text or ""))
        except ValueError as exc:
            raise MetadataError("malformed-document", "USER_ID", str(exc)) from exc
    return frozenset(ids)


def _require(root: ET.Element, tag: str) -> ET.Element:
    el = root.find(tag)
    if el is None:
        raise MetadataError("malformed-document", tag, "missing element")
    return el


def _text(root: ET.Element, tag: str) -> str:
    return (_require(root, tag).text or "").strip()


def _enum(cls, value: str, tag: str):
    try:
        return cls(value)
    except ValueError as exc:
        raise MetadataError("malformed-document", tag, f"bad value {value!r}") from exc


def parse_metadata(xml: bytes) -> PublicationMetadata:
    try:
        root = ET.fromstring(xml)
    except ET.ParseError as exc:
        raise MetadataError("malformed-document", None, str(exc)) from exc
    if root.tag != "PUBLICATION":
        raise MetadataError("unknown-element", root.tag)
    for child in root:
        if child.tag not in _TOP:
            raise MetadataError("unknown-element", child.tag)
    owner = _parse_user(_require(root, "OWNER"))
    origin = None
    if (org := root.find("ORIGIN")) is not None:
        origin = Origin(_parse_user(org), int(org.get("Content_ID", "0")))
    ptype = _enum(PublicationType, _require(root, "TYPE").get("ID_TypeContenu", ""), "TYPE")
    try:
        content_id = int(_text(root, "Content_ID"))
    except ValueError as exc:
        raise MetadataError("malformed-document", "Content_ID", str(exc)) from exc
    level = _enum(Level, _text(root, "Level"), "Level")

    aud_el = _require(root, "AUDIANCE")
    for child in aud_el:
        if child.tag != "LISTE":
            raise MetadataError("unknown-element", child.tag)
    kind = _AUDIENCE_TYPES.get(aud_el.get("type", ""))
    if kind is None:
        raise MetadataError("malformed-document", "AUDIANCE", f"bad type {aud_el.get('type')!r}")
    members = _parse_ids(aud_el.find("LISTE"))
    if kind is ClassAudience:
        class_ids = tuple(aud_el.get("Audiance_ID", "").split())
        if not class_ids:
            raise MetadataError("malformed-document", "AUDIANCE", "missing Audiance_ID")
        audience: AudienceSpec = ClassAudience(class_ids, aud_el.get("name"), members)
    elif kind is PersonList:
        if not members:
            raise MetadataError("malformed-document", "AUDIANCE", "empty person list")
        audience = PersonList(members)
    else:
        audience = kind()

    rights_el = _require(root, "RIGHTS")
    for child in rights_el:
        if child.tag not in _RIGHTS:
            raise MetadataError("unknown-element", child.tag)
    dist = _enum(Distribution, _text(rights_el, "distribution"), "distribution")
    rights = AccessRights(
        distribution=dist,
        replication_protection=_enum(Protection, _text(rights_el, "RELPLICATION_PROTECTION"),
                                     "RELPLICATION_PROTECTION"),
        duplication_authorized=_text(rights_el, "DUPLICATION_AUTORISATION") == "Oui",
        distribution_to=_parse_ids(rights_el.find("DISTRIBUTION_LISTE")) if dist is Distribution.RESTRICTED
        else frozenset(),
    )
    return PublicationMetadata(owner, content_id, ptype, _text(root, "Science"), level, audience, rights, origin)
