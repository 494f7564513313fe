import random
from fractions import Fraction
from importlib import resources

import pytest
from hypothesis import given, strategies as st

from appraide import crypto_core as cc
from appraide.metadata import (
    AccessRights, ClassAudience, Distribution, Level, MeOnly, MetadataError, Origin, PersonList, Protection,
    Public, PublicationMetadata, PublicationType, Role, UserId, parse_metadata, serialize_metadata,
)
from appraide.profile import Profile, ProfileError, SelfTestResult, default_settings

T80, T1088, T4852 = (UserId(Role.ENSEIGNANT, n) for n in (80, 1088, 4852))
OWNER = UserId(Role.APPRENANT, 5484, "Amina")


def fixture_bytes(name):
    return resources.files("appraide").joinpath("fixtures", name).read_bytes()


def help_request_meta():
    audience = ClassAudience(("CC2",), "Mes enseignants", frozenset({T80, T1088, T4852}))
    rights = AccessRights(Distribution.NONE, Protection.ENCRYPTED, True)
    return PublicationMetadata(OWNER, 17, PublicationType.DEMANDE_AIDE, "Mathématique", Level.LYCEE,
                               audience, rights)


def test_userid_identity_ignores_pseudonym():
    assert UserId(Role.APPRENANT, 1, "abcd") == UserId(Role.APPRENANT, 1)
    assert UserId(Role.APPRENANT, 1) != UserId(Role.ENSEIGNANT, 1)
    assert UserId.parse("Enseignant_80") == T80
    with pytest.raises(ValueError):
        UserId(Role.APPRENANT, 1, "abc")


def test_fig32_bytes():
    assert serialize_metadata(help_request_meta()) == fixture_bytes("fig32_metadata.xml")


def test_fig32_roundtrip():
    meta = parse_metadata(fixture_bytes("fig32_metadata.xml"))
    assert meta == help_request_meta()
    assert meta.owner.pseudonym == "Amina"
    assert meta.audience.name == "Mes enseignants"
    assert meta.audience.members == {T80, T1088, T4852}


def test_fig33_duplicated_copy_drops_list_name():
    dup = help_request_meta().for_duplication()
    assert dup.audience.name is None
    assert dup.audience.members == {T80, T1088, T4852}
    assert serialize_metadata(dup) == fixture_bytes("fig33_duplicated.xml")


def test_missing_owner_is_malformed():
    xml = fixture_bytes("fig32_metadata.xml").replace(b'<OWNER ID_Apprenant="5484" pseudonym="Amina" />', b"")
    with pytest.raises(MetadataError) as exc:
        parse_metadata(xml)
    assert exc.value.kind == "malformed-document"
    assert exc.value.element == "OWNER"


def test_unknown_element_rejected():
    xml = fixture_bytes("fig32_metadata.xml").replace(b"<Level>", b"<Extra/><Level>")
    with pytest.raises(MetadataError) as exc:
        parse_metadata(xml)
    assert exc.value.kind == "unknown-element"


def test_not_xml():
    with pytest.raises(MetadataError):
        parse_metadata(b"<PUBLICATION>")


users = st.builds(UserId, st.sampled_from(list(Role)), st.integers(1, 10**6))
audiences = st.one_of(
    st.just(MeOnly()), st.just(Public()),
    st.builds(PersonList, st.frozensets(users, min_size=1, max_size=4)),
    st.builds(ClassAudience, st.lists(st.sampled_from(["CC1", "CC3", "CC5"]), min_size=1, max_size=2,
                                      unique=True).map(tuple),
              st.one_of(st.none(), st.sampled_from(["Amis", "Mes camarades"])),
              st.frozensets(users, max_size=4)),
)


@st.composite
def metadata(draw):
    audience = draw(audiences)
    dist = draw(st.sampled_from(list(Distribution)))
    to = draw(st.frozensets(users, min_size=1, max_size=3)) if dist is Distribution.RESTRICTED else frozenset()
    rights = AccessRights(dist, draw(st.sampled_from(list(Protection))), draw(st.booleans()), to)
    origin = draw(st.one_of(st.none(), st.builds(Origin, users, st.integers(1, 999))))
    return PublicationMetadata(draw(users), draw(st.integers(1, 10**6)), draw(st.sampled_from(list(PublicationType))),
                               draw(st.sampled_from(["Maths", "Physique", "Histoire-Géo"])),
                               draw(st.sampled_from(list(Level))), audience, rights, origin)


@given(metadata())
def test_metadata_roundtrip_property(meta):
    assert parse_metadata(serialize_metadata(meta)) == meta


TABLE4 = [
    ("Identité", "Droits d'accès (Clair)", "Famille"),
    ("Attributs démographiques", "Droits d'accès (Clair)", "Famille"),
    ("Activités de réseautage social", "Droits d'accès + Chiffrement", "Amis"),
    ("Activités liées à l'apprentissage", "Droits d'accès (Clair)", "Moi-seulement"),
    ("Critères de comparaison", "Droits d'accès (Clair)", "Moi-seulement"),
    ("Ses intérêts", "Droits d'accès + Chiffrement", "Amis"),
    ("Les publications", "Droits d'accès + Chiffrement", "Amis"),
    ("Certification et diplôme", "Droits d'accès + Chiffrement", "Camarades et Famille"),
    ("Les connexions", "Droits d'accès (Clair)", "Moi-seulement"),
]


def test_default_settings_rows():
    rows = default_settings()
    assert [(r.content_type, r.protection_label, r.audience_label) for r in rows.values()] == TABLE4
    assert rows["Identité"].audience == ClassAudience(("Famille",), "Famille")
    assert isinstance(rows["Critères de comparaison"].audience, MeOnly)
    assert rows["Les publications"].protection is Protection.ENCRYPTED


def make_profile(n=1, seed=0):
    user = UserId(Role.APPRENANT, n, f"user{n:02d}")
    return Profile(user, cc.generate_keypair(64, random.Random(seed)), random.Random(seed + 100), class_key_bits=64)


@pytest.fixture
def alice():
    p = make_profile(1)
    for n in (2, 3, 4):
        p.add_friend(UserId(Role.APPRENANT, n), cc.generate_keypair(64, random.Random(n)).public)
    return p


BOB, CAROL, DAVE = (UserId(Role.APPRENANT, n) for n in (2, 3, 4))


def test_assign_delivers_key(alice):
    bob = make_profile(2, seed=2)
    deliveries = alice.assign_to_class(BOB, "Camarades")
    assert [d.recipient for d in deliveries] == [BOB]
    for d in deliveries:
        assert bob.install_class_key(d)
    assert bob.holds_class_key(alice.user, "CC3")


def test_assign_twice_idempotent(alice):
    alice.assign_to_class(BOB, "CC3")
    before = (list(alice.classes["CC3"].members), dict(alice.keyring))
    assert alice.assign_to_class(BOB, "CC3") == []
    assert (list(alice.classes["CC3"].members), dict(alice.keyring)) == before


def test_assign_blocked_rejected(alice):
    alice.block(DAVE)
    with pytest.raises(ProfileError):
        alice.assign_to_class(DAVE, "CC1")


def test_remove_rotates_key(alice):
    alice.assign_to_class(BOB, "CC3")
    alice.assign_to_class(CAROL, "CC3")
    old = alice.classes["CC3"].keypair
    deliveries = alice.remove_from_class(BOB, "CC3")
    cls = alice.classes["CC3"]
    assert cls.members == [CAROL]
    assert cls.keypair != old and cls.version == 1
    assert [d.recipient for d in deliveries] == [CAROL]
    # bob kept only version 0: a publication under version 1 is closed to him
    env = cc.encrypt_envelope(cls.keypair.public, b"after removal", random.Random(1))
    with pytest.raises(cc.IntegrityError):
        cc.decrypt_envelope(old, env)


def test_remove_from_empty_class_noop(alice):
    assert alice.remove_from_class(BOB, "CC4") == []
    assert alice.classes["CC4"].keypair is None


def test_resolve_audience(alice):
    alice.assign_to_class(BOB, "CC3")
    alice.assign_to_class(CAROL, "CC5")
    aud = alice.resolve_audience(("CC3", "CC5"))
    assert aud.class_ids == ("CC3", "CC5") and aud.members == {BOB, CAROL}
    assert alice.resolve_audience("me") == MeOnly()
    assert alice.resolve_audience({BOB}) == PersonList(frozenset({BOB}))
    with pytest.raises(ProfileError):
        alice.resolve_audience("Inconnus")


def test_self_test_results_kept():
    p = make_profile()
    p.record_self_test(SelfTestResult(p.user, "qcm", Fraction(1, 2), 3))
    p.record_self_test(SelfTestResult(p.user, "qcm", Fraction(3, 4), 9))
    assert [(r.score, r.taken_at) for r in p.self_tests] == [(Fraction(1, 2), 3), (Fraction(3, 4), 9)]
    with pytest.raises(ValueError):
        SelfTestResult(p.user, "qcm", Fraction(5, 4), 1)
    with pytest.raises(ProfileError):
        p.record_self_test(SelfTestResult(BOB, "qcm", Fraction(1), 1))
