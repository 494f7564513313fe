"""Independent set-logic oracles the engine is checked against."""

import itertools
import random

from appraide import crypto_core as cc
from appraide import engine
from appraide.metadata import (
    AccessRights, ClassAudience, Distribution, Level, PersonList, Protection, Public, Publication,
    PublicationMetadata, PublicationType, Role, UserId,
)

CLASS_KEY = cc.generate_keypair(64, random.Random(55))


def users(n):
    return [UserId(Role.APPRENANT, i + 1) for i in range(n)]


def subsets(items, min_size=0):
    for k in range(min_size, len(items) + 1):
        yield from (frozenset(c) for c in itertools.combinations(items, k))


def reshare_oracle(owner, original, resharer, chosen, everyone):
    """Who sees the reshare: the resharer, plus chosen people the owner allowed.

    ``original``/``chosen`` are sets of users or None for public.
    """
    allowed = set(everyone) if original is None else set(original) | {owner}
    picked = set(everyone) if chosen is None else set(chosen)
    return (picked & allowed) | {resharer}


def make_audience(kind, members, class_id="CC1"):
    if members is None:
        return Public()
    if kind == "class":
        return ClassAudience((class_id,), None, frozenset(members))
    return PersonList(frozenset(members))


def original_pub(owner, audience, distribution=Distribution.ALLOWED):
    protection = Protection.ENCRYPTED if isinstance(audience, ClassAudience) else Protection.CLEAR
    meta = PublicationMetadata(owner, 1, PublicationType.STATUT, "Maths", Level.LYCEE, audience,
                               AccessRights(distribution, protection, True))
    return Publication(meta, b"corps original")


def engine_reshare_renders(owner, original_audience, resharer, new_audience, everyone):
    """Render decisions of every user on the resharer's copy.

    Every user holds the resharer's class key, so only the metadata check
    can keep anyone out.
    """
    pub = original_pub(owner, original_audience)
    derived = engine.reshare(resharer, pub.metadata, pub.body, new_audience, 2)
    audience = derived.metadata.audience
    keys = {"CC1": (0, CLASS_KEY)}
    keyring = {(resharer, "CC1"): {0: CLASS_KEY}}
    seen = set()
    for viewer in everyone:
        form = engine.Form.ENCRYPTED if isinstance(audience, ClassAudience) else engine.Form.CLEAR
        replica = engine.build_replica(derived, viewer, form, 0, keys, rng=random.Random(1))
        if engine.render_feed_item(viewer, replica, keyring) is not None:
            seen.add(viewer)
    return seen
