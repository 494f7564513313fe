"""Scenario generators used by the simulator and acceptance tests."""

import random

from appraide.scenario import parse_scenario


def churn_scenario(seed, keep_offline=False):
    """One owner, a few friends, several posts, churn, then deletion of every post.

    Returns (scenario, owner, labels, offline) where ``offline`` is the friend
    that never comes back when ``keep_offline`` is set.
    """
    rng = random.Random(seed)
    names = ["owner"] + [f"frd{i:02d}" for i in range(rng.randint(3, 6))]
    friends = names[1:]
    lines = [f"seed {seed}"]
    lines += [f"0 register {n} pw-{n} apprenant" for n in names]
    lines += [f"0 connect {n}" for n in names]
    lines += [f"1 befriend owner {f}" for f in friends]
    for f in friends:
        for cls in rng.sample(["amis", "camarades", "famille"], rng.randint(0, 2)):
            lines.append(f"2 assign-class owner {f} {cls}")
    tick, labels, online = 3, [], set(friends)
    for i in range(rng.randint(2, 5)):
        if rng.random() < 0.6:
            aud = "class:" + rng.choice(["amis", "camarades", "famille"])
        else:
            aud = "persons:" + ",".join(rng.sample(friends, rng.randint(1, len(friends))))
        lines.append(f'{tick} publish owner statut maths lycee {aud} dist:non "post-{seed}-{i}" as c{i}')
        labels.append(f"c{i}")
        # churn between posts: replicas to offline friends wait in the outbox
        for f in friends:
            if rng.random() < 0.3:
                lines.append(f"{tick} {'disconnect' if f in online else 'connect'} {f}")
                online ^= {f}
        tick += rng.randint(1, 3)
    for f in sorted(set(friends) - online):
        lines.append(f"{tick} connect {f}")
    online = set(friends)
    tick += 4
    offline = rng.choice(friends) if keep_offline else None
    for f in friends:
        if f == offline or rng.random() < 0.4:
            lines.append(f"{tick} disconnect {f}")
            online.discard(f)
    tick += 1
    for lab in labels:
        lines.append(f"{tick} delete-content owner {lab}")
    tick += rng.randint(2, 6)
    for f in sorted(set(friends) - online - {offline}):
        lines.append(f"{tick} connect {f}")
        tick += rng.randint(0, 2)
    return parse_scenario("\n".join(lines) + "\n"), "owner", labels, offline


def matching_scenario(seed):
    """Random helper searches with auto offers, sessions, evaluations and blocks."""
    rng = random.Random(seed)
    names = [f"mtc{i:02d}" for i in range(8)]
    subjects = ["maths", "physique", "chimie"]
    lines = [f"seed {seed}"]
    lines += [f"0 register {n} pw-{n} apprenant" for n in names]
    lines += [f"0 connect {n}" for n in names]
    for _ in range(10):
        a, b = rng.sample(names, 2)
        lines.append(f"1 befriend {a} {b}")
    for n in names:
        mine = ",".join(rng.sample(subjects, 2))
        lines.append(f"1 set-prefs {n} subjects={mine} levels=lycee max=90 auto")
    lines += [f"2 self-test {n} qcm-{seed}-{n} {rng.randint(0, 4)}/4" for n in names]
    tick = 3
    for q in range(6):
        asker, other = rng.sample(names, 2)
        if rng.random() < 0.4:
            lines.append(f"{tick} block {asker} {other}")
        lines.append(f"{tick + 1} request-help {asker} {rng.choice(subjects)} lycee 60 apprenant as q{q}")
        lines.append(f"{tick + 16} accept-offer {asker} q{q}")
        lines.append(f"{tick + 17} end-session {asker} q{q}")
        rating = rng.choice(["tres-utile", "utile", "pas-du-tout-utile"])
        lines.append(f"{tick + 18} evaluate {asker} q{q} {rating} oui")
        tick += 20
    return parse_scenario("\n".join(lines) + "\n")
