import os
import subprocess
import sys
from collections import defaultdict, deque
from fractions import Fraction

import pytest

from appraide import engine, simnet
from appraide import matching as mt
from appraide.engine import Form, Placement
from appraide.metadata import Level, Public, PublicationType, Role
from appraide.scenario import parse_scenario, random_scenario, run_scenario
from appraide.simnet import AuthRejected, RegistrationRejected, SimConfig, SimError, SimWorld

from generators import churn_scenario


def world_with(*names, seed=0):
    w = SimWorld(SimConfig(seed=seed))
    for n in names:
        w.register(n, f"pw-{n}", Role.APPRENANT)
        w.connect(n)
    w.run()
    return w


def test_register_rules():
    w = SimWorld()
    with pytest.raises(RegistrationRejected, match="too-short"):
        w.register("abc", "pw", Role.APPRENANT)
    w.register("abcd", "pw", Role.APPRENANT)
    with pytest.raises(RegistrationRejected, match="taken"):
        w.register("abcd", "pw2", Role.APPRENANT)


def test_teacher_needs_approval():
    w = SimWorld()
    w.register("prof", "secret", Role.ENSEIGNANT)
    with pytest.raises(AuthRejected):
        w.authenticate("prof", "secret")
    w.approve_teacher("prof")
    assert w.authenticate("prof", "secret").role is Role.ENSEIGNANT


def test_wrong_password_leaves_state():
    w = SimWorld()
    uid = w.register("alice", "right", Role.APPRENANT)
    with pytest.raises(AuthRejected):
        w.authenticate("alice", "wrong")
    assert not w.server.directory[uid].connected


def test_connect_idempotent_and_unknown_disconnect():
    w = world_with("alice")
    before = len(w.trace)
    w.connect("alice")
    assert len(w.trace) == before
    with pytest.raises(SimError):
        w.disconnect("nobody")


def test_step_on_empty_queue():
    w = SimWorld()
    assert not w.step()
    assert w.clock == 0


def test_run_is_fold_of_step():
    text = run_scenario(parse_scenario(fixture("scenario1_intersection.txt"))).world.trace_text()
    sc = parse_scenario(fixture("scenario1_intersection.txt"))
    from appraide.scenario import build_world
    w, _ = build_world(sc)
    last = sc.commands[-1].tick + 50
    while w.pending_events() and w._queue[0][0] <= last:
        w.step()
    w.clock = last
    w.scan(full=True)
    assert w.trace_text() == text


def fixture(name):
    from appraide.cli import fixture_text
    return fixture_text(name)


def test_public_diffusion_and_late_pull():
    w = world_with("alice", "bobby", "carol", "dave", "emma", "fanny")
    w.register("late", "pw-late", Role.APPRENANT)
    key = w.publish("alice", PublicationType.INFORMATION, "Maths", Level.LYCEE, "public", b"annonce")
    w.run()
    feeds = [p for p in w.peers.values() if key in p.feed and p.uid != key[0]]
    assert len(feeds) == 5
    assert not w.peer("late").feed
    w.connect("late")
    w.run()
    assert key in w.peer("late").feed


def test_causality_in_trace():
    report = run_scenario(random_scenario(3, peers=6, events=200), strict=False)
    pending = defaultdict(deque)
    for line in report.world.trace:
        tick, node, event, _ = line.split("|")
        tick = int(tick)
        if event.startswith("send:"):
            kind, dst = event[5:].split(">")
            pending[(node, dst, kind)].append(tick)
        elif event.startswith(("recv:", "bounce:")):
            kind, src = event.split(":", 1)[1].split("<")
            sent = pending[(src, node, kind)].popleft()
            assert tick >= sent + 1


def test_offline_holder_gets_replica_on_reconnect():
    w = world_with("alice", "bobby")
    w.befriend("alice", "bobby")
    w.run()
    w.disconnect("bobby")
    key = w.publish("alice", PublicationType.STATUT, "Maths", Level.LYCEE, "Amis", b"hors ligne")
    w.run()
    assert key not in w.peer("bobby").replicas
    w.connect("bobby")
    w.run()
    assert w.peer("bobby").replicas[key].form is Form.ENCRYPTED


def test_escrow_forwarded_on_login():
    w = world_with("alice", "bobby")
    w.befriend("alice", "bobby")
    w.run()
    keys = [w.publish("alice", PublicationType.STATUT, "Maths", Level.LYCEE, "Amis", f"p{i}".encode())
            for i in range(2)]
    w.run()
    w.disconnect("bobby")
    for k in keys:
        w.delete_content("alice", k[1])
    w.run()
    assert w.server.escrow_count() == 2
    w.connect("bobby")
    w.run()
    assert w.server.escrow_count() == 0
    assert not w.peer("bobby").replicas


def test_tampered_deletion_request_ignored():
    w = world_with("alice", "bobby")
    w.befriend("alice", "bobby")
    w.run()
    key = w.publish("alice", PublicationType.STATUT, "Maths", Level.LYCEE, "Amis", b"garde-moi")
    other = w.publish("alice", PublicationType.STATUT, "Maths", Level.LYCEE, "Amis", b"efface-moi")
    w.run()
    real = engine.make_deletion_request(w.peer("alice").uid, w.peer("alice").keys, other[1])
    forged = engine.DeletionRequest(real.owner, key[1], real.owner_signature)
    w.send(w.peer("alice").uid, w.peer("bobby").uid, "DELETE_REQUEST", forged.to_text().encode())
    w.run()
    assert key in w.peer("bobby").replicas
    assert any("|delete-ignored|" in line for line in w.trace)


def test_churn_deletion_completes():
    for seed in range(3):
        sc, owner, labels, _ = churn_scenario(seed)
        w = run_scenario(sc).world
        uid = w.peer(owner).uid
        for cid in range(1, len(labels) + 1):
            assert w.replica_count((uid, cid)) == 0
        assert w.server.escrow_count() == 0


def test_self_test_stays_local():
    w = world_with("alice", "bobby")
    w.self_test("alice", "qcm-zz", Fraction(3, 4))
    w.run()
    assert "qcm-zz" not in w.server.state_text()
    assert all(b"qcm-zz" not in e.plaintext for e in w.audit)
    assert w.peer("alice").profile.self_tests[0].score == Fraction(3, 4)


def test_scanner_catches_clear_leak(monkeypatch):
    # negative control: a broken placement that ships clear copies to every friend
    def leaky(pub, friends, known_classes=None):
        return [Placement(u, Form.CLEAR) for u in sorted(friends) if u != pub.metadata.owner]

    monkeypatch.setattr(engine, "place_and_replicate", leaky)
    report = run_scenario(parse_scenario(fixture("scenario1_intersection.txt")))
    assert any("clear replica" in v for v in report.violations)
    assert not report.ok


def test_scanner_catches_render_leak(monkeypatch):
    real = engine.render_feed_item

    def careless(viewer, replica, keyring, hidden_authors=frozenset()):
        meta = replica.metadata
        return real(meta.owner, replica, keyring, hidden_authors) or real(viewer, replica, keyring)

    monkeypatch.setattr(engine, "render_feed_item", careless)
    report = run_scenario(parse_scenario(fixture("scenario1_intersection.txt")))
    assert any("rendered" in v for v in report.violations)


def test_scanner_catches_server_leak():
    w = world_with("alice", "bobby")
    w.befriend("alice", "bobby")
    w.run()
    key = w.publish("alice", PublicationType.STATUT, "Maths", Level.LYCEE, "Amis", b"prive-prive")
    w.server.abuse_reports.append(simnet.AbuseReportRecord(w.peer("bobby").uid, key[0], mt.ReportCategory.INTIMIDATEUR,
                                                           "post", "prive-prive", "0"))
    w.scan(full=True)
    assert any("private body" in v for v in w.violations)


def run_cli_trace(tmp_path, name, hashseed):
    out = tmp_path / f"{name}.{hashseed}.log"
    env = dict(os.environ, PYTHONHASHSEED=str(hashseed))
    subprocess.run([sys.executable, "-m", "appraide", "run", name, "--trace", str(out)], env=env, check=True,
                   capture_output=True)
    return out.read_bytes()


def test_determinism_across_hash_seeds(tmp_path):
    a = run_cli_trace(tmp_path, "helper_matching.txt", 1)
    b = run_cli_trace(tmp_path, "helper_matching.txt", 4242)
    assert a == b and a


def test_random_scenario_determinism():
    a = run_scenario(random_scenario(9, peers=6, events=150), strict=False)
    b = run_scenario(random_scenario(9, peers=6, events=150), strict=False)
    assert a.world.trace_text() == b.world.trace_text()
    assert a.world_digest == b.world_digest


def test_denied_requester_gets_no_plaintext():
    report = run_scenario(parse_scenario(fixture("scenario1_intersection.txt")))
    w = report.world
    dave = str(w.peer("dave").uid)
    private = [p.body for p in w.catalog.values() if p.body and not isinstance(p.metadata.audience, Public)]
    to_dave = [e for e in w.audit if e.receiver == dave]
    assert any(e.kind == "ACCESS_DENIED" for e in to_dave)
    assert not any(body in e.plaintext for e in to_dave for body in private)


def test_class_key_holders_are_current_or_former_members():
    report = run_scenario(random_scenario(4, peers=8, events=300), strict=False)
    w = report.world
    for peer in w.peers.values():
        for (owner, class_id), versions in peer.profile.keyring.items():
            if owner != peer.uid and versions and owner in w.peers:
                assert peer.uid in w.peers[owner].profile.classes[class_id].ever_members
