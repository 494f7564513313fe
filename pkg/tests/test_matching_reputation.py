from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from appraide import matching as mt
from appraide.metadata import Level, Role, UserId

HELPEE = UserId(Role.APPRENANT, 1)
X, Y, Z, BLOCKED = (UserId(Role.APPRENANT, n) for n in (2, 3, 4, 5))


def request(**kw):
    base = dict(requester=HELPEE, level=Level.LYCEE, study_year=2, subject="Maths", chapter="Suites",
                helper_grade=Role.APPRENANT, helper_level=mt.HelperLevel.ELEVE, duration=60)
    base.update(kw)
    return mt.HelpRequest(**base)


PREFS = mt.HelperPreferences(True, frozenset({Level.LYCEE}), frozenset({"Maths"}), 90)


def test_match_examples():
    assert mt.match_request_to_prefs(request(), PREFS)
    assert not mt.match_request_to_prefs(request(), mt.HelperPreferences(False, PREFS.levels, PREFS.subjects, 90))
    assert not mt.match_request_to_prefs(request(duration=120), mt.HelperPreferences(True, PREFS.levels,
                                                                                      PREFS.subjects, 60))
    assert mt.match_request_to_prefs(request(subject="maths"), PREFS)
    assert not mt.match_request_to_prefs(request(level=Level.CEM), PREFS)
    assert not mt.match_request_to_prefs(request(), PREFS, helper_role=Role.ENSEIGNANT)


def test_teacher_kind():
    req = request(helper_grade=Role.ENSEIGNANT, teacher_kind=mt.TeacherKind.BENEVOLE)
    paid = mt.HelperPreferences(True, PREFS.levels, PREFS.subjects, 90, kind=mt.TeacherKind.FREELANCER)
    assert not mt.match_request_to_prefs(req, paid)
    with pytest.raises(mt.MatchingError):
        request(helper_grade=Role.ENSEIGNANT)
    with pytest.raises(mt.MatchingError):
        request(teacher_kind=mt.TeacherKind.BENEVOLE)
    with pytest.raises(mt.MatchingError):
        request(duration=0)


def test_request_text_roundtrip():
    req = request(helper_grade=Role.ENSEIGNANT, teacher_kind=mt.TeacherKind.FREELANCER, description="vite")
    assert mt.HelpRequest.from_text(req.to_text()) == req


def test_course_bounds():
    mt.CourseAnnouncement("Cours", Level.CEM, 3, "Maths", "U1", 2, mt.HelperLevel.FAIBLE, "lundi", 60)
    with pytest.raises(mt.MatchingError):
        mt.CourseAnnouncement("Cours", Level.CEM, 3, "Maths", "U1", 11, mt.HelperLevel.FAIBLE, "lundi", 60)


def test_ranking():
    store = mt.EvaluationStore()
    store.record_given(mt.Evaluation("s1", X, mt.HelpRating.TRES_UTILE, True))
    store.record_given(mt.Evaluation("s2", Y, mt.HelpRating.PAS_DU_TOUT_UTILE, False))
    offers = [mt.Offer(Y, "q", "", 1), mt.Offer(BLOCKED, "q", "", 2), mt.Offer(Z, "q", "", 3), mt.Offer(X, "q", "", 4)]
    ranked = mt.filter_and_rank_offers(offers, {BLOCKED}, store)
    assert [o.offerer for o in ranked] == [X, Z, Y]
    assert store.score_of(X) == 2 and store.score_of(Z) is None


@given(st.lists(st.integers(2, 30), unique=True))
def test_unknown_offerers_keep_arrival_order(ids):
    offers = [mt.Offer(UserId(Role.APPRENANT, n), "q", "", i) for i, n in enumerate(ids)]
    assert mt.filter_and_rank_offers(reversed(offers), set(), mt.EvaluationStore()) == offers


def test_session_evaluations():
    helpee_store, helper_store = mt.EvaluationStore(), mt.EvaluationStore()
    pair = mt.EvaluationPair(mt.HelpRating.UTILE, True, mt.HelpeeRating.BON, False)
    mt.record_session_evaluations("s1", HELPEE, X, pair, helpee_store, helper_store)
    assert helper_store.received["s1"].rating is mt.HelpRating.UTILE
    assert helpee_store.received["s1"].rating is mt.HelpeeRating.BON
    with pytest.raises(mt.MatchingError):
        mt.record_session_evaluations("s1", HELPEE, X, pair, helpee_store, helper_store)
    assert helpee_store.score_of(X) == Fraction(1)


def reporters(n, start=100):
    return [UserId(Role.APPRENANT, start + i) for i in range(n)]


def replay(user, events):
    rec, actions = mt.ReputationRecord(user), []
    for ev in events:
        rec, action = mt.update_reputation(rec, ev)
        actions.append(action)
    return rec, actions


def bully(who, incident="post"):
    return mt.Report(who, mt.ReportCategory.INTIMIDATEUR, incident)


TABLE5 = [
    "Apprenant_898\t0\t4\t0\t4\t15\tVrai\tSuspendu",
    "Enseignant_204\t3\t0\t6\t9\t58\tVrai\tSuspendu",
    "Enseignant_258\t0\t0\t0\t0\t0\tFaux\tAucune",
    "Apprenant_269\t0\t3\t0\t1\t6\tVrai\t2 Fausses déclarations",
]


def table5_records():
    a898, _ = replay(UserId(Role.APPRENANT, 898),
                     [bully(r) for r in reporters(4)] + [mt.AssistantVisit(X)] * 15 + [mt.AdminReview(suspend=True)])
    people = reporters(9)
    e204, actions = replay(UserId(Role.ENSEIGNANT, 204),
                           [mt.Report(r, mt.ReportCategory.PREDATEUR, "msg") for r in people[:3]]
                           + [mt.SpamBlock(r) for r in people[3:]])
    assert actions[3] == "review-requested" and actions[5] == "suspended"
    for ev in [mt.AssistantVisit(X)] * 58 + [mt.AdminReview(suspend=True)]:
        e204, _ = mt.update_reputation(e204, ev)
    e258 = mt.ReputationRecord(UserId(Role.ENSEIGNANT, 258))
    a269, _ = replay(UserId(Role.APPRENANT, 269),
                     [bully(r) for r in reporters(3)] + [mt.AssistantVisit(X)] * 6 + [mt.AdminReview(2)])
    return [a898, e204, e258, a269]


def test_table5_rows():
    rows = ["\t".join(r.table_row()) for r in table5_records()]
    assert rows == TABLE5


def test_table5_export_header():
    text = mt.export_reputation_table(table5_records())
    assert text.splitlines()[0].split("\t") == list(mt.TABLE_COLUMNS)
    assert len(text.splitlines()) == 5


def test_review_boundary():
    rec, actions = replay(X, [bully(r) for r in reporters(3)])
    assert rec.total_reports == 3 and not rec.review_requested
    # a fourth report from one of the same three reporters crosses > 3
    rec, action = mt.update_reputation(rec, bully(reporters(1)[0], "another"))
    assert action == "review-requested" and len(rec.distinct_reporters) == 3
    # four reports from only two people: no review
    rec, _ = replay(Y, [bully(r, i) for r in reporters(2) for i in ("a", "b")])
    assert rec.total_reports == 4 and not rec.review_requested


def test_suspend_boundary():
    rec, actions = replay(X, [bully(r) for r in reporters(5)])
    assert rec.total_reports == 5 and not rec.suspended
    rec, action = mt.update_reputation(rec, bully(reporters(6)[5]))
    assert action == "suspended" and rec.decision is mt.DecisionKind.SUSPENDU
    # six reports from five people suffice; from four they do not
    rec, _ = replay(Y, [bully(r) for r in reporters(5)] + [bully(reporters(1)[0], "again")])
    assert rec.suspended
    rec, _ = replay(Y, [bully(r, i) for r in reporters(4) for i in ("a", "b")][:6])
    assert rec.total_reports == 6 and not rec.suspended


def test_no_auto_suspend_after_review():
    rec, _ = replay(X, [bully(r) for r in reporters(4)] + [mt.AdminReview()] + [bully(r) for r in reporters(4, 200)])
    assert rec.reviewed and not rec.suspended and rec.decision is mt.DecisionKind.AUCUNE


def test_self_report_and_duplicates():
    with pytest.raises(ValueError):
        mt.update_reputation(mt.ReputationRecord(X), bully(X))
    rec, actions = replay(Y, [bully(X), bully(X)])
    assert rec.bully_reports == 1 and actions == [None, None]


@given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 3), st.booleans()), max_size=40))
def test_suspension_needs_enough_reporters(events):
    rec = mt.ReputationRecord(Z)
    for who, incident, predator in events:
        category = mt.ReportCategory.PREDATEUR if predator else mt.ReportCategory.INTIMIDATEUR
        rec, action = mt.update_reputation(rec, mt.Report(UserId(Role.APPRENANT, 100 + who), category, str(incident)))
        if action == "suspended":
            assert rec.total_reports > 5 and len(rec.distinct_reporters) >= 5
        if action == "review-requested":
            assert rec.total_reports > 3 and len(rec.distinct_reporters) >= 3
    assert rec.total_reports == len(rec.incidents)


def test_warning_dialogue():
    assert mt.assistant_warn(0, [False]) == mt.WarnOutcome((mt.FIRST_PROMPT,), False)
    assert mt.assistant_warn(2, [True]).block
    second = mt.assistant_warn(2, [False, True])
    assert second.prompts == (mt.FIRST_PROMPT, mt.SECOND_PROMPT) and not second.block
    assert mt.assistant_warn(2, [False, False]).block
    with pytest.raises(ValueError):
        mt.assistant_warn(2, [False])
