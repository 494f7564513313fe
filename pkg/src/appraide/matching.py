"""Helper search, offer ranking, session evaluations and reputation.

Matching only ever moves requests and free-text offers between peers. Scores
of self-tests and session evaluations stay in each peer's local store; the
server sees abuse reports, block notices and reputation queries.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Optional, Sequence, Union

from .metadata import Level, Role, UserId

OFFER_WINDOW = 10


class MatchingError(ValueError):
    pass


class TeacherKind(enum.Enum):
    BENEVOLE = "Bénévole"
    FREELANCER = "Freelancer"


class HelperLevel(enum.Enum):
    ELEVE = "élevé"
    INTERMEDIAIRE = "intermédiaire"
    FAIBLE = "faible"


@dataclass(frozen=True)
class HelpRequest:
    requester: UserId
    level: Level
    study_year: int
    subject: str
    chapter: str
    helper_grade: Role
    helper_level: HelperLevel
    duration: int
    teacher_kind: Optional[TeacherKind] = None
    description: Optional[str] = None

    def __post_init__(self):
        if self.duration <= 0:
            raise MatchingError("duration must be positive")
        if (self.teacher_kind is not None) != (self.helper_grade is Role.ENSEIGNANT):
            raise MatchingError("teacher kind is given exactly when a teacher is requested")
        if self.helper_level is HelperLevel.FAIBLE:
            raise MatchingError("a helper level is élevé or intermédiaire")

    def to_text(self) -> str:
        lines = [
            f"requester: {self.requester}",
            f"level: {self.level.value}",
            f"study_year: {self.study_year}",
            f"subject: {self.subject}",
            f"chapter: {self.chapter}",
            f"helper_grade: {self.helper_grade.value}",
            f"helper_level: {self.helper_level.value}",
            f"duration: {self.duration}",
        ]
        if self.teacher_kind is not None:
            lines.append(f"teacher_kind: {self.teacher_kind.value}")
        if self.description:
            lines.append(f"description: {self.description}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> HelpRequest:
        f = dict(line.split(": ", 1) for line in text.splitlines() if line)
        kind = f.get("teacher_kind")
        return cls(UserId.parse(f["requester"]), Level(f["level"]), int(f["study_year"]), f["subject"],
                   f["chapter"], Role(f["helper_grade"]), HelperLevel(f["helper_level"]), int(f["duration"]),
                   TeacherKind(kind) if kind else None, f.get("description"))


@dataclass(frozen=True)
class HelperPreferences:
    accepting: bool
    levels: frozenset[Level]
    subjects: frozenset[str]
    max_duration: int
    max_concurrent: int = 1
    kind: Optional[TeacherKind] = None

    def __post_init__(self):
        if self.max_concurrent < 1:
            raise MatchingError("max_concurrent must be at least 1")


def match_request_to_prefs(req: HelpRequest, prefs: HelperPreferences, helper_role: Optional[Role] = None) -> bool:
    """Whether a helper with ``prefs`` should be shown ``req``.

    Subjects compare case-insensitively. When a teacher is requested, the
    helper's kind (volunteer or freelancer) must match the requested one;
    ``helper_role``, when known, must match the requested grade.
    """
    if not prefs.accepting:
        return False
    if req.subject.casefold() not in {s.casefold() for s in prefs.subjects}:
        return False
    if req.level not in prefs.levels or req.duration > prefs.max_duration:
        return False
    if helper_role is not None and helper_role is not req.helper_grade:
        return False
    if req.teacher_kind is not None and prefs.kind is not None and prefs.kind is not req.teacher_kind:
        return False
    return True


@dataclass(frozen=True)
class CourseAnnouncement:
    title: str
    level: Level
    study_year: int
    subject: str
    unit: str
    max_learners: int
    learner_level: HelperLevel
    datetime: str
    duration: int

    def __post_init__(self):
        if not 2 <= self.max_learners <= 10:
            raise MatchingError("a course takes from 2 to 10 learners")
        if self.duration <= 0:
            raise MatchingError("duration must be positive")


@dataclass(frozen=True)
class Offer:
    offerer: UserId
    request_id: str
    proposal: str
    arrival: int = 0

    def to_text(self) -> str:
        return f"offerer: {self.offerer}\nrequest: {self.request_id}\nproposal: {self.proposal}\n"

    @classmethod
    def from_text(cls, text: str, arrival: int = 0) -> Offer:
        f = dict(line.split(": ", 1) for line in text.splitlines() if line)
        return cls(UserId.parse(f["offerer"]), f["request"], f["proposal"], arrival)


# evaluations


class HelpRating(enum.Enum):
    """How the helpee rates the help received."""

    TRES_UTILE = "Très utile"
    UTILE = "Utile"
    PAS_DU_TOUT_UTILE = "Pas du tout utile"


class HelpeeRating(enum.Enum):
    """How the helper rates the helpee."""

    EXCELLENT = "Excellent"
    BON = "Bon"
    FAIBLE = "Faible"


RATING_SCORE = {
    HelpRating.TRES_UTILE: 2,
    HelpRating.UTILE: 1,
    HelpRating.PAS_DU_TOUT_UTILE: -1,
    HelpeeRating.EXCELLENT: 2,
    HelpeeRating.BON: 1,
    HelpeeRating.FAIBLE: -1,
}


@dataclass(frozen=True)
class EvaluationPair:
    helpee_rating: HelpRating
    helpee_again: bool
    helper_rating: HelpeeRating
    helper_again: bool


@dataclass(frozen=True)
class Evaluation:
    session_id: str
    counterpart: UserId
    rating: object
    again: bool


@dataclass
class EvaluationStore:
    """One peer's evaluations: those it gave and those it received."""

    given: dict[str, Evaluation] = field(default_factory=dict)
    received: dict[str, Evaluation] = field(default_factory=dict)

    def record_given(self, ev: Evaluation) -> None:
        if ev.session_id in self.given:
            raise MatchingError(f"session {ev.session_id} already evaluated")
        self.given[ev.session_id] = ev

    def record_received(self, ev: Evaluation) -> None:
        if ev.session_id in self.received:
            raise MatchingError(f"session {ev.session_id} already has an evaluation")
        self.received[ev.session_id] = ev

    def score_of(self, user: UserId) -> Optional[Fraction]:
        """Mean score this peer gave ``user`` over past sessions, or None."""
        scores = [RATING_SCORE[ev.rating] for ev in self.given.values() if ev.counterpart == user]
        if not scores:
            return None
        return Fraction(sum(scores), len(scores))


def record_session_evaluations(session_id: str, helpee: UserId, helper: UserId, pair: EvaluationPair,
                               helpee_store: EvaluationStore, helper_store: EvaluationStore) -> None:
    """Both sides keep their own rating and the one the other side gave."""
    if session_id in helpee_store.given or session_id in helper_store.given:
        raise MatchingError(f"session {session_id} already evaluated")
    helpee_store.record_given(Evaluation(session_id, helper, pair.helpee_rating, pair.helpee_again))
    helper_store.record_given(Evaluation(session_id, helpee, pair.helper_rating, pair.helper_again))
    helper_store.record_received(Evaluation(session_id, helpee, pair.helpee_rating, pair.helpee_again))
    helpee_store.record_received(Evaluation(session_id, helper, pair.helper_rating, pair.helper_again))


def filter_and_rank_offers(offers: Iterable[Offer], excluded: Iterable[UserId], store: EvaluationStore) -> list[Offer]:
    """Drop excluded offerers and sort the rest by past evaluations.

    Well-rated offerers come first, offerers never rated come next (score 0),
    badly rated ones last. Ties keep arrival order.
    """
    excluded = set(excluded)
    kept = [o for o in sorted(offers, key=lambda o: o.arrival) if o.offerer not in excluded]

    def score(o: Offer) -> Fraction:
        s = store.score_of(o.offerer)
        return Fraction(0) if s is None else s

    return sorted(kept, key=lambda o: -score(o))


# reputation


class ReportCategory(enum.Enum):
    PREDATEUR = "Prédateur"
    INTIMIDATEUR = "Intimidateur"


class DecisionKind(enum.Enum):
    AUCUNE = "Aucune"
    SUSPENDU = "Suspendu"
    FAUSSES_DECLARATIONS = "Fausses déclarations"


REVIEW_THRESHOLD = 3
SUSPEND_THRESHOLD = 5


@dataclass(frozen=True)
class Report:
    reporter: UserId
    category: ReportCategory
    incident: str


@dataclass(frozen=True)
class SpamBlock:
    """A block given without an abuse report."""

    blocker: UserId
    incident: str = "block"


@dataclass(frozen=True)
class AssistantVisit:
    asker: UserId


@dataclass(frozen=True)
class AdminReview:
    false_declarations: int = 0
    suspend: bool = False


ReputationEvent = Union[Report, SpamBlock, AssistantVisit, AdminReview]


@dataclass(frozen=True)
class ReputationRecord:
    user: UserId
    predator_reports: int = 0
    bully_reports: int = 0
    spam_blocks: int = 0
    incidents: frozenset[tuple[UserId, str]] = frozenset()
    assistant_visits: int = 0
    false_declarations: int = 0
    reviewed: bool = False
    review_requested: bool = False
    suspended: bool = False
    decision: DecisionKind = DecisionKind.AUCUNE

    @property
    def distinct_reporters(self) -> frozenset[UserId]:
        return frozenset(r for r, _ in self.incidents)

    @property
    def total_reports(self) -> int:
        return self.predator_reports + self.bully_reports + self.spam_blocks - self.false_declarations

    @property
    def decision_label(self) -> str:
        if self.decision is DecisionKind.FAUSSES_DECLARATIONS:
            return f"{self.false_declarations} Fausses déclarations"
        return self.decision.value

    def table_row(self) -> list[str]:
        return [str(self.user), str(self.predator_reports), str(self.bully_reports), str(self.spam_blocks),
                str(self.total_reports), str(self.assistant_visits), "Vrai" if self.reviewed else "Faux",
                self.decision_label]


TABLE_COLUMNS = ("Id_utilisateur", "prédateur", "Intimidateur", "Spam (Bloqué sans être signalé)",
                 "Total des signalements", "Nombre des visites par « Privacy Assistant »", "Révisé", "Décision")


def export_reputation_table(records: Iterable[ReputationRecord]) -> str:
    rows = ["\t".join(TABLE_COLUMNS)]
    rows.extend("\t".join(r.table_row()) for r in sorted(records, key=lambda r: r.user))
    return "\n".join(rows) + "\n"


def _over(record: ReputationRecord, threshold: int) -> bool:
    return record.total_reports > threshold and len(record.distinct_reporters) >= threshold


def update_reputation(record: ReputationRecord, event: ReputationEvent) -> tuple[ReputationRecord, Optional[str]]:
    """Apply one event; returns the new record and the action it triggered.

    Actions: ``"review-requested"``, ``"suspended"`` (temporary, before any
    review), ``"review-done"`` or ``None``. A repeated (reporter, incident)
    pair is ignored.
    """
    if isinstance(event, AssistantVisit):
        return replace(record, assistant_visits=record.assistant_visits + 1), None
    if isinstance(event, AdminReview):
        if event.false_declarations < 0:
            raise ValueError("false declarations cannot be negative")
        raw = record.predator_reports + record.bully_reports + record.spam_blocks
        false_decl = min(raw, record.false_declarations + event.false_declarations)
        if event.suspend:
            decision = DecisionKind.SUSPENDU
        elif false_decl:
            decision = DecisionKind.FAUSSES_DECLARATIONS
        else:
            decision = DecisionKind.AUCUNE
        return replace(record, reviewed=True, review_requested=False, false_declarations=false_decl,
                       suspended=event.suspend, decision=decision), "review-done"

    if isinstance(event, Report):
        who, incident = event.reporter, event.incident
    elif isinstance(event, SpamBlock):
        who, incident = event.blocker, event.incident
    else:
        raise TypeError(f"unknown reputation event {event!r}")
    if who == record.user:
        raise ValueError("a user cannot report themselves")
    if (who, incident) in record.incidents:
        return record, None
    incidents = record.incidents | {(who, incident)}
    if isinstance(event, SpamBlock):
        new = replace(record, spam_blocks=record.spam_blocks + 1, incidents=incidents)
    elif event.category is ReportCategory.PREDATEUR:
        new = replace(record, predator_reports=record.predator_reports + 1, incidents=incidents)
    else:
        new = replace(record, bully_reports=record.bully_reports + 1, incidents=incidents)

    if not new.reviewed and not new.suspended and _over(new, SUSPEND_THRESHOLD):
        return replace(new, suspended=True, review_requested=True, decision=DecisionKind.SUSPENDU), "suspended"
    if not new.review_requested and _over(new, REVIEW_THRESHOLD):
        return replace(new, review_requested=True), "review-requested"
    return new, None


# the Privacy Assistant's warning dialogue

FIRST_PROMPT = "Il se peut que cet utilisateur est dangereux, voulez-vous le bloquer ?"
SECOND_PROMPT = "Vous n'êtes pas la première victime de cet utilisateur, êtes-vous sûr de votre décision ?"


@dataclass(frozen=True)
class WarnOutcome:
    prompts: tuple[str, ...]
    block: bool


def assistant_warn(prior_reports: int, answers: Sequence[bool]) -> WarnOutcome:
    """Run the warning dialogue.

    ``answers`` are the user's replies in order (True for "Oui"). Declining
    to block someone already reported elsewhere asks for confirmation;
    answering "Non" to that confirmation blocks after all.
    """
    if not answers:
        raise ValueError("the dialogue needs at least one answer")
    if answers[0]:
        return WarnOutcome((FIRST_PROMPT,), True)
    if prior_reports <= 0:
        return WarnOutcome((FIRST_PROMPT,), False)
    if len(answers) < 2:
        raise ValueError("the second prompt needs an answer")
    return WarnOutcome((FIRST_PROMPT, SECOND_PROMPT), not answers[1])
