"""Scenario files: parse, run against a :class:`SimWorld`, report.

One command per line, ``<tick> <command> <args...>``, shell-style quoting,
``#`` comments. An optional ``seed N`` line sets the world seed. Ticks never
decrease. Example::

    seed 7
    0 register alice pw1234 apprenant
    0 connect alice
    2 publish alice demande-aide maths lycee class:camarades dist:non "Exercice 3 ?" as post1
    4 assert renders bobby post1

Content is referenced by label (``as <label>`` on publish/reshare) or as
``<user>:<content id>``; help requests by their label.
"""

from __future__ import annotations

import hashlib
import random
import shlex
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from . import matching as mt
from .metadata import Distribution, Level, PublicationType, Role, UserId
from .simnet import SimConfig, SimError, SimWorld


class ScenarioParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


TYPES = {
    "demande-aide": PublicationType.DEMANDE_AIDE,
    "information": PublicationType.INFORMATION,
    "document": PublicationType.DOCUMENT,
    "statut": PublicationType.STATUT,
}
LEVELS = {"primaire": Level.PRIMAIRE, "cem": Level.CEM, "lycee": Level.LYCEE, "lycée": Level.LYCEE}
ROLES = {"apprenant": Role.APPRENANT, "enseignant": Role.ENSEIGNANT}
KINDS = {"benevole": mt.TeacherKind.BENEVOLE, "bénévole": mt.TeacherKind.BENEVOLE,
         "freelancer": mt.TeacherKind.FREELANCER}
RATINGS = {
    "tres-utile": mt.HelpRating.TRES_UTILE,
    "utile": mt.HelpRating.UTILE,
    "pas-du-tout-utile": mt.HelpRating.PAS_DU_TOUT_UTILE,
    "excellent": mt.HelpeeRating.EXCELLENT,
    "bon": mt.HelpeeRating.BON,
    "faible": mt.HelpeeRating.FAIBLE,
}
CATEGORIES = {"predateur": mt.ReportCategory.PREDATEUR, "prédateur": mt.ReportCategory.PREDATEUR,
              "intimidateur": mt.ReportCategory.INTIMIDATEUR}
YES_NO = {"oui": True, "yes": True, "non": False, "no": False}

# command -> (min args, max args); None means unbounded
ARITY = {
    "register": (3, 3),
    "approve-teacher": (1, 1),
    "connect": (1, 1),
    "disconnect": (1, 1),
    "befriend": (2, 2),
    "unfriend": (2, 2),
    "assign-class": (3, 3),
    "remove-class": (3, 3),
    "publish": (7, 7),
    "view": (2, 2),
    "reshare": (3, 3),
    "send-message": (3, 3),
    "delete-content": (2, 2),
    "delete-account": (1, 1),
    "self-test": (3, 3),
    "request-help": (5, 6),
    "set-prefs": (1, None),
    "offer": (3, 3),
    "accept-offer": (2, 3),
    "end-session": (2, 2),
    "evaluate": (4, 4),
    "report-abuse": (3, 4),
    "block": (2, 2),
    "admin-review": (1, 3),
    "warn": (3, 3),
    "assert": (1, None),
}
LABELLED = {"publish", "reshare", "request-help"}

ASSERT_ARITY = {
    "renders": (2, 2),
    "hidden": (2, 2),
    "replica-count": (2, 2),
    "holds": (3, 3),
    "reputation-decision": (2, None),
    "reputation-total": (2, 2),
    "offer-list": (3, 3),
    "confirmations": (2, 2),
    "escrow": (1, 1),
    "connected": (2, 2),
    "keyring": (4, 4),
    "inbox": (2, 2),
    "prompts": (3, 3),
    "escalated": (3, 3),
    "errors": (1, 1),
}


@dataclass(frozen=True)
class Command:
    line: int
    tick: int
    name: str
    args: tuple[str, ...]
    label: Optional[str] = None
    expect_fail: bool = False

    def text(self) -> str:
        prefix = "expect-fail " if self.expect_fail else ""
        return f"{self.tick} {prefix}{self.name} " + " ".join(shlex.quote(a) for a in self.args)


@dataclass
class Scenario:
    seed: int = 0
    commands: list[Command] = field(default_factory=list)


def _check_arity(line: int, name: str, args: list[str], table: dict) -> None:
    lo, hi = table[name]
    if len(args) < lo or (hi is not None and len(args) > hi):
        expected = f"{lo}" if lo == hi else f"{lo}..{hi if hi is not None else ''}"
        raise ScenarioParseError(line, f"{name} takes {expected} arguments, got {len(args)}")


def _check_choice(line: int, value: str, table: dict, what: str) -> None:
    if value.casefold() not in table:
        raise ScenarioParseError(line, f"unknown {what} {value!r}")


def _validate(line: int, name: str, args: list[str]) -> None:
    _check_arity(line, name, args, ARITY)
    if name == "register":
        _check_choice(line, args[2], ROLES, "role")
    elif name == "publish":
        _check_choice(line, args[1], TYPES, "publication type")
        _check_choice(line, args[3], LEVELS, "level")
        _check_audience(line, args[4])
        if not args[5].startswith("dist:") or args[5] == "dist:":
            raise ScenarioParseError(line, f"expected dist:non, dist:oui or dist:<users>, got {args[5]!r}")
    elif name == "reshare":
        _check_audience(line, args[2])
    elif name == "self-test":
        try:
            score = Fraction(args[2])
        except (ValueError, ZeroDivisionError):
            raise ScenarioParseError(line, f"bad score {args[2]!r}") from None
        if not 0 <= score <= 1:
            raise ScenarioParseError(line, f"score {args[2]} outside [0, 1]")
    elif name == "request-help":
        _check_choice(line, args[2], LEVELS, "level")
        if not args[3].isdigit():
            raise ScenarioParseError(line, f"bad duration {args[3]!r}")
        _check_choice(line, args[4], ROLES, "helper grade")
        if len(args) == 6:
            _check_choice(line, args[5], KINDS, "teacher kind")
    elif name == "evaluate":
        _check_choice(line, args[2], RATINGS, "rating")
        _check_choice(line, args[3], YES_NO, "answer")
    elif name == "report-abuse":
        _check_choice(line, args[2], CATEGORIES, "category")
    elif name == "warn":
        for a in args[2].split(","):
            _check_choice(line, a, YES_NO, "answer")
    elif name == "admin-review":
        for a in args[1:]:
            if a != "suspend" and not (a.startswith("false=") and a[6:].isdigit()):
                raise ScenarioParseError(line, f"bad admin-review option {a!r}")
    elif name == "set-prefs":
        for a in args[1:]:
            key = a.split("=", 1)[0]
            if key not in ("subjects", "levels", "max", "concurrent", "kind", "off", "auto"):
                raise ScenarioParseError(line, f"bad set-prefs option {a!r}")
    elif name == "assert":
        kind = args[0]
        if kind not in ASSERT_ARITY:
            raise ScenarioParseError(line, f"unknown assertion {kind!r}")
        _check_arity(line, kind, args[1:], ASSERT_ARITY)


def _check_audience(line: int, text: str) -> None:
    if text in ("me", "public"):
        return
    for prefix in ("class:", "persons:"):
        if text.startswith(prefix) and len(text) > len(prefix):
            return
    raise ScenarioParseError(line, f"bad audience {text!r}")


def parse_scenario(text: str) -> Scenario:
    scenario = Scenario()
    last_tick = 0
    seen_command = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        try:
            parts = shlex.split(raw, comments=True)
        except ValueError as exc:
            raise ScenarioParseError(lineno, str(exc)) from None
        if not parts:
            continue
        if parts[0] == "seed":
            if seen_command or len(parts) != 2 or not parts[1].isdigit():
                raise ScenarioParseError(lineno, "seed must come first as 'seed <integer>'")
            scenario.seed = int(parts[1])
            continue
        if not parts[0].isdigit():
            raise ScenarioParseError(lineno, f"expected a tick, got {parts[0]!r}")
        tick = int(parts[0])
        if tick < last_tick:
            raise ScenarioParseError(lineno, f"tick {tick} comes after tick {last_tick}")
        last_tick = tick
        seen_command = True
        rest = parts[1:]
        expect_fail = False
        if rest and rest[0] == "expect-fail":
            expect_fail = True
            rest = rest[1:]
        if not rest:
            raise ScenarioParseError(lineno, "missing command")
        name, args = rest[0], rest[1:]
        if name not in ARITY:
            raise ScenarioParseError(lineno, f"unknown command {name!r}")
        label = None
        if name in LABELLED and len(args) >= 2 and args[-2] == "as":
            label = args[-1]
            args = args[:-2]
        _validate(lineno, name, args)
        scenario.commands.append(Command(lineno, tick, name, tuple(args), label, expect_fail))
    return scenario


# running


@dataclass
class ReportEntry:
    line: int
    description: str
    passed: bool
    detail: str = ""


@dataclass
class Report:
    entries: list[ReportEntry]
    violations: list[str]
    errors: list[str]
    world_digest: str
    trace_digest: str
    world: SimWorld

    @property
    def ok(self) -> bool:
        return all(e.passed for e in self.entries) and not self.violations

    def text(self) -> str:
        lines = []
        for e in self.entries:
            status = "PASS" if e.passed else "FAIL"
            lines.append(f"{status} line {e.line}: {e.description}" + (f" ({e.detail})" if e.detail else ""))
        for v in self.violations:
            lines.append(f"VIOLATION {v}")
        lines.append(f"asserts {sum(e.passed for e in self.entries)}/{len(self.entries)} passed, "
                     f"{len(self.violations)} violations")
        lines.append(f"world {self.world_digest}")
        lines.append(f"trace {self.trace_digest}")
        return "\n".join(lines) + "\n"


class Runner:
    """Binds scenario names and labels to a world and executes commands."""

    def __init__(self, world: SimWorld, strict: bool = True):
        self.world = world
        self.strict = strict
        self.labels: dict[str, tuple[UserId, int]] = {}
        self.requests: dict[str, str] = {}
        self.entries: list[ReportEntry] = []

    def content(self, ref: str) -> tuple[UserId, int]:
        if ref in self.labels:
            return self.labels[ref]
        owner, sep, cid = ref.rpartition(":")
        if not sep or not cid.isdigit():
            raise SimError(f"unknown content {ref!r}")
        return self.world.peer(owner).uid, int(cid)

    def request(self, ref: str) -> str:
        if ref not in self.requests:
            raise SimError(f"unknown request {ref!r}")
        return self.requests[ref]

    def users(self, text: str) -> frozenset[UserId]:
        return frozenset(self.world.peer(n).uid for n in text.split(",") if n)

    def audience(self, owner: str, text: str):
        if text in ("me", "public"):
            return text
        kind, _, rest = text.partition(":")
        if kind == "class":
            refs = tuple(rest.split("+"))
            return refs[0] if len(refs) == 1 else refs
        return set(self.users(rest))

    def execute(self, cmd: Command) -> None:
        try:
            self._execute(cmd)
        except (SimError, ValueError) as exc:
            if cmd.expect_fail:
                self.entries.append(ReportEntry(cmd.line, f"expect-fail {cmd.name}", True, str(exc)))
                return
            self.world.error("scenario", f"line {cmd.line} {cmd.name}: {exc}")
            if self.strict:
                self.entries.append(ReportEntry(cmd.line, cmd.name, False, str(exc)))
            return
        if cmd.expect_fail:
            self.entries.append(ReportEntry(cmd.line, f"expect-fail {cmd.name}", False, "command succeeded"))

    def _execute(self, cmd: Command) -> None:
        w, a = self.world, cmd.args
        name = cmd.name
        if name == "register":
            w.register(a[0], a[1], ROLES[a[2].casefold()])
        elif name == "approve-teacher":
            w.approve_teacher(a[0])
        elif name == "connect":
            w.connect(a[0])
        elif name == "disconnect":
            w.disconnect(a[0])
        elif name == "befriend":
            w.befriend(a[0], a[1])
        elif name == "unfriend":
            w.unfriend(a[0], a[1])
        elif name == "assign-class":
            w.assign_class(a[0], a[1], a[2])
        elif name == "remove-class":
            w.remove_class(a[0], a[1], a[2])
        elif name == "publish":
            dist_text = a[5][5:]
            if dist_text in ("non", "oui"):
                dist = Distribution.NONE if dist_text == "non" else Distribution.ALLOWED
            else:
                dist = self.users(dist_text)
            key = w.publish(a[0], TYPES[a[1].casefold()], a[2], LEVELS[a[3].casefold()],
                            self.audience(a[0], a[4]), a[6].encode(), dist)
            if cmd.label:
                self.labels[cmd.label] = key
        elif name == "view":
            w.view(a[0], self.content(a[1]))
        elif name == "reshare":
            key = w.reshare(a[0], self.content(a[1]), self.audience(a[0], a[2]))
            if cmd.label:
                self.labels[cmd.label] = key
        elif name == "send-message":
            w.send_message(a[0], a[1], a[2].encode())
        elif name == "delete-content":
            owner, cid = self.content(a[1])
            if owner != w.peer(a[0]).uid:
                raise SimError(f"{a[0]} does not own {a[1]}")
            w.delete_content(a[0], cid)
        elif name == "delete-account":
            w.delete_account(a[0])
        elif name == "self-test":
            w.self_test(a[0], a[1], Fraction(a[2]))
        elif name == "set-prefs":
            self._set_prefs(a)
        elif name == "request-help":
            peer = w.peer(a[0])
            kind = KINDS[a[5].casefold()] if len(a) == 6 else None
            req = mt.HelpRequest(peer.uid, LEVELS[a[2].casefold()], 1, a[1], "-", ROLES[a[4].casefold()],
                                 mt.HelperLevel.ELEVE, int(a[3]), kind)
            rid = w.request_help(a[0], req)
            if cmd.label:
                self.requests[cmd.label] = rid
        elif name == "offer":
            w.offer(a[0], self.request(a[1]), a[2])
        elif name == "accept-offer":
            w.accept_offer(a[0], self.request(a[1]), a[2] if len(a) == 3 else None)
        elif name == "end-session":
            w.end_session(a[0], self.request(a[1]))
        elif name == "evaluate":
            w.evaluate(a[0], self.request(a[1]), RATINGS[a[2].casefold()], YES_NO[a[3].casefold()])
        elif name == "report-abuse":
            content = self.content(a[3]) if len(a) == 4 else None
            w.report_abuse(a[0], a[1], CATEGORIES[a[2].casefold()], content)
        elif name == "block":
            w.block(a[0], a[1])
        elif name == "admin-review":
            false_decl = sum(int(x[6:]) for x in a[1:] if x.startswith("false="))
            w.admin_review(a[0], false_decl, "suspend" in a[1:])
        elif name == "warn":
            w.warn(a[0], a[1], [YES_NO[x.casefold()] for x in a[2].split(",")])
        elif name == "assert":
            self._assert(cmd)

    def _set_prefs(self, a: tuple[str, ...]) -> None:
        opts = dict(x.split("=", 1) if "=" in x else (x, "") for x in a[1:])
        prefs = mt.HelperPreferences(
            accepting="off" not in opts,
            levels=frozenset(LEVELS[x.casefold()] for x in opts.get("levels", "primaire,cem,lycee").split(",")),
            subjects=frozenset(s for s in opts.get("subjects", "").split(",") if s),
            max_duration=int(opts.get("max", "60")),
            max_concurrent=int(opts.get("concurrent", "1")),
            kind=KINDS[opts["kind"].casefold()] if opts.get("kind") else None,
        )
        self.world.set_prefs(a[0], prefs, auto_offer="auto" in opts)

    def _assert(self, cmd: Command) -> None:
        w = self.world
        kind, a = cmd.args[0], cmd.args[1:]
        desc = "assert " + " ".join(cmd.args)
        if kind in ("renders", "hidden"):
            shown = w.can_render(a[0], self.content(a[1]))
            actual, expected = shown, kind == "renders"
        elif kind == "replica-count":
            actual, expected = w.replica_count(self.content(a[0])), int(a[1])
        elif kind == "holds":
            rec = w.peer(a[0]).replicas.get(self.content(a[1]))
            actual, expected = (rec.form.value if rec else "none"), a[2]
        elif kind == "reputation-decision":
            actual, expected = w.server.reputation(w.peer(a[0]).uid).decision_label, " ".join(a[1:])
        elif kind == "reputation-total":
            actual, expected = w.server.reputation(w.peer(a[0]).uid).total_reports, int(a[1])
        elif kind == "offer-list":
            ranked = w.ranked_offers(a[0], self.request(a[1]))
            actual = [w.peer(o.offerer).uid.pseudonym for o in ranked]
            expected = [] if a[2] == "-" else a[2].split(",")
        elif kind == "confirmations":
            owner, cid = self.content(a[0])
            actual, expected = len(w.confirmations_for(owner, cid)), int(a[1])
        elif kind == "escrow":
            actual, expected = w.server.escrow_count(), int(a[0])
        elif kind == "connected":
            actual, expected = w.peer(a[0]).connected, YES_NO[a[1]]
        elif kind == "keyring":
            peer, owner = w.peer(a[0]), w.peer(a[1])
            cls = owner.profile.find_class(a[2])
            actual, expected = peer.profile.holds_class_key(owner.uid, cls.class_id), YES_NO[a[3]]
        elif kind == "inbox":
            actual, expected = len(w.peer(a[0]).inbox), int(a[1])
        elif kind == "prompts":
            suspect = w.peer(a[1]).uid
            outcomes = [o for s, o in w.peer(a[0]).warnings if s == suspect]
            actual, expected = (len(outcomes[-1].prompts) if outcomes else 0), int(a[2])
        elif kind == "escalated":
            state = w.peer(a[0]).help_states[self.request(a[1])]
            actual, expected = state.escalated, YES_NO[a[2]]
        elif kind == "errors":
            actual, expected = len(w.errors), int(a[0])
        else:
            raise SimError(f"unknown assertion {kind}")
        passed = actual == expected
        self.entries.append(ReportEntry(cmd.line, desc, passed, "" if passed else f"got {actual!r}"))


def build_world(scenario: Scenario, seed: Optional[int] = None, config: Optional[SimConfig] = None,
                strict: bool = True) -> tuple[SimWorld, Runner]:
    cfg = config or SimConfig()
    cfg.seed = scenario.seed if seed is None else seed
    world = SimWorld(cfg)
    runner = Runner(world, strict)
    for cmd in scenario.commands:
        phase = 2 if cmd.name == "assert" else 1
        world.at(cmd.tick, lambda c=cmd: runner.execute(c), phase)
    return world, runner


def run_scenario(scenario: Scenario, seed: Optional[int] = None, config: Optional[SimConfig] = None,
                 strict: bool = True, settle: int = 50) -> Report:
    """Run every command, then ``settle`` more ticks so in-flight messages land."""
    world, runner = build_world(scenario, seed, config, strict)
    last = scenario.commands[-1].tick if scenario.commands else 0
    world.run(until=last + settle)
    world.scan(full=True)
    trace = world.trace_text().encode()
    return Report(runner.entries, list(world.violations), list(world.errors),
                  hashlib.sha256(world.dump().encode()).hexdigest(), hashlib.sha256(trace).hexdigest(), world)


# randomized scenarios


def random_scenario(seed: int, peers: int = 10, events: int = 500) -> Scenario:
    """A random but well-formed scenario over ``peers`` learners.

    Commands may fail at run time (a disconnected publisher, say); run these
    with ``strict=False``.
    """
    rng = random.Random(seed)
    names = [f"user{i:02d}" for i in range(peers)]
    classes = ["amis", "camarades", "famille", "enseignants", "CC4"]
    cmds: list[Command] = []
    line = 0

    def add(tick: int, name: str, *args: str, label: Optional[str] = None) -> None:
        nonlocal line
        line += 1
        cmds.append(Command(line, tick, name, tuple(args), label))

    for n in names:
        add(0, "register", n, f"pw-{n}", "apprenant")
        if rng.random() < 0.8:
            add(0, "connect", n)
    tick = 1
    labels: list[str] = []
    owners: dict[str, str] = {}
    for i in range(events):
        if rng.random() < 0.4:
            tick += 1
        a, b = rng.sample(names, 2)
        r = rng.random()
        if r < 0.12:
            add(tick, "connect", a)
        elif r < 0.17:
            add(tick, "disconnect", a)
        elif r < 0.30:
            add(tick, "befriend", a, b)
        elif r < 0.42:
            add(tick, "assign-class", a, b, rng.choice(classes))
        elif r < 0.45:
            add(tick, "remove-class", a, b, rng.choice(classes))
        elif r < 0.62:
            choice = rng.random()
            if choice < 0.45:
                aud = "class:" + rng.choice(classes)
            elif choice < 0.7:
                aud = "persons:" + ",".join(rng.sample(names, rng.randint(1, 3)))
            elif choice < 0.85:
                aud = "public"
            else:
                aud = "me"
            dist = rng.choice(["dist:non", "dist:oui", "dist:" + ",".join(rng.sample(names, 2))])
            label = f"p{i}"
            body = f"corps-{seed}-{i}-{rng.getrandbits(32):08x}"
            add(tick, "publish", a, rng.choice(list(TYPES)), "maths", "lycee", aud, dist, body, label=label)
            labels.append(label)
            owners[label] = a
        elif r < 0.74 and labels:
            add(tick, "view", a, rng.choice(labels))
        elif r < 0.80 and labels:
            choice = rng.random()
            aud = "class:" + rng.choice(classes) if choice < 0.6 else (
                "persons:" + ",".join(rng.sample(names, 2)) if choice < 0.85 else "public")
            add(tick, "reshare", a, rng.choice(labels), aud, label=f"r{i}")
            labels.append(f"r{i}")
            owners[f"r{i}"] = a
        elif r < 0.84:
            add(tick, "send-message", a, b, f"message-{seed}-{i}-{rng.getrandbits(32):08x}")
        elif r < 0.89 and labels:
            lab = rng.choice(labels)
            add(tick, "delete-content", owners[lab], lab)
        elif r < 0.92:
            add(tick, "self-test", a, f"qcm-{seed}-{i}", f"{rng.randint(0, 4)}/4")
        elif r < 0.95:
            add(tick, "block", a, b)
        elif r < 0.97:
            add(tick, "report-abuse", a, b, rng.choice(["predateur", "intimidateur"]))
        else:
            add(tick, "unfriend", a, b)
    return Scenario(seed, cmds)


def scenario_text(scenario: Scenario) -> str:
    lines = [f"seed {scenario.seed}"]
    for c in scenario.commands:
        text = c.text()
        if c.label:
            text += f" as {c.label}"
        lines.append(text)
    return "\n".join(lines) + "\n"
