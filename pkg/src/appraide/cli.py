"""Command-line scenario runner.

    appraide run <file> [--seed N] [--trace out.log] [--dump-world out.txt]
    appraide fixtures

Exit status: 0 when every assertion passes and the scanner found nothing,
1 on a failed assertion or violation, 2 when the scenario does not parse.
"""

from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from .scenario import ScenarioParseError, parse_scenario, run_scenario

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_PARSE = 2


def bundled_fixtures() -> list[str]:
    root = resources.files("appraide") / "fixtures"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".txt") and not p.name.startswith("toy_"))


def fixture_text(name: str) -> str:
    return (resources.files("appraide") / "fixtures" / name).read_text(encoding="utf-8")


def _load(path: str) -> str:
    p = Path(path)
    if p.exists():
        return p.read_text(encoding="utf-8")
    for name in (path, path + ".txt"):
        if name in bundled_fixtures():
            return fixture_text(name)
    raise FileNotFoundError(path)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="appraide", description="Run privacy-protocol simulation scenarios.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario file (or a bundled fixture name)")
    run.add_argument("file")
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.add_argument("--trace", metavar="PATH", help="write the event trace here")
    run.add_argument("--dump-world", metavar="PATH", help="write the final world snapshot here")
    sub.add_parser("fixtures", help="list bundled scenarios")
    args = parser.parse_args(argv)

    if args.command == "fixtures":
        for name in bundled_fixtures():
            print(name)
        return EXIT_OK

    try:
        text = _load(args.file)
    except (FileNotFoundError, UnicodeDecodeError) as exc:
        print(f"error: cannot read {exc}", file=sys.stderr)
        return EXIT_PARSE
    try:
        scenario = parse_scenario(text)
    except ScenarioParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    report = run_scenario(scenario, seed=args.seed)
    if args.trace:
        Path(args.trace).write_text(report.world.trace_text(), encoding="utf-8")
    if args.dump_world:
        Path(args.dump_world).write_text(report.world.dump(), encoding="utf-8")
    sys.stdout.write(report.text())
    return EXIT_OK if report.ok else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
