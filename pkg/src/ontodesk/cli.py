"""Command-line entry points.

Exit codes: 0 success/quiescence, 2 parse error, 3 validation error,
4 tick cap exceeded.  The output directory for ``run`` defaults to
``./out`` and can be overridden by ``-o`` or the ONTODESK_OUT env var.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import dsl, engine
from .config import load_scenario
from .errors import (
    OntodeskError,
    ParseError,
    TickCapError,
    UnknownEntityError,
    ValidationError,
)
from .kb import Ind, format_literal, parse_pattern, query
from .kbfile import dump_ontology, load_ontology
from .notify import Outbox
from .runtime import run_scenario

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_TICK_CAP = 4


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="ontodesk",
        description="Ontology-driven decision support at desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="run a scenario to quiescence")
    run_parser.add_argument("scenario", help="scenario config (yaml)")
    run_parser.add_argument(
        "-o", "--out", default=None,
        help="output directory (default ./out, env ONTODESK_OUT)",
    )

    rules_parser = sub.add_parser("rules", help="rule tooling")
    rules_sub = rules_parser.add_subparsers(dest="rules_command", required=True)
    check_parser = rules_sub.add_parser(
        "check", help="parse, validate and safety-check rule files"
    )
    check_parser.add_argument("--schema", required=True, help="kb schema file")
    check_parser.add_argument(
        "--template", action="append", default=[], help="template file (.brt)"
    )
    check_parser.add_argument(
        "--rule", action="append", default=[], help="rule file (.brl)"
    )

    query_parser = sub.add_parser("query", help="pattern query over a kb file")
    query_parser.add_argument("kb", help="kb file")
    query_parser.add_argument(
        "pattern", help='e.g. "Phone(?x)" or "hasValue(?f, ?v)"'
    )

    outbox_parser = sub.add_parser("outbox", help="outbox tooling")
    outbox_sub = outbox_parser.add_subparsers(dest="outbox_command", required=True)
    ls_parser = outbox_sub.add_parser("ls", help="list delivered records")
    ls_parser.add_argument("out_dir", help="scenario output directory")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "rules":
            return _cmd_rules_check(args)
        if args.command == "query":
            return _cmd_query(args)
        if args.command == "outbox":
            return _cmd_outbox_ls(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ValidationError, UnknownEntityError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except TickCapError as exc:
        print(f"tick cap: {exc}", file=sys.stderr)
        return EXIT_TICK_CAP
    except OntodeskError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def _cmd_run(args) -> int:
    out_dir = Path(args.out or os.environ.get("ONTODESK_OUT", "out"))
    config = load_scenario(args.scenario)
    result = run_scenario(config, out_dir)
    (out_dir / "event_log.jsonl").write_text(
        "\n".join(result.events) + "\n", encoding="utf-8"
    )
    (out_dir / "final_kb.kb").write_text(dump_ontology(result.kb), encoding="utf-8")
    deliveries = len(result.outbox.records())
    print(
        f"quiescent after {result.ticks} tick(s);"
        f" {len(result.events)} events, {deliveries} deliveries -> {out_dir}"
    )
    return EXIT_OK


def _cmd_rules_check(args) -> int:
    kb = load_ontology(Path(args.schema).read_text(encoding="utf-8"))
    templates: dict[str, dsl.Template] = {}
    clean = True
    for path in args.template:
        try:
            template = dsl.parse_template(
                Path(path).read_text(encoding="utf-8"), kb
            )
            templates[template.name] = template
            print(f"template {template.name}: ok ({path})")
        except (ParseError, ValidationError) as exc:
            print(f"template {path}: {exc}")
            clean = False
    for path in args.rule:
        text = Path(path).read_text(encoding="utf-8")
        try:
            instance = dsl.parse_rule_text(text)
        except (ParseError, ValidationError) as exc:
            print(f"rule {path}: {exc}")
            clean = False
            continue
        template = templates.get(instance.template)
        if template is None:
            print(f"rule {instance.name}: unknown template {instance.template}")
            clean = False
            continue
        problems = dsl.validate_instance(instance, template, kb)
        if problems:
            clean = False
            for problem in problems:
                print(f"rule {instance.name}: {problem}")
            continue
        rule = dsl.compile_instance(instance, kb)
        safety = engine.check_dl_safe(rule, kb)
        if safety:
            clean = False
            for problem in safety:
                print(f"rule {instance.name}: {problem}")
            continue
        print(
            f"rule {instance.name}: ok ({len(rule.body)} body atoms,"
            f" {len(rule.head)} head atoms)"
        )
    return EXIT_OK if clean else EXIT_VALIDATION


def _cmd_query(args) -> int:
    kb = load_ontology(Path(args.kb).read_text(encoding="utf-8"))
    patterns = parse_pattern(args.pattern, kb)
    bindings = query(kb, patterns)
    for binding in bindings:
        parts = []
        for var in sorted(binding):
            value = binding[var]
            text = value.id if isinstance(value, Ind) else format_literal(value)
            parts.append(f"{var}={text}")
        print(" ".join(parts))
    print(f"{len(bindings)} binding(s)")
    return EXIT_OK


def _cmd_outbox_ls(args) -> int:
    outbox = Outbox(Path(args.out_dir) / "outbox")
    records = outbox.records()
    for record in records:
        print(
            f"{record.timestamp} tick={record.tick} {record.channel:<13}"
            f" {record.user:<8} {record.rendering:<9} {record.message_id}"
            f" [{record.status}]"
        )
    print(f"{len(records)} record(s)")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
