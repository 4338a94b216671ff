"""HTTP API over one loaded scenario.

Endpoints
  GET  /schema                classes, relations, templates, builder options
  GET  /rules                 registered rules (canonical text)
  POST /rules                 validate + add rule text, re-run discovery
  GET  /findings              finding individuals with provenance/explanations
  GET  /explanations/{id}     explanation tree for a derived finding
  GET  /notifications         outbox view (optionally per user)
  POST /step                  advance one tick, returns the event delta
  GET  /events                full event log

Every mutation carries the client's revision; a stale revision is rejected
with 409 before any state changes.  One request is handled at a time.
"""

from __future__ import annotations

import argparse
import json
import tempfile
import threading
from pathlib import Path
from typing import Any

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from . import dsl, engine
from .config import load_scenario
from .errors import ParseError, TickCapError, ValidationError
from .kb import Ind, format_literal


def _obj_text(obj) -> str:
    """JSON-friendly object rendering: bare strings, canonical otherwise."""
    if isinstance(obj, Ind):
        return obj.id
    if isinstance(obj, str):
        return obj
    return format_literal(obj)
from .kbfile import dump_ontology
from .notify import SEVERITIES
from .runtime import Runtime


class Session:
    """One scenario runtime plus a revision fence for API clients."""

    def __init__(self, config_path: str | Path, out_dir: str | Path | None = None):
        self.config = load_scenario(config_path)
        if out_dir is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="ontodesk-api-")
            out_dir = self._tmp.name
        self.out_dir = Path(out_dir)
        self.runtime = Runtime(self.config, self.out_dir)
        self.revision = 0
        self.lock = threading.Lock()
        self.rule_sources: dict[str, str] = {}
        for path in self.config.rule_paths:
            instance = dsl.parse_rule_text(path.read_text(encoding="utf-8"))
            self.rule_sources[instance.name] = dsl.pretty(instance)

    def check_revision(self, revision: int) -> None:
        if revision != self.revision:
            raise HTTPException(
                status_code=409,
                detail={
                    "error": "stale revision",
                    "client": revision,
                    "current": self.revision,
                },
            )

    def step(self) -> list[dict]:
        before = len(self.runtime.events)
        if self.runtime.has_pending():
            self.runtime.tick()
            self.revision += 1
        elif not self.runtime.quiescent:
            self.runtime.quiescent = True
            self.runtime.emit("quiescent")
        return [json.loads(line) for line in self.runtime.events[before:]]

    def add_rule(self, text: str) -> tuple[list[str], list[dict]]:
        """Register a rule and immediately re-run discovery + notification.

        Returns (new finding ids, event delta)."""
        before_events = len(self.runtime.events)
        before_individuals = set(self.runtime.kb.individuals)
        rule = self.runtime.add_rule_text(text, source="<api>")
        self.rule_sources[rule.id] = dsl.pretty(dsl.parse_rule_text(text))
        kb_events = self.runtime._kda_cycle()
        self.runtime._apply_triggers(kb_events)
        # knowledge discovery may have queued notifications: flush NA now so
        # the client sees the push in the same round trip
        while self.runtime.mailboxes["NA"]:
            envelope = self.runtime.mailboxes["NA"].pop(0)
            self.runtime._handle("NA", envelope)
        self.revision += 1
        new_findings = sorted(set(self.runtime.kb.individuals) - before_individuals)
        delta = [json.loads(line) for line in self.runtime.events[before_events:]]
        return new_findings, delta


class RulePost(BaseModel):
    text: str
    revision: int


class StepPost(BaseModel):
    revision: int


def _finding_payload(session: Session, ind_id: str) -> dict[str, Any]:
    kb = session.runtime.kb
    individual = kb.individuals[ind_id]
    assertions = []
    provenances = set()
    for a in kb.assertions_of_subject(ind_id):
        assertions.append(
            {
                "relation": a.relation,
                "object": _obj_text(a.obj),
                "provenance": str(a.provenance),
            }
        )
        provenances.add(str(a.provenance))
    derived = any(p.startswith("derived(") for p in provenances)
    payload: dict[str, Any] = {
        "id": ind_id,
        "classes": list(individual.classes),
        "assertions": assertions,
        "derived": derived,
    }
    if derived:
        tree = engine.explain_individual(kb, ind_id)
        if tree is not None:
            payload["explanation"] = _tree_payload(tree)
    return payload


def _tree_payload(node: engine.ExplainNode) -> dict[str, Any]:
    assertion = node.assertion
    payload: dict[str, Any] = {
        "subject": assertion.subject,
        "relation": assertion.relation,
        "object": _obj_text(assertion.obj),
        "provenance": str(assertion.provenance),
    }
    if node.derivation is not None:
        payload["rule"] = node.derivation.rule
        payload["children"] = [_tree_payload(child) for child in node.children]
    return payload


def create_app(session: Session) -> FastAPI:
    app = FastAPI(title="ontodesk", version="0.1.0")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.get("/schema")
    def get_schema() -> dict:
        with session.lock:
            kb = session.runtime.kb
            classes = [
                {
                    "name": c.name,
                    "parents": sorted(c.parents),
                    "namespace": c.namespace,
                }
                for c in sorted(kb.classes.values(), key=lambda c: c.name)
            ]
            relations = [
                {"name": r.name, "domain": r.domain, "range": r.range}
                for r in sorted(kb.relations.values(), key=lambda r: r.name)
            ]
            templates = []
            for template in session.runtime.templates.values():
                templates.append(
                    {
                        "name": template.name,
                        "condition": [
                            {
                                "slot": s.name,
                                "roots": list(s.roots),
                                "min": s.min_count,
                                "options": dsl.list_slot_options(
                                    kb,
                                    dsl.OptionContext(
                                        "condition-class", roots=s.roots
                                    ),
                                ),
                            }
                            for s in template.condition
                        ],
                        "result": [
                            {
                                "slot": s.name,
                                "roots": list(s.roots),
                                "min": s.min_count,
                                "options": dsl.list_slot_options(
                                    kb,
                                    dsl.OptionContext("result-class", roots=s.roots),
                                ),
                            }
                            for s in template.result
                        ],
                    }
                )
            properties_by_class = {
                name: dsl.list_slot_options(
                    kb, dsl.OptionContext("property", owner_class=name)
                )
                for name in sorted(kb.classes)
            }
            object_options = {
                r.name: dsl.list_slot_options(
                    kb, dsl.OptionContext("object-class", relation=r.name)
                )
                for r in kb.relations.values()
            }
            phrases = {
                r.name: " ".join(dsl.phrase_for_relation(r.name))
                for r in kb.relations.values()
            }
            return {
                "classes": classes,
                "relations": relations,
                "templates": templates,
                "options": {
                    "properties_by_class": properties_by_class,
                    "object_options": object_options,
                    "phrases": phrases,
                    "operators": {
                        "date": dsl.list_slot_options(
                            kb, dsl.OptionContext("operator", operand="date")
                        ),
                        "decimal": dsl.list_slot_options(
                            kb, dsl.OptionContext("operator", operand="decimal")
                        ),
                        "string": dsl.list_slot_options(
                            kb, dsl.OptionContext("operator", operand="string")
                        ),
                    },
                },
                "severities": list(SEVERITIES),
                "revision": session.revision,
            }

    @app.get("/rules")
    def get_rules() -> dict:
        with session.lock:
            return {
                "rules": [
                    {"id": rule_id, "text": text}
                    for rule_id, text in sorted(session.rule_sources.items())
                ],
                "revision": session.revision,
            }

    @app.post("/rules")
    def post_rules(body: RulePost) -> dict:
        with session.lock:
            session.check_revision(body.revision)
            try:
                new_findings, delta = session.add_rule(body.text)
            except (ParseError, ValidationError) as exc:
                raise HTTPException(
                    status_code=400,
                    detail={
                        "error": str(exc),
                        "diagnostics": getattr(exc, "violations", []),
                        "line": getattr(exc, "line", None),
                    },
                )
            derived = [
                _finding_payload(session, ind_id)
                for ind_id in new_findings
                if ind_id in session.runtime.kb.individuals
            ]
            return {
                "revision": session.revision,
                "derived": derived,
                "events": delta,
            }

    @app.get("/findings")
    def get_findings() -> dict:
        with session.lock:
            kb = session.runtime.kb
            ids = (
                kb.instances_of("Finding") if "Finding" in kb.classes else []
            )
            return {
                "findings": [_finding_payload(session, i) for i in ids],
                "revision": session.revision,
            }

    @app.get("/explanations/{finding_id}")
    def get_explanation(finding_id: str) -> dict:
        with session.lock:
            kb = session.runtime.kb
            if finding_id not in kb.individuals:
                raise HTTPException(status_code=404, detail="unknown finding")
            tree = engine.explain_individual(kb, finding_id)
            if tree is None:
                raise HTTPException(
                    status_code=404, detail="finding has no derivation"
                )
            return {"explanation": _tree_payload(tree)}

    @app.get("/notifications")
    def get_notifications(user: str | None = None) -> dict:
        with session.lock:
            records = session.runtime.outbox.records()
            if user is not None:
                records = [r for r in records if r.user == user]
            return {
                "notifications": [
                    {
                        "message_id": r.message_id,
                        "user": r.user,
                        "channel": r.channel,
                        "timestamp": r.timestamp,
                        "tick": r.tick,
                        "rendering": r.rendering,
                        "body": r.body,
                        "status": r.status,
                        "severity": r.severity,
                        "finding_id": r.message_id.removeprefix("msg-"),
                    }
                    for r in records
                ],
                "revision": session.revision,
            }

    @app.post("/step")
    def post_step(body: StepPost) -> dict:
        with session.lock:
            session.check_revision(body.revision)
            try:
                delta = session.step()
            except TickCapError as exc:
                raise HTTPException(status_code=409, detail=str(exc))
            return {
                "revision": session.revision,
                "quiescent": session.runtime.quiescent,
                "events": delta,
            }

    @app.get("/events")
    def get_events() -> dict:
        with session.lock:
            return {
                "events": [json.loads(line) for line in session.runtime.events],
                "revision": session.revision,
            }

    @app.get("/kb")
    def get_kb() -> dict:
        with session.lock:
            return {
                "text": dump_ontology(session.runtime.kb),
                "revision": session.revision,
            }

    return app


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="ontodesk-api")
    parser.add_argument("--scenario", required=True)
    parser.add_argument("--port", type=int, default=8000)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument(
        "--run", action="store_true",
        help="run the scenario to quiescence before serving",
    )
    args = parser.parse_args(argv)
    session = Session(args.scenario)
    if args.run:
        session.runtime.run()
        session.revision += 1
    app = create_app(session)
    import uvicorn

    print(f"LISTENING {args.port}", flush=True)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    import sys

    sys.exit(main())
