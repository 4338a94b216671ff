"""Deterministic in-process agent substrate and scenario driver.

Agents are cooperative tasks driven by an explicit tick loop, not
threads.  Each tick: flush deferred notifications, run due scheduled
tasks, apply kb-event triggers, then drain mailboxes in the fixed role
order IRA, DMA, OLAPA, KDA, NA.  Messages sent to a later role are
handled in the same tick; messages to an earlier role wait for the next
one.  All effects go through one kb writer and are logged as structured
records, so two runs of the same scenario produce byte-identical event
logs and outboxes.

The information flow mirrors the decision-support loop: retrieval asserts
newly found phones, which triggers a warehouse rebuild for the affected
brands; the resulting findings feed knowledge discovery, whose derived
findings are pushed to users through the notifier.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import date, timedelta
from decimal import Decimal, InvalidOperation
from pathlib import Path

from . import dsl, engine, notify, olap, retrieval
from .config import ScenarioConfig, ScheduledTask
from .errors import (
    OntodeskError,
    ParseError,
    TickCapError,
    UnknownEntityError,
    ValidationError,
)
from .kb import (
    Assertion,
    Ind,
    Individual,
    Ontology,
    Provenance,
    assert_fact,
    format_literal,
)
from .kbfile import load_ontology
from .notify import MessageSpec, Outbox, PlanEntry, deliver, render, route
from .olap import AnalysisModel, UndefinedBaselineError

ROLE_ORDER = ("IRA", "DMA", "OLAPA", "KDA", "NA")
DM = Provenance("dm")


@dataclass(frozen=True)
class Envelope:
    sender: str
    recipient: str
    performative: str  # request | inform
    kind: str  # analysis-request | findings-batch | notify-request
    payload: tuple
    correlation_id: str
    tick: int


class ScenarioClock:
    """Tick counter bound to a calendar date; one tick per day."""

    def __init__(self, start: date):
        self.start = start
        self.tick = 0

    @property
    def date(self) -> date:
        return self.start + timedelta(days=max(self.tick - 1, 0))

    def advance(self) -> None:
        self.tick += 1


class Runtime:
    """Owns the current kb snapshot and all agent state for one scenario."""

    def __init__(self, config: ScenarioConfig, out_dir: str | Path):
        self.config = config
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.clock = ScenarioClock(config.clock_start)
        self.events: list[str] = []
        self.kb: Ontology = load_ontology(
            config.schema_path.read_text(encoding="utf-8")
        )

        self.schema = olap.load_dimensions(
            config.warehouse_dims_path.read_text(encoding="utf-8")
        )
        olap.load_facts(
            config.warehouse_facts_path.read_text(encoding="utf-8"), self.schema
        )
        for model in config.models:
            problems = olap.validate_model(model, self.schema)
            if problems:
                raise ValidationError("bad analysis model", problems)

        self.templates: dict[str, dsl.Template] = {}
        for path in config.template_paths:
            template = dsl.parse_template(path.read_text(encoding="utf-8"), self.kb)
            self.templates[template.name] = template
        self.rules: list[engine.Rule] = []
        for path in config.rule_paths:
            self.add_rule_text(path.read_text(encoding="utf-8"), source=path.name)

        self.patterns = (
            retrieval.load_patterns(config.patterns_path.read_text(encoding="utf-8"))
            if config.patterns_path
            else {}
        )
        self.fetcher = (
            retrieval.FixtureFetcher(config.fixtures_dir)
            if config.fixtures_dir
            else None
        )

        problems = notify.validate_profiles(config.profiles)
        problems += notify.validate_rules(config.routing)
        if problems:
            raise ValidationError("bad notification config", problems)
        self.outbox = Outbox(self.out_dir / "outbox", config.channels)

        self.mailboxes: dict[str, list[Envelope]] = {role: [] for role in ROLE_ORDER}
        self.known_shop_urls: set[str] = set()
        self.deferred: list[tuple[MessageSpec, PlanEntry, str]] = []
        self.notified_findings: set[str] = set()
        self._logged_firings: set[tuple] = set()
        self._correlations = 0
        self.quiescent = False

    # -- plumbing ------------------------------------------------------

    def emit(self, record_type: str, **fields) -> None:
        record = {"tick": self.clock.tick, "type": record_type}
        record.update(fields)
        self.events.append(json.dumps(record, ensure_ascii=False))

    def _next_correlation(self) -> str:
        self._correlations += 1
        return f"c{self._correlations}"

    def dispatch(self, envelope: Envelope) -> None:
        if envelope.recipient not in self.mailboxes:
            raise UnknownEntityError(f"unknown recipient role: {envelope.recipient}")
        self.mailboxes[envelope.recipient].append(envelope)
        self.emit(
            "dispatch",
            sender=envelope.sender,
            recipient=envelope.recipient,
            performative=envelope.performative,
            kind=envelope.kind,
            correlation=envelope.correlation_id,
            size=len(envelope.payload),
        )

    def send(self, sender: str, recipient: str, performative: str, kind: str,
             payload: tuple) -> None:
        self.dispatch(
            Envelope(
                sender=sender,
                recipient=recipient,
                performative=performative,
                kind=kind,
                payload=payload,
                correlation_id=self._next_correlation(),
                tick=self.clock.tick,
            )
        )

    def commit_kb(self, new_kb: Ontology, source: str) -> list[tuple[str, object]]:
        """Install a new snapshot, logging the delta; returns kb events."""
        old = self.kb
        kb_events: list[tuple[str, object]] = []
        for ind_id in sorted(set(new_kb.individuals) - set(old.individuals)):
            individual = new_kb.individuals[ind_id]
            self.emit(
                "individual", id=ind_id, classes=list(individual.classes),
                source=source,
            )
            kb_events.append(("new-individual", individual))
        for key in sorted(set(new_kb.assertions) - set(old.assertions)):
            assertion = new_kb.assertions[key]
            obj = assertion.obj
            self.emit(
                "assert",
                subject=assertion.subject,
                relation=assertion.relation,
                object=obj.id if isinstance(obj, Ind) else format_literal(obj),
                provenance=str(assertion.provenance),
                source=source,
            )
            kb_events.append(("new-assertion", assertion))
        self.kb = new_kb
        return kb_events

    def diagnostics_to_log(self, source: str, diagnostics: list[str]) -> None:
        for text in diagnostics:
            self.emit("diagnostic", source=source, text=text)

    # -- rule management -------------------------------------------------

    def add_rule_text(self, text: str, source: str = "<inline>") -> engine.Rule:
        """Parse, validate and register one rule instance."""
        instance = dsl.parse_rule_text(text)
        template = self.templates.get(instance.template)
        if template is None:
            raise ValidationError(
                f"{source}: unknown template {instance.template}"
            )
        problems = dsl.validate_instance(instance, template, self.kb)
        if problems:
            raise ValidationError(f"{source}: invalid rule", problems)
        rule = dsl.compile_instance(instance, self.kb)
        safety = engine.check_dl_safe(rule, self.kb)
        if safety:
            raise ValidationError(f"{source}: rule not DL-safe", safety)
        if any(r.id == rule.id for r in self.rules):
            raise ValidationError(f"{source}: duplicate rule id {rule.id}")
        self.rules.append(rule)
        self.kb = self.kb.with_axiom(rule.id)
        return rule

    # -- scheduling ------------------------------------------------------

    def _due_tasks(self, tick: int) -> list[ScheduledTask]:
        due: list[ScheduledTask] = []
        for task in self.config.schedule:
            when = task.when
            if when == "once":
                if tick == 1:
                    due.append(task)
            elif when == "daily":
                due.append(task)
            elif when.startswith("every "):
                parts = when.split()
                try:
                    n = int(parts[1])
                except (IndexError, ValueError):
                    raise ValidationError(f"bad schedule expression: {when}")
                if n > 0 and (tick - 1) % n == 0:
                    due.append(task)
            else:
                raise ValidationError(f"bad schedule expression: {when}")
        ordered = {role: i for i, role in enumerate(ROLE_ORDER)}
        return sorted(due, key=lambda t: (ordered.get(t.role, 99), t.task))

    def has_pending(self) -> bool:
        if any(self.mailboxes[role] for role in ROLE_ORDER):
            return True
        if self.deferred:
            return True
        return bool(self._due_tasks(self.clock.tick + 1))

    # -- tick ------------------------------------------------------------

    def tick(self) -> int:
        """Advance one tick; returns the number of event records emitted."""
        before = len(self.events)
        self.clock.advance()
        self.emit("tick-start", date=self.clock.date.isoformat())

        self._flush_deferred()

        for task in self._due_tasks(self.clock.tick):
            self.emit("task", role=task.role, task=task.task)
            try:
                kb_events = self._run_task(task)
                self._apply_triggers(kb_events)
            except OntodeskError as exc:
                self.emit("error", role=task.role, text=str(exc))

        for role in ROLE_ORDER:
            while self.mailboxes[role]:
                envelope = self.mailboxes[role].pop(0)
                self.emit(
                    "process", role=role, kind=envelope.kind,
                    correlation=envelope.correlation_id,
                )
                try:
                    kb_events = self._handle(role, envelope)
                    self._apply_triggers(kb_events)
                except OntodeskError as exc:
                    self.emit("error", role=role, text=str(exc))
        return len(self.events) - before

    def run(self) -> None:
        """Tick until quiescence; raise past the tick cap."""
        while self.has_pending():
            if self.clock.tick >= self.config.tick_cap:
                raise TickCapError(
                    f"no quiescence after {self.config.tick_cap} ticks"
                )
            self.tick()
        self.quiescent = True
        self.emit("quiescent")

    # -- triggers ----------------------------------------------------------

    def _apply_triggers(self, kb_events: list[tuple[str, object]]) -> None:
        if not kb_events:
            return
        for trigger in self.config.triggers:
            if trigger.event != "new-individual":
                raise ValidationError(f"unknown trigger event: {trigger.event}")
            matched = [
                individual
                for kind, individual in kb_events
                if kind == "new-individual"
                and isinstance(individual, Individual)
                and any(
                    trigger.cls in self.kb.ancestors(c)
                    for c in individual.classes
                    if c in self.kb.classes
                )
            ]
            if not matched:
                continue
            if trigger.action == "olap-rebuild":
                self._trigger_olap_rebuild(matched)
            else:
                raise ValidationError(f"unknown trigger action: {trigger.action}")

    def _trigger_olap_rebuild(self, new_individuals: list[Individual]) -> None:
        """Rebuild every model whose filters or dimension membership cover a
        new phone's brand."""
        brands: set[str] = set()
        for individual in new_individuals:
            for assertion in self.kb.assertions_of_subject(individual.id):
                if assertion.relation == "hasCharacteristic" and isinstance(
                    assertion.obj, Ind
                ):
                    brands.add(assertion.obj.id)
        affected: set[str] = set()
        for model in self.config.models:
            for brand in brands:
                if self._model_covers(model, brand):
                    affected.add(model.id)
        if affected:
            self.send(
                "IRA", "OLAPA", "request", "analysis-request",
                tuple(sorted(affected)),
            )

    def _model_covers(self, model: AnalysisModel, brand: str) -> bool:
        for f in model.filters:
            if f.member == brand:
                return True
        filtered_dims = {f.dimension for f in model.filters}
        for name, dimension in self.schema.dimensions.items():
            if name in filtered_dims or name == model.period_dimension:
                continue
            if brand in dimension.members:
                return True
        return False

    # -- agent behaviours ----------------------------------------------------

    def _run_task(self, task: ScheduledTask) -> list[tuple[str, object]]:
        if task.role == "IRA" and task.task == "retrieval":
            return self._ira_cycle()
        if task.role == "DMA" and task.task == "dm-stub":
            return self._dma_cycle()
        if task.role == "OLAPA" and task.task == "analysis":
            scheduled = tuple(
                m.id for m in self.config.models if m.schedule != "on-demand"
            )
            return self._olapa_run(scheduled, sender="OLAPA")
        raise ValidationError(f"unknown scheduled task: {task.role}/{task.task}")

    def _handle(self, role: str, envelope: Envelope) -> list[tuple[str, object]]:
        if role == "OLAPA" and envelope.kind == "analysis-request":
            return self._olapa_run(envelope.payload, sender=envelope.sender)
        if role == "KDA" and envelope.kind == "findings-batch":
            return self._kda_cycle()
        if role == "NA" and envelope.kind == "notify-request":
            self._na_cycle(envelope.payload)
            return []
        raise ValidationError(f"{role} cannot handle {envelope.kind}")

    # IRA: discover shops, scrape products, detect new phones, enrich dims.
    def _ira_cycle(self) -> list[tuple[str, object]]:
        config = self.config.retrieval
        if config is None or self.fetcher is None:
            return []
        diagnostics: list[str] = []
        directory = self.patterns.get(config.directory_source)
        if directory is None:
            raise ValidationError(
                f"no pattern for directory source {config.directory_source}"
            )
        shops = retrieval.discover_shops(
            list(config.seed_queries), directory, self.fetcher,
            self.known_shop_urls, self.clock.date, diagnostics,
        )
        for shop in shops:
            self.known_shop_urls.add(shop.base_url)
            self.emit("shop", id=shop.shop_id, url=shop.base_url)

        def scrape_one(shop: retrieval.ShopRecord) -> list:
            pattern = self.patterns.get(shop.shop_id)
            if pattern is None:
                diagnostics.append(f"no scrape pattern for {shop.shop_id}")
                return []
            return retrieval.scrape(
                shop, pattern, config.product_query, self.fetcher,
                self.clock.date, diagnostics,
            )

        if config.parallel and len(shops) > 1:
            with ThreadPoolExecutor(max_workers=4) as pool:
                batches = list(pool.map(scrape_one, shops))
        else:
            batches = [scrape_one(shop) for shop in shops]
        observations = [obs for batch in batches for obs in batch]

        kb, created = retrieval.detect_new_phones(
            observations, self.kb, self.clock.date, diagnostics
        )
        for target in config.enrich:
            dimension = self.schema.dimensions.get(target.dimension)
            if dimension is None:
                diagnostics.append(f"enrich: unknown dimension {target.dimension}")
                continue
            news = self.patterns.get(config.news_source)
            if news is None:
                diagnostics.append(f"enrich: no news source {config.news_source}")
                continue
            kb, _links = retrieval.enrich_dimension(
                kb, dimension, list(target.levels), news, self.fetcher, diagnostics
            )
        events = self.commit_kb(kb, source="IRA")
        self.diagnostics_to_log("IRA", diagnostics)
        return events

    # DMA: configured stub, one finding individual per row.
    def _dma_cycle(self) -> list[tuple[str, object]]:
        if self.config.dma_stub_path is None:
            return []
        kb, _ids = dma_emit(
            self.config.dma_stub_path.read_text(encoding="utf-8"),
            self.kb,
            self.clock.date,
        )
        return self.commit_kb(kb, source="DMA")

    # OLAPA: run models, drill anomalies, assert findings, inform KDA.
    def _olapa_run(self, model_ids: tuple, sender: str) -> list[tuple[str, object]]:
        diagnostics: list[str] = []
        findings: list[olap.OlapFinding] = []
        by_id = {m.id: m for m in self.config.models}
        for model_id in sorted(model_ids):
            model = by_id.get(model_id)
            if model is None:
                diagnostics.append(f"unknown analysis model: {model_id}")
                continue
            try:
                finding = olap.compute_finding(model, model.period, self.schema)
            except UndefinedBaselineError as exc:
                diagnostics.append(str(exc))
                continue
            findings.append(finding)
            self.emit(
                "finding", id=finding.id, direction=finding.direction,
                percent=str(finding.percent_change),
            )
            for child in olap.drill(model, finding, self.schema, diagnostics):
                findings.append(child)
                self.emit(
                    "finding", id=child.id, direction=child.direction,
                    percent=str(child.percent_change),
                )
        kb = olap.assert_findings(self.kb, findings, self.schema, diagnostics)
        events = self.commit_kb(kb, source="OLAPA")
        self.diagnostics_to_log("OLAPA", diagnostics)
        if findings:
            self.send(
                "OLAPA", "KDA", "inform", "findings-batch",
                tuple(f.id for f in findings),
            )
        return events

    # KDA: saturate the rule set, then ask NA to push new derived findings.
    def _kda_cycle(self) -> list[tuple[str, object]]:
        diagnostics: list[str] = []
        kb, derivations = engine.run_to_fixpoint(
            self.kb, self.rules, now=self.clock.date, diagnostics=diagnostics,
        )
        for derivation in derivations:
            # one record per firing; discovery re-runs re-fire known
            # instantiations emptily, so those are logged only once
            key = (derivation.rule, derivation.binding)
            if key in self._logged_firings:
                continue
            self._logged_firings.add(key)
            self.emit(
                "firing",
                rule=derivation.rule,
                binding=engine.format_binding(derivation.binding_map()),
                produced=len(derivation.produced),
            )
        events = self.commit_kb(kb, source="KDA")
        self.diagnostics_to_log("KDA", diagnostics)
        messages = self._messages_for_new_findings(derivations)
        if messages:
            self.send("KDA", "NA", "request", "notify-request", tuple(messages))
        return events

    def _messages_for_new_findings(
        self, derivations: list[engine.Derivation]
    ) -> list[MessageSpec]:
        messages: list[MessageSpec] = []
        for derivation in derivations:
            for ind_id, _cls in derivation.created:
                if ind_id in self.kb.individuals and ind_id not in self.notified_findings:
                    self.notified_findings.add(ind_id)
                    messages.append(
                        MessageSpec(
                            message_id=f"msg-{ind_id}",
                            severity=self.config.notify.severity,
                            topic=self.config.notify.topic,
                            finding_ids=(ind_id,),
                            created=self.clock.date,
                        )
                    )
        return messages

    # NA: route, render per recipient, deliver to channel sinks.
    def _na_cycle(self, messages: tuple) -> None:
        diagnostics: list[str] = []
        for message in messages:
            self.emit(
                "message", id=message.message_id, severity=message.severity,
                topic=message.topic,
            )
            plan = route(
                message, self.config.profiles, self.config.routing,
                frozenset(self.config.channels), diagnostics,
            )
            immediate: list[PlanEntry] = []
            profiles = {p.user_id: p for p in self.config.profiles}
            for entry in plan.entries:
                profile = profiles[entry.user_id]
                if self.clock.date.isoweekday() in profile.quiet_days:
                    self.deferred.append((message, entry, "quiet-hours"))
                    self.emit("defer", message=message.message_id, user=entry.user_id)
                else:
                    immediate.append(entry)
            self._deliver_entries(message, immediate)
        self.diagnostics_to_log("NA", diagnostics)

    def _deliver_entries(self, message: MessageSpec, entries: list[PlanEntry]) -> None:
        if not entries:
            return
        diagnostics: list[str] = []
        bodies: dict[str, str] = {}
        tree = None
        if message.finding_ids:
            tree = engine.explain_individual(self.kb, message.finding_ids[0])
        for entry in entries:
            bodies[entry.user_id] = render(message, entry.rendering, tree, self.kb)
        records = deliver(
            notify.DeliveryPlan(tuple(entries)), message, bodies,
            self.outbox, self.clock.date, self.clock.tick, diagnostics,
        )
        for record in records:
            self.emit(
                "delivery", message=record.message_id, user=record.user,
                channel=record.channel, rendering=record.rendering,
                status=record.status,
            )
        self.diagnostics_to_log("NA", diagnostics)

    def _flush_deferred(self) -> None:
        if not self.deferred:
            return
        pending = self.deferred
        self.deferred = []
        by_message: dict[str, tuple[MessageSpec, list[PlanEntry]]] = {}
        for message, entry, _reason in pending:
            by_message.setdefault(message.message_id, (message, []))[1].append(entry)
        for message_id in sorted(by_message):
            message, entries = by_message[message_id]
            self._deliver_entries(message, entries)


def dma_emit(stub_text: str, kb: Ontology, clock: date) -> tuple[Ontology, list[str]]:
    """Materialise data-mining stub rows as Finding individuals.

    Row form: ``finding <id> class=<FindingClass> value=<decimal>
    unit=<text> related=<ind>[,<ind>...]``.  Unknown referenced
    individuals fail the whole load, naming the row.
    """
    created: list[str] = []
    for line_no, raw in enumerate(stub_text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if tokens[0] != "finding" or len(tokens) < 3:
            raise ParseError("expected: finding <id> key=value...", line=line_no)
        finding_id = tokens[1]
        attrs: dict[str, str] = {}
        for token in tokens[2:]:
            if "=" not in token:
                raise ParseError(f"expected key=value, got {token}", line=line_no)
            key, value = token.split("=", 1)
            attrs[key] = value
        cls = attrs.get("class", "Finding")
        if cls not in kb.classes:
            raise ParseError(f"row {line_no}: unknown class {cls}", line=line_no)
        related = [r for r in attrs.get("related", "").split(",") if r]
        for ref in related:
            if ref not in kb.individuals:
                raise ParseError(
                    f"row {line_no}: unknown individual {ref}", line=line_no
                )
        if finding_id not in kb.individuals:
            kb = kb.with_individual(Individual(finding_id, (cls,)))
            created.append(finding_id)
        if "value" in attrs:
            try:
                value = Decimal(attrs["value"])
            except InvalidOperation:
                raise ParseError(
                    f"row {line_no}: bad value {attrs['value']}", line=line_no
                )
            kb = assert_fact(kb, Assertion(finding_id, "hasValue", value, DM))
        if "unit" in attrs:
            kb = assert_fact(kb, Assertion(finding_id, "hasUnit", attrs["unit"], DM))
        for ref in related:
            kb = assert_fact(kb, Assertion(finding_id, "relatedTo", Ind(ref), DM))
    return kb, created


@dataclass
class ScenarioResult:
    kb: Ontology
    events: list[str]
    outbox: Outbox
    ticks: int
    quiescent: bool
    runtime: Runtime


def run_scenario(config: ScenarioConfig, out_dir: str | Path) -> ScenarioResult:
    """Drive a scenario to quiescence; raises TickCapError past the cap."""
    runtime = Runtime(config, out_dir)
    runtime.run()
    return ScenarioResult(
        kb=runtime.kb,
        events=runtime.events,
        outbox=runtime.outbox,
        ticks=runtime.clock.tick,
        quiescent=runtime.quiescent,
        runtime=runtime,
    )
