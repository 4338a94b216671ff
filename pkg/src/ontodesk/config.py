"""Scenario configuration: one YAML document wiring every input together.

Paths are resolved relative to the config file.  The document names the kb
schema, warehouse metadata and facts, rule/template files, retrieval
patterns and fixture directory, analysis models, the execution policy
(schedule + kb-event triggers), notification profiles/routing, the clock
start date and the tick cap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date
from decimal import Decimal
from pathlib import Path

import yaml

from .errors import ParseError
from .notify import RoutingRule, UserProfile
from .olap import AnalysisModel, Filter


@dataclass(frozen=True)
class ScheduledTask:
    role: str
    task: str
    when: str  # "once" | "daily" | "every <n> days"


@dataclass(frozen=True)
class Trigger:
    event: str  # "new-individual"
    cls: str
    action: str  # "olap-rebuild"


@dataclass(frozen=True)
class EnrichTarget:
    dimension: str
    levels: tuple[str, ...]


@dataclass(frozen=True)
class RetrievalConfig:
    directory_source: str
    seed_queries: tuple[str, ...]
    product_query: str
    news_source: str = "news"
    enrich: tuple[EnrichTarget, ...] = ()
    parallel: bool = False


@dataclass(frozen=True)
class NotifyPolicy:
    severity: str
    topic: str


@dataclass
class ScenarioConfig:
    name: str
    base_dir: Path
    clock_start: date
    tick_cap: int
    schema_path: Path
    warehouse_dims_path: Path
    warehouse_facts_path: Path
    template_paths: list[Path]
    rule_paths: list[Path]
    patterns_path: Path | None
    fixtures_dir: Path | None
    retrieval: RetrievalConfig | None
    models: list[AnalysisModel]
    schedule: list[ScheduledTask]
    triggers: list[Trigger]
    notify: NotifyPolicy
    profiles: list[UserProfile]
    routing: list[RoutingRule]
    dma_stub_path: Path | None = None
    channels: tuple[str, ...] = field(
        default=("email", "sms", "rss", "desktop-alert", "mobile-agent")
    )


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"scenario config not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ParseError(f"bad scenario config: {exc}")
    if not isinstance(raw, dict):
        raise ParseError("scenario config must be a mapping")
    base = path.parent

    def resolve(value: str | None) -> Path | None:
        return (base / value) if value else None

    try:
        paths = raw.get("paths", {})
        clock_start = raw["clock_start"]
        if not isinstance(clock_start, date):
            clock_start = date.fromisoformat(str(clock_start))

        models = [
            AnalysisModel(
                id=m["id"],
                schema=m.get("schema", "sales"),
                measure=m["measure"],
                filters=tuple(
                    Filter(str(f[0]), str(f[1]), str(f[2]))
                    for f in m.get("filters", [])
                ),
                period_dimension=m["period_dimension"],
                grain=m["grain"],
                period=str(m["period"]),
                threshold=Decimal(str(m.get("threshold", "5"))),
                schedule=m.get("schedule", "on-demand"),
            )
            for m in raw.get("models", [])
        ]
        schedule = [
            ScheduledTask(s["role"], s["task"], str(s.get("when", "once")))
            for s in raw.get("schedule", [])
        ]
        triggers = [
            Trigger(t["event"], t["class"], t["action"])
            for t in raw.get("triggers", [])
        ]
        notify_raw = raw.get("notify", {})
        notify = NotifyPolicy(
            severity=notify_raw.get("severity", "Warning"),
            topic=notify_raw.get("topic", "general"),
        )
        profiles = [
            UserProfile(
                user_id=p["user"],
                unit=p["unit"],
                level=p["level"],
                channels=tuple(p.get("channels", [])),
                superior=p.get("superior"),
                quiet_days=tuple(int(d) for d in p.get("quiet_days", [])),
            )
            for p in raw.get("profiles", [])
        ]
        routing = [
            RoutingRule(
                topic=r["topic"],
                min_severity=r.get("min_severity", "Notification"),
                targets=tuple((str(u), str(l)) for u, l in r.get("targets", [])),
            )
            for r in raw.get("routing", [])
        ]
        retrieval = None
        if "retrieval" in raw:
            r = raw["retrieval"]
            retrieval = RetrievalConfig(
                directory_source=r.get("directory_source", "directory"),
                seed_queries=tuple(r.get("seed_queries", [])),
                product_query=r.get("product_query", "phones"),
                news_source=r.get("news_source", "news"),
                enrich=tuple(
                    EnrichTarget(e["dimension"], tuple(e.get("levels", [])))
                    for e in r.get("enrich", [])
                ),
                parallel=bool(r.get("parallel", False)),
            )
        return ScenarioConfig(
            name=raw.get("name", path.stem),
            base_dir=base,
            clock_start=clock_start,
            tick_cap=int(raw.get("tick_cap", 50)),
            schema_path=resolve(paths["schema"]),
            warehouse_dims_path=resolve(paths["warehouse_dims"]),
            warehouse_facts_path=resolve(paths["warehouse_facts"]),
            template_paths=[resolve(p) for p in paths.get("templates", [])],
            rule_paths=[resolve(p) for p in paths.get("rules", [])],
            patterns_path=resolve(paths.get("patterns")),
            fixtures_dir=resolve(paths.get("fixtures")),
            retrieval=retrieval,
            models=models,
            schedule=schedule,
            triggers=triggers,
            notify=notify,
            profiles=profiles,
            routing=routing,
            dma_stub_path=resolve(paths.get("dma_stub")),
        )
    except KeyError as exc:
        raise ParseError(f"scenario config missing key: {exc}")
