"""Severity- and context-aware routing of findings to business users.

Delivery is push-style: the runtime calls into this module at the end of
every knowledge-discovery cycle, users never poll.  A message names a
topic and a severity; routing rules map (topic, severity) onto org-unit /
decision-level targets.  Superiors of direct targets join the plan only
for critical alerts.  Each user receives on the highest-priority channel
from their own preference list; phone-sized channels (sms, mobile-agent)
always get the truncated rendering with the full explanation available on
request.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import date
from pathlib import Path

from .engine import ExplainNode
from .errors import ValidationError
from .kb import Assertion, Ind, format_literal

SEVERITIES = ("Notification", "Warning", "CriticalAlert")
CHANNELS = ("email", "sms", "rss", "desktop-alert", "mobile-agent")
TRUNCATED_CHANNELS = frozenset({"sms", "mobile-agent"})
ORG_UNITS = ("Marketing", "Sales", "HumanResources", "IT", "Finance", "Executive")
DECISION_LEVELS = ("CEO", "CIO", "CFO", "CMO", "CAO", "analyst")


def severity_rank(severity: str) -> int:
    try:
        return SEVERITIES.index(severity)
    except ValueError:
        raise ValidationError(f"unknown severity: {severity}")


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    unit: str
    level: str
    channels: tuple[str, ...]
    superior: str | None = None
    quiet_days: tuple[int, ...] = ()  # ISO weekday numbers, delivery deferred


@dataclass(frozen=True)
class MessageSpec:
    message_id: str
    severity: str
    topic: str
    finding_ids: tuple[str, ...]
    created: date


@dataclass(frozen=True)
class RoutingRule:
    topic: str  # exact topic or "*"
    min_severity: str
    targets: tuple[tuple[str, str], ...]  # (org unit, decision level)


@dataclass(frozen=True)
class PlanEntry:
    user_id: str
    channel: str
    rendering: str  # full | truncated


@dataclass(frozen=True)
class DeliveryPlan:
    entries: tuple[PlanEntry, ...]


def validate_profiles(profiles: list[UserProfile]) -> list[str]:
    problems: list[str] = []
    by_id = {p.user_id: p for p in profiles}
    if len(by_id) != len(profiles):
        problems.append("duplicate user ids")
    for profile in profiles:
        if profile.unit not in ORG_UNITS:
            problems.append(f"{profile.user_id}: unknown org unit {profile.unit}")
        if profile.level not in DECISION_LEVELS:
            problems.append(f"{profile.user_id}: unknown level {profile.level}")
        if not profile.channels:
            problems.append(f"{profile.user_id}: empty channel priorities")
        if len(set(profile.channels)) != len(profile.channels):
            problems.append(f"{profile.user_id}: duplicate channel priorities")
        for channel in profile.channels:
            if channel not in CHANNELS:
                problems.append(f"{profile.user_id}: unknown channel {channel}")
        if profile.superior is not None and profile.superior not in by_id:
            problems.append(
                f"{profile.user_id}: superior {profile.superior} not found"
            )
    # superior chains must be acyclic
    for profile in profiles:
        seen = {profile.user_id}
        current = profile.superior
        while current is not None:
            if current in seen:
                problems.append(f"superior cycle through {current}")
                break
            seen.add(current)
            current = by_id[current].superior if current in by_id else None
    return problems


def validate_rules(rules: list[RoutingRule]) -> list[str]:
    problems: list[str] = []
    for rule in rules:
        severity_rank(rule.min_severity)
        if not rule.targets:
            problems.append(f"routing rule for {rule.topic}: no targets")
        for unit, level in rule.targets:
            if unit not in ORG_UNITS:
                problems.append(f"routing rule for {rule.topic}: unknown unit {unit}")
            if level not in DECISION_LEVELS:
                problems.append(
                    f"routing rule for {rule.topic}: unknown level {level}"
                )
    return problems


def route(
    message: MessageSpec,
    profiles: list[UserProfile],
    rules: list[RoutingRule],
    available_channels: frozenset[str] | None = None,
    diagnostics: list[str] | None = None,
) -> DeliveryPlan:
    """Resolve a message to (user, channel, rendering) entries.

    Direct targets match a rule's unit/level pairs for the topic at or
    above its minimum severity; their transitive superiors join only for
    CriticalAlert.  Entries come out sorted by user id, one per user.
    """
    available = available_channels or frozenset(CHANNELS)
    by_id = {p.user_id: p for p in profiles}
    rank = severity_rank(message.severity)

    matched_any = False
    direct: set[str] = set()
    for rule in rules:
        if rule.topic not in ("*", message.topic):
            continue
        if rank < severity_rank(rule.min_severity):
            continue
        matched_any = True
        for profile in profiles:
            if (profile.unit, profile.level) in rule.targets:
                direct.add(profile.user_id)
    if not matched_any and diagnostics is not None:
        diagnostics.append(
            f"message {message.message_id}: no routing rule matched topic"
            f" {message.topic} at {message.severity}"
        )

    recipients = set(direct)
    if message.severity == "CriticalAlert":
        for user_id in list(direct):
            current = by_id[user_id].superior
            while current is not None and current not in recipients:
                if current not in by_id:
                    if diagnostics is not None:
                        diagnostics.append(
                            f"message {message.message_id}: superior {current}"
                            f" has no profile"
                        )
                    break
                recipients.add(current)
                current = by_id[current].superior

    entries: list[PlanEntry] = []
    for user_id in sorted(recipients):
        profile = by_id[user_id]
        channel = next((c for c in profile.channels if c in available), None)
        if channel is None:
            if diagnostics is not None:
                diagnostics.append(
                    f"message {message.message_id}: no available channel for"
                    f" {user_id}"
                )
            continue
        rendering = "truncated" if channel in TRUNCATED_CHANNELS else "full"
        entries.append(PlanEntry(user_id, channel, rendering))
    return DeliveryPlan(tuple(entries))


# -- rendering ------------------------------------------------------------


def humanize(ind_id: str) -> str:
    return ind_id.replace("_", " ")


def _subject_annotation(subject: str, kb) -> str:
    """Value context for finding subjects: ``(risen by 11.23%)``."""
    if kb is None or subject not in kb.individuals:
        return ""
    value = unit = None
    for a in kb.assertions_of_subject(subject):
        if a.relation == "hasValue" and not isinstance(a.obj, Ind):
            value = format_literal(a.obj)
        elif a.relation == "hasUnit" and isinstance(a.obj, str):
            unit = a.obj
    if value is None:
        return ""
    classes = kb.individuals[subject].classes
    if "Increase" in classes:
        verb = "risen by "
    elif "Decrease" in classes:
        verb = "fallen by "
    else:
        verb = ""
    return f" ({verb}{value}{unit or ''})"


def format_assertion_line(assertion: Assertion, kb=None) -> str:
    obj = assertion.obj
    obj_text = humanize(obj.id) if isinstance(obj, Ind) else format_literal(obj)
    note = _subject_annotation(assertion.subject, kb)
    return f"{humanize(assertion.subject)}{note} {assertion.relation} {obj_text}"


def _conclusion_line(tree: ExplainNode) -> str:
    derivation = tree.derivation
    if derivation is None:
        return format_assertion_line(tree.assertion)
    subject = tree.assertion.subject
    value = unit = None
    related: list[str] = []
    for produced in derivation.produced:
        if produced.subject != subject:
            continue
        if produced.relation == "hasValue" and not isinstance(produced.obj, Ind):
            value = format_literal(produced.obj)
        elif produced.relation == "hasUnit" and isinstance(produced.obj, str):
            unit = produced.obj
        elif isinstance(produced.obj, Ind):
            related.append(humanize(produced.obj.id))
    parts = [humanize(subject)]
    if value is not None:
        parts.append(f"{value}{unit or ''}")
    if related:
        parts.append("for " + ", ".join(related))
    return ": ".join([parts[0], " ".join(parts[1:])]) if len(parts) > 1 else parts[0]


def render(
    message: MessageSpec, rendering: str, tree: ExplainNode | None, kb=None
) -> str:
    """Report text for one recipient.

    Full form has one FACTS line per explanation-tree leaf (no more) and a
    CONCLUSION; truncated form is a single line with the explanation
    available on request.  With a kb, finding subjects carry their value
    context, e.g. ``(risen by 11.23%)``.
    """
    if rendering not in ("full", "truncated"):
        raise ValidationError(f"unknown rendering: {rendering}")
    if tree is None:
        raise ValidationError(
            f"message {message.message_id}: explanation tree required"
        )
    conclusion = _conclusion_line(tree)
    if rendering == "truncated":
        return f"{conclusion} (explanation available on request)"
    lines = ["FACTS"]
    for leaf in tree.leaves():
        lines.append(f"  {format_assertion_line(leaf, kb)}")
    lines.append("CONCLUSION")
    lines.append(f"  {conclusion}")
    return "\n".join(lines)


# -- delivery -------------------------------------------------------------


@dataclass(frozen=True)
class OutboxRecord:
    message_id: str
    user: str
    channel: str
    timestamp: str  # scenario clock date (ISO)
    tick: int
    rendering: str
    body: str
    status: str  # delivered | failed
    severity: str = "Notification"

    def to_json(self) -> str:
        return json.dumps(
            {
                "message_id": self.message_id,
                "user": self.user,
                "channel": self.channel,
                "timestamp": self.timestamp,
                "tick": self.tick,
                "rendering": self.rendering,
                "body": self.body,
                "status": self.status,
                "severity": self.severity,
            },
            ensure_ascii=False,
        )


class Outbox:
    """Append-only line-record files, one per configured channel.

    Redelivery of the same (message id, user) pair is a no-op; existing
    files are scanned on startup so the guarantee survives restarts.
    """

    def __init__(self, directory: str | Path, channels: tuple[str, ...] = CHANNELS):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.channels = channels
        self._delivered: set[tuple[str, str]] = set()
        for channel in channels:
            path = self._path(channel)
            if path.exists():
                for line in path.read_text(encoding="utf-8").splitlines():
                    if not line.strip():
                        continue
                    record = json.loads(line)
                    self._delivered.add((record["message_id"], record["user"]))

    def _path(self, channel: str) -> Path:
        return self.directory / f"{channel}.jsonl"

    def already_delivered(self, message_id: str, user: str) -> bool:
        return (message_id, user) in self._delivered

    def append(self, record: OutboxRecord) -> None:
        with self._path(record.channel).open("a", encoding="utf-8") as handle:
            handle.write(record.to_json() + "\n")
        self._delivered.add((record.message_id, record.user))

    def records(self, channel: str | None = None) -> list[OutboxRecord]:
        found: list[OutboxRecord] = []
        for name in self.channels if channel is None else (channel,):
            path = self._path(name)
            if not path.exists():
                continue
            for line in path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                data = json.loads(line)
                found.append(OutboxRecord(**data))
        return found


def deliver(
    plan: DeliveryPlan,
    message: MessageSpec,
    bodies: dict[str, str],
    outbox: Outbox,
    clock: date,
    tick: int,
    diagnostics: list[str] | None = None,
) -> list[OutboxRecord]:
    """Write one outbox record per plan entry; failures do not stop others."""
    records: list[OutboxRecord] = []
    for entry in plan.entries:
        if entry.channel not in outbox.channels:
            raise ValidationError(
                f"no sink configured for channel {entry.channel}"
            )
        if outbox.already_delivered(message.message_id, entry.user_id):
            continue
        record = OutboxRecord(
            message_id=message.message_id,
            user=entry.user_id,
            channel=entry.channel,
            timestamp=clock.isoformat(),
            tick=tick,
            rendering=entry.rendering,
            body=bodies.get(entry.user_id, ""),
            status="delivered",
            severity=message.severity,
        )
        try:
            outbox.append(record)
        except OSError as exc:
            record = OutboxRecord(
                message_id=record.message_id,
                user=record.user,
                channel=record.channel,
                timestamp=record.timestamp,
                tick=record.tick,
                rendering=record.rendering,
                body=record.body,
                status="failed",
                severity=record.severity,
            )
            if diagnostics is not None:
                diagnostics.append(
                    f"delivery failed for {entry.user_id} on {entry.channel}: {exc}"
                )
        records.append(record)
    return records
