import random
from datetime import date

import pytest

from ontodesk.engine import explain_individual, run_to_fixpoint
from ontodesk.dsl import compile_instance, parse_rule
from ontodesk.errors import ValidationError
from ontodesk.notify import (
    DeliveryPlan,
    MessageSpec,
    Outbox,
    PlanEntry,
    RoutingRule,
    SEVERITIES,
    UserProfile,
    deliver,
    render,
    route,
    severity_rank,
    validate_profiles,
)

from .generators import random_profiles, random_routing
from .test_engine import scenario_kb

NOW = date(2010, 4, 1)

PROFILES = [
    UserProfile("cmo", "Marketing", "CMO", ("email", "desktop-alert"), "ceo"),
    UserProfile("cao", "Marketing", "CAO", ("rss", "email"), "ceo"),
    UserProfile("ceo", "Executive", "CEO", ("mobile-agent", "email")),
]
RULES = [
    RoutingRule("marketing", "Warning", (("Marketing", "CMO"), ("Marketing", "CAO"))),
]


def message(severity: str) -> MessageSpec:
    return MessageSpec("msg-1", severity, "marketing", ("F1",), NOW)


# -- routing -------------------------------------------------------------------


def test_warning_excludes_superior():
    plan = route(message("Warning"), PROFILES, RULES)
    assert {e.user_id for e in plan.entries} == {"cmo", "cao"}


def test_critical_includes_transitive_superiors():
    plan = route(message("CriticalAlert"), PROFILES, RULES)
    assert {e.user_id for e in plan.entries} == {"cmo", "cao", "ceo"}
    ceo = [e for e in plan.entries if e.user_id == "ceo"][0]
    assert ceo.channel == "mobile-agent"
    assert ceo.rendering == "truncated"


def test_below_minimum_severity_no_plan():
    plan = route(message("Notification"), PROFILES, RULES)
    assert plan.entries == ()


def test_unmatched_topic_empty_plan_with_diagnostic():
    diagnostics: list[str] = []
    spec = MessageSpec("m", "CriticalAlert", "hr", ("F1",), NOW)
    plan = route(spec, PROFILES, RULES, diagnostics=diagnostics)
    assert plan.entries == ()
    assert diagnostics and "no routing rule" in diagnostics[0]


def test_channel_falls_back_when_preferred_unavailable():
    plan = route(
        message("CriticalAlert"), PROFILES, RULES,
        available_channels=frozenset({"email"}),
    )
    assert all(e.channel == "email" for e in plan.entries)
    assert all(e.rendering == "full" for e in plan.entries)


def test_profile_validation():
    assert validate_profiles(PROFILES) == []
    broken = [
        UserProfile("a", "Marketing", "CMO", ("email",), "b"),
        UserProfile("b", "Marketing", "CAO", ("email",), "a"),
    ]
    assert any("cycle" in p for p in validate_profiles(broken))
    assert any(
        "empty channel" in p
        for p in validate_profiles([UserProfile("x", "Marketing", "CMO", ())])
    )


# -- routing properties over random org trees ------------------------------------


def direct_targets(message, profiles, rules):
    """Independent recomputation of the rule-matching step."""
    targets = set()
    for rule in rules:
        if rule.topic not in ("*", message.topic):
            continue
        if severity_rank(message.severity) < severity_rank(rule.min_severity):
            continue
        for profile in profiles:
            if (profile.unit, profile.level) in rule.targets:
                targets.add(profile.user_id)
    return targets


def test_escalation_monotonicity_and_superior_rule_random():
    rng = random.Random(5150)
    for _ in range(60):
        profiles = random_profiles(rng)
        rules = random_routing(rng)
        by_id = {p.user_id: p for p in profiles}
        topic = rng.choice(["t0", "t1"])
        recipients_by_severity = {}
        for severity in SEVERITIES:
            spec = MessageSpec("m", severity, topic, ("F",), NOW)
            plan = route(spec, profiles, rules)
            recipients = {e.user_id for e in plan.entries}
            recipients_by_severity[severity] = (spec, recipients)

            direct = direct_targets(spec, profiles, rules)
            superiors = set()
            for user in direct:
                current = by_id[user].superior
                while current is not None:
                    superiors.add(current)
                    current = by_id[current].superior
            if severity == "CriticalAlert":
                assert direct | superiors == recipients
            else:
                assert recipients == direct
                assert not (recipients & (superiors - direct))

            # channel legality: first channel of each user's priorities
            for entry in plan.entries:
                assert entry.channel == by_id[entry.user_id].channels[0]
                assert entry.rendering == (
                    "truncated"
                    if entry.channel in ("sms", "mobile-agent")
                    else "full"
                )

        low = recipients_by_severity["Notification"][1]
        mid = recipients_by_severity["Warning"][1]
        high = recipients_by_severity["CriticalAlert"][1]
        assert low <= mid <= high


# -- rendering -----------------------------------------------------------------


@pytest.fixture()
def promotion_tree(case_dir, case_kb, case_template, promotion_rule_text):
    kb = scenario_kb(case_dir)
    instance = parse_rule(promotion_rule_text, case_template, case_kb)
    rule = compile_instance(instance, case_kb)
    kb, derivations = run_to_fixpoint(kb, [rule], now=NOW)
    new_id = [d for d in derivations if d.created][0].created[0][0]
    return kb, new_id, explain_individual(kb, new_id)


def test_full_render_lists_leaves_and_conclusion(promotion_tree):
    kb, new_id, tree = promotion_tree
    text = render(message("CriticalAlert"), "full", tree, kb)
    facts, conclusion = text.split("CONCLUSION")
    assert facts.startswith("FACTS")
    fact_lines = [l for l in facts.splitlines()[1:] if l.strip()]
    leaves = tree.leaves()
    assert len(fact_lines) == len(leaves)  # exactly the leaves, no more
    assert "11.23" in facts and "5.87" in facts
    assert "Nokia E72" in facts
    assert "10%" in conclusion
    assert "Nokia E72" in conclusion


def test_truncated_render_single_line(promotion_tree):
    kb, new_id, tree = promotion_tree
    text = render(message("CriticalAlert"), "truncated", tree, kb)
    assert "\n" not in text
    assert "Nokia E72" in text
    assert "10%" in text
    assert "explanation available on request" in text


def test_render_leaf_only_tree(case_kb):
    from ontodesk.engine import ExplainNode
    from ontodesk.kb import Assertion, Ind

    assertion = Assertion("Nokia_5800", "hasCharacteristic", Ind("Nokia"))
    tree = ExplainNode(assertion)
    text = render(message("Warning"), "full", tree, case_kb)
    assert "Nokia 5800 hasCharacteristic Nokia" in text
    assert text.count("\n") == 3  # FACTS, fact, CONCLUSION, conclusion


def test_render_requires_tree():
    with pytest.raises(ValidationError):
        render(message("Warning"), "full", None)


# -- delivery ------------------------------------------------------------------


def test_deliver_two_entries_two_channel_files(tmp_path):
    outbox = Outbox(tmp_path)
    plan = DeliveryPlan(
        (PlanEntry("cmo", "email", "full"), PlanEntry("ceo", "mobile-agent", "truncated"))
    )
    records = deliver(
        plan, message("CriticalAlert"), {"cmo": "body-a", "ceo": "body-b"},
        outbox, NOW, 1,
    )
    assert len(records) == 2
    assert (tmp_path / "email.jsonl").exists()
    assert (tmp_path / "mobile-agent.jsonl").exists()
    assert all(r.status == "delivered" for r in records)


def test_redelivery_is_idempotent(tmp_path):
    outbox = Outbox(tmp_path)
    plan = DeliveryPlan((PlanEntry("cmo", "email", "full"),))
    deliver(plan, message("Warning"), {"cmo": "b"}, outbox, NOW, 1)
    again = deliver(plan, message("Warning"), {"cmo": "b"}, outbox, NOW, 2)
    assert again == []
    assert len(outbox.records("email")) == 1
    # a fresh Outbox over the same directory still refuses redelivery
    reopened = Outbox(tmp_path)
    assert deliver(plan, message("Warning"), {"cmo": "b"}, reopened, NOW, 3) == []


def test_missing_sink_is_configuration_error(tmp_path):
    outbox = Outbox(tmp_path, channels=("email",))
    plan = DeliveryPlan((PlanEntry("ceo", "mobile-agent", "truncated"),))
    with pytest.raises(ValidationError) as err:
        deliver(plan, message("Warning"), {"ceo": "b"}, outbox, NOW, 1)
    assert "mobile-agent" in str(err.value)


def test_outbox_records_shape(tmp_path):
    outbox = Outbox(tmp_path)
    plan = DeliveryPlan((PlanEntry("cmo", "email", "full"),))
    deliver(plan, message("Warning"), {"cmo": "hello"}, outbox, NOW, 7)
    [record] = outbox.records()
    assert record.timestamp == "2010-04-01"
    assert record.tick == 7
    assert record.body == "hello"
    assert record.channel == "email"


def test_superior_without_profile_is_diagnosed_not_fatal():
    profiles = [UserProfile("cmo", "Marketing", "CMO", ("email",), "ghost")]
    diagnostics: list[str] = []
    plan = route(message("CriticalAlert"), profiles, RULES, diagnostics=diagnostics)
    assert {e.user_id for e in plan.entries} == {"cmo"}
    assert any("ghost" in d for d in diagnostics)
