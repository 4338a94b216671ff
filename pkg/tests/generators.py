"""Seeded random generators for property-style tests."""

from __future__ import annotations

import random
from datetime import date, timedelta
from decimal import Decimal

from ontodesk import dsl, engine
from ontodesk.kb import (
    Assertion,
    ClassDef,
    Ind,
    Individual,
    Ontology,
    Provenance,
    RelationDef,
    assert_fact,
    quantize,
)
from ontodesk.olap import DimensionDef, FactRow, Level, Member, MeasureDef, StarSchema
from ontodesk.notify import (
    CHANNELS,
    DECISION_LEVELS,
    ORG_UNITS,
    RoutingRule,
    UserProfile,
)

LOADED = Provenance("loaded")


# -- random knowledge bases -------------------------------------------------


def random_kb(rng: random.Random, max_individuals: int = 30) -> Ontology:
    kb = Ontology()
    kb = kb.with_class(ClassDef("Thing", (), "common"))
    class_names = ["Thing"]
    for i in range(rng.randint(3, 7)):
        parent = rng.choice(class_names)
        name = f"C{i}"
        kb = kb.with_class(ClassDef(name, (parent,), "common"))
        class_names.append(name)

    relations = []
    for i in range(rng.randint(2, 5)):
        domain = rng.choice(class_names)
        if rng.random() < 0.5:
            rng_target = rng.choice(class_names)
        else:
            rng_target = rng.choice(["decimal", "date", "string"])
        name = f"r{i}"
        kb = kb.with_relation(RelationDef(name, domain, rng_target))
        relations.append(name)

    individuals = []
    for i in range(rng.randint(4, max_individuals)):
        classes = tuple(
            sorted({rng.choice(class_names[1:]) for _ in range(rng.randint(1, 2))})
        )
        ind_id = f"i{i}"
        kb = kb.with_individual(Individual(ind_id, classes))
        individuals.append(ind_id)

    for _ in range(rng.randint(3, 3 * len(individuals))):
        relation = kb.relations[rng.choice(relations)]
        subject = rng.choice(individuals)
        if relation.range in kb.classes:
            obj = Ind(rng.choice(individuals))
        elif relation.range == "decimal":
            obj = quantize(Decimal(rng.randint(0, 500)) / 10)
        elif relation.range == "date":
            obj = date(2010, 1, 1) + timedelta(days=rng.randint(0, 90))
        else:
            obj = rng.choice(["red", "green", "blue"])
        try:
            kb = assert_fact(kb, Assertion(subject, relation.name, obj, LOADED))
        except Exception:
            continue  # domain/range mismatch: skip the candidate
    return kb


# -- random safe rules --------------------------------------------------------


def _guaranteed(kb: Ontology, cls: str) -> frozenset[str]:
    return kb.ancestors(cls)


def random_rules(
    rng: random.Random, kb: Ontology, count: int = 5
) -> list[engine.Rule]:
    """Schema-valid, DL-safe rules whose heads cannot fault at fire time."""
    class_names = [c for c in kb.classes if c != "Thing"]
    rules: list[engine.Rule] = []
    for index in range(count):
        body: list[engine.Atom] = []
        guaranteed: dict[str, str] = {}
        base_cls = rng.choice(class_names)
        body.append(engine.ClassAtom(base_cls, engine.Var("x0")))
        guaranteed["x0"] = base_cls
        var_count = 1
        for _ in range(rng.randint(0, 2)):
            subject = rng.choice(sorted(guaranteed))
            candidates = [
                r
                for r in kb.relations.values()
                if r.domain in _guaranteed(kb, guaranteed[subject])
            ]
            if not candidates:
                continue
            relation = rng.choice(sorted(candidates, key=lambda r: r.name))
            var = f"x{var_count}"
            var_count += 1
            body.append(
                engine.PropAtom(relation.name, engine.Var(subject), engine.Var(var))
            )
            if relation.range in kb.classes:
                guaranteed[var] = relation.range
            elif relation.range == "decimal" and rng.random() < 0.4:
                body.append(
                    engine.CmpAtom(
                        engine.GREATER_THAN,
                        engine.Var(var),
                        quantize(Decimal(rng.randint(0, 300)) / 10),
                    )
                )

        head: list[engine.Atom] = []
        fresh: tuple = ()
        choice = rng.random()
        if choice < 0.4:
            head.append(engine.ClassAtom(rng.choice(class_names), engine.Var("x0")))
        elif choice < 0.75:
            candidates = [
                r
                for r in kb.relations.values()
                if r.domain in _guaranteed(kb, guaranteed["x0"])
            ]
            prop = None
            for relation in sorted(candidates, key=lambda r: r.name):
                if relation.range == "decimal":
                    prop = engine.PropAtom(
                        relation.name, engine.Var("x0"), quantize(Decimal("1"))
                    )
                    break
                if relation.range == "string":
                    prop = engine.PropAtom(relation.name, engine.Var("x0"), "flag")
                    break
                if relation.range in kb.classes:
                    compatible = [
                        v
                        for v, cls in guaranteed.items()
                        if relation.range in _guaranteed(kb, cls)
                    ]
                    if compatible:
                        prop = engine.PropAtom(
                            relation.name,
                            engine.Var("x0"),
                            engine.Var(rng.choice(sorted(compatible))),
                        )
                        break
            if prop is None:
                head.append(
                    engine.ClassAtom(rng.choice(class_names), engine.Var("x0"))
                )
            else:
                head.append(prop)
        else:
            cls = rng.choice(class_names)
            fresh = (engine.FreshDecl("f", cls, f"Gen{index}"),)
            head.append(engine.ClassAtom(cls, engine.Var("f")))
        rules.append(
            engine.Rule(
                id=f"rule{index}", body=tuple(body), head=tuple(head), fresh=fresh
            )
        )

    # keep the set terminating: a fresh individual must not satisfy any body
    # class atom in the set, or rules could feed themselves new bindings
    # forever (the firing cap exists for exactly that pathology)
    body_classes = {
        atom.cls
        for rule in rules
        for atom in rule.body
        if isinstance(atom, engine.ClassAtom)
    }
    safe_rules: list[engine.Rule] = []
    for rule in rules:
        if rule.fresh:
            decl = rule.fresh[0]
            if any(c in kb.ancestors(decl.cls) for c in body_classes):
                rule = engine.Rule(
                    id=rule.id,
                    body=rule.body,
                    head=(engine.ClassAtom(decl.cls, engine.Var("x0")),),
                    fresh=(),
                )
        safe_rules.append(rule)
    return safe_rules


# -- random star schemas -------------------------------------------------------


def random_star_schema(rng: random.Random, max_rows: int = 200) -> StarSchema:
    schema = StarSchema("random")
    schema.measures["m"] = MeasureDef("m", "units", "M")
    for d in range(rng.randint(1, 2)):
        dimension = DimensionDef(f"d{d}")
        n_levels = rng.randint(2, 3)
        for l in range(n_levels):
            dimension.levels.append(Level(f"d{d}l{l}", None))
        parents: list[str] = []
        for l in range(n_levels):
            level = f"d{d}l{l}"
            members: list[str] = []
            if l == 0:
                for i in range(rng.randint(1, 3)):
                    member_id = f"d{d}_{l}_{i}"
                    dimension.members[member_id] = Member(member_id, level)
                    dimension.order.setdefault(level, []).append(member_id)
                    members.append(member_id)
            else:
                i = 0
                for parent in parents:
                    for _ in range(rng.randint(1, 3)):
                        member_id = f"d{d}_{l}_{i}"
                        i += 1
                        dimension.members[member_id] = Member(
                            member_id, level, parent
                        )
                        dimension.order.setdefault(level, []).append(member_id)
                        members.append(member_id)
            parents = members
        schema.dimensions[f"d{d}"] = dimension
    leaf_sets = [
        dimension.members_at(dimension.leaf_level)
        for dimension in schema.dimensions.values()
    ]
    names = list(schema.dimensions)
    for _ in range(rng.randint(1, max_rows)):
        coords = tuple(
            (names[i], rng.choice(leaf_sets[i])) for i in range(len(names))
        )
        value = quantize(Decimal(rng.randint(0, 1000)))
        schema.facts.append(FactRow(coords, (("m", value),)))
    return schema


# -- random notification configs -------------------------------------------------


def random_profiles(
    rng: random.Random, max_users: int = 20
) -> list[UserProfile]:
    profiles: list[UserProfile] = []
    for i in range(rng.randint(2, max_users)):
        superior = (
            profiles[rng.randrange(len(profiles))].user_id
            if profiles and rng.random() < 0.6
            else None
        )
        channels = rng.sample(CHANNELS, rng.randint(1, len(CHANNELS)))
        profiles.append(
            UserProfile(
                user_id=f"u{i}",
                unit=rng.choice(ORG_UNITS),
                level=rng.choice(DECISION_LEVELS),
                channels=tuple(channels),
                superior=superior,
            )
        )
    return profiles


def random_routing(rng: random.Random) -> list[RoutingRule]:
    rules: list[RoutingRule] = []
    for _ in range(rng.randint(1, 3)):
        targets = {
            (rng.choice(ORG_UNITS), rng.choice(DECISION_LEVELS))
            for _ in range(rng.randint(1, 4))
        }
        rules.append(
            RoutingRule(
                topic=rng.choice(["t0", "t1", "*"]),
                min_severity=rng.choice(("Notification", "Warning", "CriticalAlert")),
                targets=tuple(sorted(targets)),
            )
        )
    return rules


# -- slot-option-driven instance assembly ------------------------------------------


def assemble_instance(
    kb: Ontology, template: dsl.Template, rng: random.Random, name: str
) -> str:
    """Build rule text choosing classes/properties/operators only from
    ``list_slot_options``; literal values come from fixed pools."""
    var_count = 0
    var_classes: dict[str, str] = {}

    def fresh_var(prefix: str = "v") -> str:
        nonlocal var_count
        var_count += 1
        return f"{prefix}{var_count}"

    def make_constraints(owner_cls: str, depth: int) -> list[str]:
        lines: list[str] = []
        if depth > 2:
            return lines
        properties = dsl.list_slot_options(
            kb, dsl.OptionContext("property", owner_class=owner_cls)
        )
        for _ in range(rng.randint(0, 2)):
            if not properties:
                break
            relation_name = rng.choice(properties)
            relation = kb.relations[relation_name]
            phrase = " ".join(dsl.phrase_for_relation(relation_name))
            if relation.range_is_datatype:
                if relation_name == "hasValue":
                    lines.append(f'has value "{rng.randint(0, 99)}"')
                    continue
                if relation_name == "hasUnit":
                    lines.append('has unit "%"')
                    continue
                var = fresh_var("lit")
                ops = dsl.list_slot_options(
                    kb, dsl.OptionContext("operator", operand=relation.range)
                )
                if relation.range == "date" and rng.random() < 0.8:
                    op = rng.choice(ops)
                    rhs = (
                        f"now - {rng.randint(1, 30)} days"
                        if rng.random() < 0.7
                        else "2010-03-01"
                    )
                    lines.append(
                        f"has {phrase} {var} which {{ is {op} {rhs} }}"
                        if op != "equals"
                        else f"has {phrase} {var} which {{ equals {rhs} }}"
                    )
                elif relation.range == "decimal" and rng.random() < 0.8:
                    op = rng.choice(ops)
                    rhs = str(rng.randint(0, 500))
                    lines.append(
                        f"has {phrase} {var} which {{ is {op} {rhs} }}"
                        if op != "equals"
                        else f"has {phrase} {var} which {{ equals {rhs} }}"
                    )
                else:
                    lines.append(f"has {phrase} {var}")
                continue
            object_options = dsl.list_slot_options(
                kb, dsl.OptionContext("object-class", relation=relation_name)
            )
            if not object_options:
                continue
            cls = rng.choice(object_options)
            reusable = [v for v, c in var_classes.items() if c == cls]
            if reusable and rng.random() < 0.4:
                var = rng.choice(sorted(reusable))
            else:
                var = fresh_var()
                var_classes[var] = cls
            keyword = (
                f"is related to {var}"
                if relation_name == "relatedTo"
                else f"has {phrase} {var}"
            )
            nested = make_constraints(cls, depth + 1)
            if nested and rng.random() < 0.5:
                inner = " AND ".join(nested)
                lines.append(f"{keyword} which is {cls} which {{ {inner} }}")
            else:
                lines.append(f"{keyword} which is {cls}")
        return lines

    blocks: list[str] = []
    condition_vars: list[str] = []
    for slot in template.condition:
        options = dsl.list_slot_options(
            kb, dsl.OptionContext("condition-class", roots=slot.roots)
        )
        for _ in range(slot.min_count + rng.randint(0, 1)):
            cls = rng.choice(options)
            var = fresh_var("c")
            var_classes[var] = cls
            condition_vars.append(var)
            constraints = make_constraints(cls, 0)
            if constraints:
                blocks.append(
                    f"{var} is {cls} which {{ " + " AND ".join(constraints) + " }"
                )
            else:
                blocks.append(f"{var} is {cls}")

    result_blocks: list[str] = []
    for slot in template.result:
        options = dsl.list_slot_options(
            kb, dsl.OptionContext("result-class", roots=slot.roots)
        )
        for _ in range(slot.min_count):
            cls = rng.choice(options)
            var = fresh_var("r")
            parts: list[str] = []
            properties = dsl.list_slot_options(
                kb, dsl.OptionContext("property", owner_class=cls)
            )
            for ref in rng.sample(
                condition_vars, k=min(len(condition_vars), rng.randint(0, 2))
            ):
                if "relatedTo" in properties:
                    parts.append(f"is related to {ref}")
            if "hasValue" in properties:
                parts.append(f'has value "{rng.randint(0, 99)}"')
            if "hasUnit" in properties and rng.random() < 0.8:
                parts.append('has unit "%"')
            if parts:
                result_blocks.append(
                    f"{var} is {cls} which {{ " + " AND ".join(parts) + " }"
                )
            else:
                result_blocks.append(f"{var} is {cls}")

    text = (
        f"rule {name} uses {template.name}\nIF\n  "
        + " AND\n  ".join(blocks)
        + "\nTHEN\n  "
        + " AND\n  ".join(result_blocks)
        + "\n"
    )
    return text


# -- perturbed case-study kbs ---------------------------------------------------


def perturbed_case_kb(
    base: Ontology, rng: random.Random, now: date
) -> Ontology:
    """Randomised variants of the case-study kb: extra findings, phones,
    customers and periods with shuffled calendar anchors."""
    kb = base
    olap = Provenance("olap")
    retrieved = Provenance("retrieval")
    periods: list[str] = []
    offsets = rng.sample(range(0, 120), rng.randint(2, 5))
    for i, offset in enumerate(offsets):
        period_id = f"P{i}"
        kb = kb.with_individual(Individual(period_id, ("Dimension",)))
        kb = assert_fact(
            kb,
            Assertion(
                period_id, "hasDate",
                date(2010, 1, 1) + timedelta(days=offset), olap,
            ),
        )
        periods.append(period_id)

    def pick_brand() -> str:
        return "Nokia" if rng.random() < 0.6 else rng.choice(
            ["SonyEricsson", "Apple"]
        )

    for i in range(rng.randint(2, 7)):
        finding_id = f"RF{i}"
        cls = "Increase" if rng.random() < 0.8 else "Decrease"
        kb = kb.with_individual(Individual(finding_id, (cls,)))
        kb = assert_fact(
            kb,
            Assertion(
                finding_id, "hasValue",
                quantize(Decimal(rng.randint(-300, 300)) / 10), olap,
            ),
        )
        kb = assert_fact(kb, Assertion(finding_id, "hasUnit", "%", olap))
        kb = assert_fact(
            kb, Assertion(finding_id, "relatedTo", Ind("AmountSold"), olap)
        )
        if rng.random() < 0.95:
            kb = assert_fact(
                kb,
                Assertion(finding_id, "relatedTo", Ind(rng.choice(periods)), olap),
            )
        if rng.random() < 0.95:
            kb = assert_fact(
                kb,
                Assertion(finding_id, "relatedTo", Ind(pick_brand()), olap),
            )
    for i in range(rng.randint(1, 3)):
        phone_id = f"RP{i}"
        kb = kb.with_individual(Individual(phone_id, ("NewPhone",)))
        kb = assert_fact(
            kb,
            Assertion(
                phone_id, "dateOfAppearance",
                now - timedelta(days=rng.randint(0, 20)), retrieved,
            ),
        )
        if rng.random() < 0.95:
            kb = assert_fact(
                kb,
                Assertion(phone_id, "hasCharacteristic", Ind(pick_brand()), retrieved),
            )
    if rng.random() < 0.4:
        kb = kb.with_individual(Individual("ExtraCustomer", ("NewCustomer",)))
    return kb
