"""In-memory ontology knowledge base.

The store keeps four parts: class definitions arranged in an acyclic
subclass graph, typed relations, individuals with one or more classes, and
subject/relation/object assertions whose objects are either individuals or
typed literals (string, decimal, date, boolean).

Ontology values are immutable: every mutation helper returns a new
instance sharing unchanged parts, so a reference held by a reader is a
stable snapshot and can be handed to another thread freely.  The runtime
enforces the single-writer discipline by owning the "current" reference.

Decimals are normalised to four places internally; presentation concerns
(trailing zeros, locale separators) belong to renderers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from datetime import date
from decimal import Decimal, InvalidOperation, ROUND_HALF_UP
from typing import Any, Iterable, Union

from .errors import ParseError, UnknownEntityError, ValidationError

NAMESPACES = ("common", "notifying", "retrieval", "dm-dw")
DATATYPES = ("string", "decimal", "date", "boolean")

DECIMAL_PLACES = Decimal("0.0001")

Literal = Union[str, Decimal, date, bool]


def quantize(value: Decimal | int | str) -> Decimal:
    """Normalise a decimal to the internal 4-place representation."""
    return Decimal(value).quantize(DECIMAL_PLACES, rounding=ROUND_HALF_UP)


@dataclass(frozen=True)
class Ind:
    """Reference to an individual by id (distinguishes ids from string literals)."""

    id: str

    def __repr__(self) -> str:  # compact in test diffs
        return f"Ind({self.id})"


Obj = Union[Ind, Literal]


def literal_datatype(value: Literal) -> str:
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, Decimal):
        return "decimal"
    if isinstance(value, date):
        return "date"
    if isinstance(value, str):
        return "string"
    raise TypeError(f"unsupported literal type: {type(value)!r}")


def format_literal(value: Literal) -> str:
    """Canonical text form, parseable by :func:`parse_literal`."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Decimal):
        text = format(value.normalize(), "f")
        return text
    if isinstance(value, date):
        return value.isoformat()
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'


_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")
_DECIMAL_RE = re.compile(r"^-?\d+(\.\d+)?$")


def parse_literal(text: str) -> Literal | None:
    """Parse a literal token; None when the token is not literal-shaped."""
    if len(text) >= 2 and text[0] == '"' and text[-1] == '"':
        body = text[1:-1]
        return body.replace('\\"', '"').replace("\\\\", "\\")
    if text == "true":
        return True
    if text == "false":
        return False
    if _DATE_RE.match(text):
        try:
            return date.fromisoformat(text)
        except ValueError:
            return None
    if _DECIMAL_RE.match(text):
        try:
            return quantize(Decimal(text))
        except InvalidOperation:
            return None
    return None


def obj_key(obj: Obj) -> tuple:
    """Stable, orderable key for an assertion object."""
    if isinstance(obj, Ind):
        return ("i", obj.id)
    return ("l", literal_datatype(obj), format_literal(obj))


@dataclass(frozen=True)
class Provenance:
    """Where an assertion came from; derived assertions carry the rule id."""

    kind: str  # loaded | olap | retrieval | dm | derived
    rule: str | None = None

    def __post_init__(self):
        if self.kind == "derived" and not self.rule:
            raise ValueError("derived provenance requires a rule id")
        if self.kind != "derived" and self.rule:
            raise ValueError("only derived provenance carries a rule id")

    def __str__(self) -> str:
        return f"derived({self.rule})" if self.kind == "derived" else self.kind


LOADED = Provenance("loaded")


@dataclass(frozen=True)
class ClassDef:
    name: str
    parents: tuple[str, ...] = ()
    namespace: str = "common"


@dataclass(frozen=True)
class RelationDef:
    name: str
    domain: str
    range: str  # class name or one of DATATYPES

    @property
    def range_is_datatype(self) -> bool:
        return self.range in DATATYPES


@dataclass(frozen=True)
class Individual:
    id: str
    classes: tuple[str, ...]


@dataclass(frozen=True)
class Assertion:
    subject: str
    relation: str
    obj: Obj
    provenance: Provenance = LOADED

    def key(self) -> tuple:
        """Triple identity; provenance is metadata, not identity."""
        return (self.subject, self.relation, obj_key(self.obj))


@dataclass
class Ontology:
    """Immutable-by-convention snapshot of the whole knowledge base.

    ``derivations`` carries the engine's derivation records so that
    explanations can be produced from any snapshot; the kb layer treats
    them as opaque.
    """

    classes: dict[str, ClassDef] = field(default_factory=dict)
    relations: dict[str, RelationDef] = field(default_factory=dict)
    individuals: dict[str, Individual] = field(default_factory=dict)
    assertions: dict[tuple, Assertion] = field(default_factory=dict)
    axioms: tuple[str, ...] = ()
    derivations: tuple = ()

    # -- read side -----------------------------------------------------

    def ancestors(self, cls: str) -> frozenset[str]:
        """Reflexive-transitive superclasses of ``cls``."""
        if cls not in self.classes:
            raise UnknownEntityError(f"unknown class: {cls}")
        seen: set[str] = set()
        stack = [cls]
        while stack:
            current = stack.pop()
            if current in seen:
                continue
            seen.add(current)
            definition = self.classes.get(current)
            if definition is not None:
                stack.extend(definition.parents)
        return frozenset(seen)

    def descendants(self, cls: str) -> frozenset[str]:
        """Reflexive-transitive subclasses of ``cls``."""
        if cls not in self.classes:
            raise UnknownEntityError(f"unknown class: {cls}")
        children: dict[str, list[str]] = {}
        for definition in self.classes.values():
            for parent in definition.parents:
                children.setdefault(parent, []).append(definition.name)
        seen: set[str] = set()
        stack = [cls]
        while stack:
            current = stack.pop()
            if current in seen:
                continue
            seen.add(current)
            stack.extend(children.get(current, ()))
        return frozenset(seen)

    def is_subclass(self, cls: str, ancestor: str) -> bool:
        return ancestor in self.ancestors(cls)

    def instances_of(self, cls: str) -> list[str]:
        """Ids of individuals whose class set reaches ``cls``; sorted."""
        subtree = self.descendants(cls)
        return sorted(
            ind.id
            for ind in self.individuals.values()
            if any(c in subtree for c in ind.classes)
        )

    def has_assertion(self, subject: str, relation: str, obj: Obj) -> bool:
        return (subject, relation, obj_key(obj)) in self.assertions

    def assertions_about(self, relation: str) -> list[Assertion]:
        return sorted(
            (a for a in self.assertions.values() if a.relation == relation),
            key=lambda a: a.key(),
        )

    def assertions_of_subject(self, subject: str) -> list[Assertion]:
        return sorted(
            (a for a in self.assertions.values() if a.subject == subject),
            key=lambda a: a.key(),
        )

    def date_value(self, ind_id: str, relation: str = "hasDate") -> date | None:
        """Date literal attached to an individual, if any (used by builtins)."""
        for a in self.assertions_of_subject(ind_id):
            if a.relation == relation and isinstance(a.obj, date):
                return a.obj
        return None

    # -- write side (returns new snapshots) ----------------------------

    def with_class(self, definition: ClassDef) -> "Ontology":
        if definition.name in self.classes:
            raise ValidationError(f"duplicate class declaration: {definition.name}")
        return replace(self, classes={**self.classes, definition.name: definition})

    def with_relation(self, definition: RelationDef) -> "Ontology":
        if definition.name in self.relations:
            raise ValidationError(f"duplicate relation declaration: {definition.name}")
        return replace(self, relations={**self.relations, definition.name: definition})

    def with_individual(self, individual: Individual) -> "Ontology":
        if individual.id in self.individuals:
            raise ValidationError(f"duplicate individual declaration: {individual.id}")
        if not individual.classes:
            raise ValidationError(f"individual without classes: {individual.id}")
        normalised = Individual(individual.id, tuple(sorted(set(individual.classes))))
        return replace(
            self, individuals={**self.individuals, individual.id: normalised}
        )

    def with_membership(self, ind_id: str, cls: str) -> "Ontology":
        """Add a class to an existing individual (idempotent)."""
        existing = self.individuals.get(ind_id)
        if existing is None:
            raise UnknownEntityError(f"unknown individual: {ind_id}")
        if cls not in self.classes:
            raise UnknownEntityError(f"unknown class: {cls}")
        if cls in existing.classes:
            return self
        updated = Individual(ind_id, tuple(sorted({*existing.classes, cls})))
        return replace(self, individuals={**self.individuals, ind_id: updated})

    def with_axiom(self, rule_id: str) -> "Ontology":
        if rule_id in self.axioms:
            return self
        return replace(self, axioms=(*self.axioms, rule_id))

    def with_derivation(self, derivation) -> "Ontology":
        return replace(self, derivations=(*self.derivations, derivation))


# -- operations ---------------------------------------------------------


def is_instance_of(kb: Ontology, ind_id: str, cls: str) -> bool:
    """True when ``cls`` is reachable from any of the individual's classes."""
    individual = kb.individuals.get(ind_id)
    if individual is None:
        raise UnknownEntityError(f"unknown individual: {ind_id}")
    if cls not in kb.classes:
        raise UnknownEntityError(f"unknown class: {cls}")
    return any(cls in kb.ancestors(c) for c in individual.classes)


def check_assertion(kb: Ontology, a: Assertion) -> list[str]:
    """Domain/range violations for one assertion (empty when clean)."""
    problems: list[str] = []
    relation = kb.relations.get(a.relation)
    if relation is None:
        return [f"unknown relation: {a.relation}"]
    subject = kb.individuals.get(a.subject)
    if subject is None:
        problems.append(f"unknown subject individual: {a.subject}")
    elif relation.domain in kb.classes and not is_instance_of(
        kb, a.subject, relation.domain
    ):
        problems.append(
            f"domain violation: {a.subject} is not a {relation.domain}"
            f" (required by {a.relation})"
        )
    if relation.range_is_datatype:
        if isinstance(a.obj, Ind):
            problems.append(
                f"range violation: {a.relation} expects a {relation.range} literal,"
                f" got individual {a.obj.id}"
            )
        elif literal_datatype(a.obj) != relation.range:
            problems.append(
                f"datatype violation: {a.relation} expects {relation.range},"
                f" got {literal_datatype(a.obj)} {format_literal(a.obj)}"
            )
    else:
        if not isinstance(a.obj, Ind):
            problems.append(
                f"range violation: {a.relation} expects an individual of"
                f" {relation.range}, got literal {format_literal(a.obj)}"
            )
        elif a.obj.id not in kb.individuals:
            problems.append(f"unknown object individual: {a.obj.id}")
        elif relation.range in kb.classes and not is_instance_of(
            kb, a.obj.id, relation.range
        ):
            problems.append(
                f"range violation: {a.obj.id} is not a {relation.range}"
                f" (required by {a.relation})"
            )
    return problems


def assert_fact(kb: Ontology, a: Assertion) -> Ontology:
    """Store a validated assertion; identical triples are idempotent."""
    if isinstance(a.obj, Decimal):
        a = replace(a, obj=quantize(a.obj))
    problems = check_assertion(kb, a)
    if problems:
        raise ValidationError(f"rejected assertion {a.subject} {a.relation}", problems)
    key = a.key()
    if key in kb.assertions:
        return kb
    return replace(kb, assertions={**kb.assertions, key: a})


def validate(kb: Ontology) -> list[str]:
    """Re-check every stored item; returns one message per violation."""
    violations: list[str] = []

    # subclass graph: parents resolve, no cycles
    for definition in sorted(kb.classes.values(), key=lambda c: c.name):
        if definition.namespace not in NAMESPACES:
            violations.append(
                f"class {definition.name}: unknown namespace {definition.namespace}"
            )
        for parent in definition.parents:
            if parent not in kb.classes:
                violations.append(
                    f"class {definition.name}: unresolved parent {parent}"
                )
    violations.extend(_find_cycles(kb))

    for relation in sorted(kb.relations.values(), key=lambda r: r.name):
        if relation.domain not in kb.classes:
            violations.append(
                f"relation {relation.name}: unresolved domain {relation.domain}"
            )
        if not relation.range_is_datatype and relation.range not in kb.classes:
            violations.append(
                f"relation {relation.name}: unresolved range {relation.range}"
            )

    for individual in sorted(kb.individuals.values(), key=lambda i: i.id):
        if not individual.classes:
            violations.append(f"individual {individual.id}: no classes")
        for cls in individual.classes:
            if cls not in kb.classes:
                violations.append(
                    f"individual {individual.id}: unresolved class {cls}"
                )

    clean_graph = not violations
    for assertion in sorted(kb.assertions.values(), key=lambda a: a.key()):
        if clean_graph:
            for problem in check_assertion(kb, assertion):
                violations.append(
                    f"assertion {assertion.subject} {assertion.relation}: {problem}"
                )
        else:
            # With a broken schema the deep checks may raise; surface the
            # resolvable-name problems only.
            if assertion.relation not in kb.relations:
                violations.append(
                    f"assertion {assertion.subject} {assertion.relation}:"
                    f" unknown relation"
                )
            if assertion.subject not in kb.individuals:
                violations.append(
                    f"assertion {assertion.subject} {assertion.relation}:"
                    f" unknown subject individual"
                )
    return violations


def _find_cycles(kb: Ontology) -> list[str]:
    state: dict[str, int] = {}  # 0 in progress, 1 done

    def visit(name: str, trail: tuple[str, ...]) -> list[str]:
        if state.get(name) == 1:
            return []
        if state.get(name) == 0:
            cycle = trail[trail.index(name):] + (name,)
            return ["subclass cycle: " + " -> ".join(cycle)]
        state[name] = 0
        found: list[str] = []
        definition = kb.classes.get(name)
        if definition:
            for parent in definition.parents:
                if parent in kb.classes:
                    found.extend(visit(parent, trail + (name,)))
        state[name] = 1
        return found

    messages: list[str] = []
    for name in sorted(kb.classes):
        messages.extend(visit(name, ()))
    return messages


# -- pattern queries ----------------------------------------------------


@dataclass(frozen=True)
class ClassPattern:
    cls: str
    term: Union[str, Ind]  # "?x" variable or individual ref


@dataclass(frozen=True)
class PropPattern:
    relation: str
    subject: Union[str, Ind]
    obj: Union[str, Obj]  # "?x" variable, individual ref, or literal


Pattern = Union[ClassPattern, PropPattern]

_VAR_RE = re.compile(r"^\?[A-Za-z_][A-Za-z0-9_]*$")


def is_var(term: Any) -> bool:
    return isinstance(term, str) and bool(_VAR_RE.match(term))


def _check_pattern(kb: Ontology, patterns: Iterable[Pattern]) -> None:
    for p in patterns:
        if isinstance(p, ClassPattern):
            if p.cls not in kb.classes:
                raise UnknownEntityError(f"unknown class in pattern: {p.cls}")
        else:
            if p.relation not in kb.relations:
                raise UnknownEntityError(f"unknown relation in pattern: {p.relation}")


def solve(
    kb: Ontology, patterns: list[Pattern], binding: dict[str, Obj] | None = None
) -> list[tuple[dict[str, Obj], list[Assertion]]]:
    """All (binding, supporting assertions) pairs satisfying the pattern list.

    Class membership satisfies class patterns without contributing support
    assertions.  Deterministic: candidates are explored in sorted order.
    """
    _check_pattern(kb, patterns)
    results: list[tuple[dict[str, Obj], list[Assertion]]] = []

    def resolve(term: Union[str, Obj], env: dict[str, Obj]) -> Union[str, Obj]:
        if is_var(term) and term in env:
            return env[term]
        return term

    def walk(index: int, env: dict[str, Obj], support: list[Assertion]) -> None:
        if index == len(patterns):
            results.append((dict(env), list(support)))
            return
        pattern = patterns[index]
        if isinstance(pattern, ClassPattern):
            term = resolve(pattern.term, env)
            if is_var(term):
                for ind_id in kb.instances_of(pattern.cls):
                    env[term] = Ind(ind_id)
                    walk(index + 1, env, support)
                    del env[term]
            else:
                if isinstance(term, Ind) and is_instance_of(kb, term.id, pattern.cls):
                    walk(index + 1, env, support)
            return
        subject = resolve(pattern.subject, env)
        obj = resolve(pattern.obj, env)
        for assertion in kb.assertions_about(pattern.relation):
            if not is_var(subject) and assertion.subject != _as_id(subject):
                continue
            added: list[str] = []
            if is_var(subject):
                env[subject] = Ind(assertion.subject)
                added.append(subject)
            # re-resolve: the subject bind may have grounded a shared variable,
            # e.g. the self-referential pattern r(?x, ?x)
            bound_obj = resolve(obj, env) if is_var(obj) else obj
            if is_var(bound_obj):
                env[bound_obj] = assertion.obj
                added.append(bound_obj)
            elif obj_key(assertion.obj) != obj_key(_as_obj(bound_obj)):
                for name in added:
                    del env[name]
                continue
            support.append(assertion)
            walk(index + 1, env, support)
            support.pop()
            for name in added:
                del env[name]

    walk(0, dict(binding or {}), [])
    return results


def _as_id(term: Union[str, Obj]) -> str:
    if isinstance(term, Ind):
        return term.id
    raise ValidationError(f"subject position requires an individual, got {term!r}")


def _as_obj(term: Union[str, Obj]) -> Obj:
    return term


def query(kb: Ontology, patterns: list[Pattern]) -> list[dict[str, Obj]]:
    """Distinct variable bindings satisfying all patterns, sorted canonically."""
    seen: dict[tuple, dict[str, Obj]] = {}
    for env, _support in solve(kb, patterns):
        key = tuple(sorted((var, obj_key(value)) for var, value in env.items()))
        seen.setdefault(key, env)
    return [seen[key] for key in sorted(seen)]


_PATTERN_ATOM_RE = re.compile(
    r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*\(\s*([^,()]+?)\s*(?:,\s*(.+?)\s*)?\)\s*$"
)


def parse_pattern(text: str, kb: Ontology) -> list[Pattern]:
    """Parse a conjunctive pattern such as ``Phone(?x), hasValue(?x, ?v)``."""
    patterns: list[Pattern] = []
    depth = 0
    parts: list[str] = []
    current = ""
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append(current)
            current = ""
        else:
            current += ch
    if current.strip():
        parts.append(current)
    for part in parts:
        m = _PATTERN_ATOM_RE.match(part)
        if not m:
            raise ParseError(f"cannot parse pattern atom: {part.strip()!r}")
        name, first, second = m.group(1), m.group(2), m.group(3)
        if second is None:
            if name not in kb.classes:
                raise UnknownEntityError(f"unknown class in pattern: {name}")
            patterns.append(ClassPattern(name, _parse_term(first)))
        else:
            if name not in kb.relations:
                raise UnknownEntityError(f"unknown relation in pattern: {name}")
            patterns.append(
                PropPattern(name, _parse_term(first), _parse_term(second))
            )
    if not patterns:
        raise ParseError("empty pattern")
    return patterns


def _parse_term(token: str) -> Union[str, Obj]:
    token = token.strip()
    if is_var(token):
        return token
    literal = parse_literal(token)
    if literal is not None:
        return literal
    return Ind(token)
