"""Forward-chaining rule engine over kb snapshots.

Rules are safe in the description-logic sense: every variable must occur
in at least one non-builtin body atom, so bindings range only over named
individuals and literals already present in the kb.  Heads may introduce
new individuals through declared fresh variables; their ids are derived
deterministically from the rule id and the full body binding, which is
what makes saturation terminate: re-deriving the same conclusion produces
the identical individual and assertions, and an instantiation that has
already fired contributes nothing new.

``run_to_fixpoint`` keeps a memo of fired instantiations and re-matches
each round until no unfired instantiation remains; because assertions are
only ever added, the final assertion set does not depend on rule order.
The clock builtin ``now`` is an injected per-run date, never wall clock.

Comparisons coerce individuals to dates through their ``hasDate`` value
(configurable), which is how calendar-tagged dimension members take part
in date arithmetic.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from datetime import date, timedelta
from decimal import Decimal
from typing import Callable, Union

from .errors import FiringCapError, UnknownEntityError, ValidationError
from .kb import (
    Assertion,
    ClassPattern,
    Ind,
    Individual,
    Literal,
    Obj,
    Ontology,
    PropPattern,
    Provenance,
    assert_fact,
    format_literal,
    obj_key,
    quantize,
    solve,
)

DATE_VALUE_RELATION = "hasDate"
DEFAULT_FIRING_CAP = 10_000


@dataclass(frozen=True)
class Var:
    name: str

    def __repr__(self) -> str:
        return f"?{self.name}"


Term = Union[Var, Ind, Literal]


@dataclass(frozen=True)
class NowExpr:
    """The injected per-run clock date."""


@dataclass(frozen=True)
class DateMinusDays:
    base: "Expr"
    days: int


Expr = Union[Term, NowExpr, DateMinusDays]


@dataclass(frozen=True)
class ClassAtom:
    cls: str
    term: Term


@dataclass(frozen=True)
class PropAtom:
    relation: str
    subject: Term
    obj: Term


GREATER_THAN = "greater-than"
LESS_THAN = "less-than"
EQUALS = "equals"
CMP_OPS = (GREATER_THAN, LESS_THAN, EQUALS)


@dataclass(frozen=True)
class CmpAtom:
    op: str
    left: Expr
    right: Expr


Atom = Union[ClassAtom, PropAtom, CmpAtom]


@dataclass(frozen=True)
class FreshDecl:
    """Head variable that denotes a new individual created on firing."""

    var: str
    cls: str
    id_prefix: str


@dataclass(frozen=True)
class Rule:
    id: str
    body: tuple[Atom, ...]
    head: tuple[Atom, ...]
    fresh: tuple[FreshDecl, ...] = ()


Binding = dict[str, Obj]


@dataclass(frozen=True)
class Derivation:
    """Record of one firing: what was concluded, from which matched facts."""

    rule: str
    binding: tuple[tuple[str, Obj], ...]
    produced: tuple[Assertion, ...]
    support: tuple[Assertion, ...]
    created: tuple[tuple[str, str], ...] = ()  # (individual id, class)

    def binding_map(self) -> Binding:
        return dict(self.binding)


# -- safety -------------------------------------------------------------


def _atom_vars(atom: Atom) -> set[str]:
    names: set[str] = set()
    if isinstance(atom, ClassAtom):
        if isinstance(atom.term, Var):
            names.add(atom.term.name)
    elif isinstance(atom, PropAtom):
        for term in (atom.subject, atom.obj):
            if isinstance(term, Var):
                names.add(term.name)
    else:
        names |= _expr_vars(atom.left) | _expr_vars(atom.right)
    return names


def _expr_vars(expr: Expr) -> set[str]:
    if isinstance(expr, Var):
        return {expr.name}
    if isinstance(expr, DateMinusDays):
        return _expr_vars(expr.base)
    return set()


def check_dl_safe(rule: Rule, kb: Ontology) -> list[str]:
    """Safety and schema-resolution violations; empty means the rule is ok."""
    violations: list[str] = []
    if not rule.body:
        violations.append("empty body")
    if not rule.head:
        violations.append("empty head")

    anchored: set[str] = set()
    for atom in rule.body:
        if not isinstance(atom, CmpAtom):
            anchored |= _atom_vars(atom)
    if not anchored and rule.body:
        if all(isinstance(a, CmpAtom) for a in rule.body):
            violations.append("body consists only of builtin atoms")

    all_body_vars: set[str] = set()
    for atom in rule.body:
        all_body_vars |= _atom_vars(atom)
    for name in sorted(all_body_vars - anchored):
        violations.append(f"unsafe variable ?{name}: occurs only in builtin atoms")

    fresh_names = {f.var for f in rule.fresh}
    head_vars: set[str] = set()
    for atom in rule.head:
        if isinstance(atom, CmpAtom):
            violations.append("builtin atom not allowed in head")
            continue
        head_vars |= _atom_vars(atom)
    for name in sorted(head_vars - anchored - fresh_names):
        violations.append(f"unsafe variable ?{name}: head variable not bound by body")

    for atom in rule.body + rule.head:
        violations.extend(_check_schema(atom, kb))
    for decl in rule.fresh:
        if decl.cls not in kb.classes:
            violations.append(f"fresh individual class not declared: {decl.cls}")
    return violations


def _check_schema(atom: Atom, kb: Ontology) -> list[str]:
    if isinstance(atom, ClassAtom):
        if atom.cls not in kb.classes:
            return [f"unknown class in atom: {atom.cls}"]
    elif isinstance(atom, PropAtom):
        if atom.relation not in kb.relations:
            return [f"unknown relation in atom: {atom.relation}"]
    else:
        if atom.op not in CMP_OPS:
            return [f"unknown builtin: {atom.op}"]
    return []


# -- matching -----------------------------------------------------------


class BuiltinTypeError(Exception):
    """Raised while evaluating a builtin over incompatible value types."""


def _eval_expr(expr: Expr, binding: Binding, kb: Ontology, now: date | None,
               date_relation: str) -> Literal:
    if isinstance(expr, Var):
        if expr.name not in binding:
            raise BuiltinTypeError(f"unbound variable ?{expr.name} in builtin")
        return _coerce(binding[expr.name], kb, date_relation)
    if isinstance(expr, NowExpr):
        if now is None:
            raise BuiltinTypeError("now() used without an injected clock date")
        return now
    if isinstance(expr, DateMinusDays):
        base = _eval_expr(expr.base, binding, kb, now, date_relation)
        if not isinstance(base, date):
            raise BuiltinTypeError("date-minus-days requires a date operand")
        return base - timedelta(days=expr.days)
    if isinstance(expr, Ind):
        return _coerce(expr, kb, date_relation)
    return expr


def _coerce(value: Obj, kb: Ontology, date_relation: str) -> Literal:
    if isinstance(value, Ind):
        attached = kb.date_value(value.id, date_relation)
        if attached is None:
            raise BuiltinTypeError(
                f"individual {value.id} has no {date_relation} value for comparison"
            )
        return attached
    return value


def _apply_cmp(op: str, left: Literal, right: Literal) -> bool:
    if isinstance(left, bool) or isinstance(right, bool):
        if op == EQUALS and isinstance(left, bool) and isinstance(right, bool):
            return left == right
        raise BuiltinTypeError(f"{op} not defined on booleans")
    if isinstance(left, Decimal) and isinstance(right, Decimal):
        pass
    elif isinstance(left, date) and isinstance(right, date):
        pass
    elif isinstance(left, str) and isinstance(right, str):
        if op != EQUALS:
            raise BuiltinTypeError(f"{op} not defined on strings")
    else:
        raise BuiltinTypeError(
            f"type mismatch in {op}: {type(left).__name__} vs {type(right).__name__}"
        )
    if op == GREATER_THAN:
        return left > right
    if op == LESS_THAN:
        return left < right
    return left == right


def _as_pattern_term(term: Term) -> Union[str, Obj]:
    if isinstance(term, Var):
        return f"?{term.name}"
    return term


def match(
    rule: Rule,
    kb: Ontology,
    now: date | None = None,
    diagnostics: list[str] | None = None,
    date_relation: str = DATE_VALUE_RELATION,
) -> list[tuple[Binding, tuple[Assertion, ...]]]:
    """Bindings satisfying the whole body, with their support assertions.

    Builtin type errors abort the affected candidate binding and are
    reported through ``diagnostics``; they never abort the match.
    """
    structural: list = []
    builtins: list[CmpAtom] = []
    for atom in rule.body:
        if isinstance(atom, ClassAtom):
            structural.append(ClassPattern(atom.cls, _as_pattern_term(atom.term)))
        elif isinstance(atom, PropAtom):
            structural.append(
                PropPattern(
                    atom.relation,
                    _as_pattern_term(atom.subject),
                    _as_pattern_term(atom.obj),
                )
            )
        else:
            builtins.append(atom)

    found: dict[tuple, tuple[Binding, tuple[Assertion, ...]]] = {}
    for env, support in solve(kb, structural):
        binding = {name[1:]: value for name, value in env.items()}
        ok = True
        for cmp_atom in builtins:
            try:
                left = _eval_expr(cmp_atom.left, binding, kb, now, date_relation)
                right = _eval_expr(cmp_atom.right, binding, kb, now, date_relation)
                if not _apply_cmp(cmp_atom.op, left, right):
                    ok = False
                    break
            except BuiltinTypeError as exc:
                if diagnostics is not None:
                    diagnostics.append(
                        f"rule {rule.id}: builtin skipped binding"
                        f" {format_binding(binding)}: {exc}"
                    )
                ok = False
                break
        if ok:
            key = binding_key(binding)
            if key not in found:
                # keep deduplicated support in first-match order
                dedup: list[Assertion] = []
                seen: set[tuple] = set()
                for assertion in support:
                    if assertion.key() not in seen:
                        seen.add(assertion.key())
                        dedup.append(assertion)
                found[key] = (binding, tuple(dedup))
    return [found[key] for key in sorted(found)]


def binding_key(binding: Binding) -> tuple:
    return tuple(sorted((name, obj_key(value)) for name, value in binding.items()))


def format_binding(binding: Binding) -> str:
    parts = []
    for name in sorted(binding):
        value = binding[name]
        text = value.id if isinstance(value, Ind) else format_literal(value)
        parts.append(f"?{name}={text}")
    return "{" + ", ".join(parts) + "}"


# -- firing -------------------------------------------------------------


def skolem_id(id_prefix: str, rule_id: str, binding: Binding) -> str:
    """Deterministic id for a fresh head individual."""
    payload = rule_id + "|" + repr(binding_key(binding))
    digest = hashlib.sha256(payload.encode("utf-8")).hexdigest()[:10]
    return f"{id_prefix}_{digest}"


def fire(
    rule: Rule,
    binding: Binding,
    kb: Ontology,
    support: tuple[Assertion, ...] = (),
) -> tuple[Ontology, Derivation]:
    """Apply the head under ``binding``; returns the updated kb and the record.

    Conclusions that already hold are skipped, so re-firing the same
    instantiation yields an empty-produced derivation and leaves the kb
    unchanged.
    """
    provenance = Provenance("derived", rule.id)
    env: Binding = dict(binding)
    created: list[tuple[str, str]] = []
    for decl in rule.fresh:
        new_id = skolem_id(decl.id_prefix, rule.id, binding)
        env[decl.var] = Ind(new_id)
        if new_id not in kb.individuals:
            kb = kb.with_individual(Individual(new_id, (decl.cls,)))
            created.append((new_id, decl.cls))

    produced: list[Assertion] = []
    for atom in rule.head:
        if isinstance(atom, ClassAtom):
            target = _ground_term(atom.term, env)
            if not isinstance(target, Ind):
                raise ValidationError(
                    f"rule {rule.id}: class atom in head over a literal"
                )
            if not _has_membership(kb, target.id, atom.cls):
                kb = kb.with_membership(target.id, atom.cls)
                created.append((target.id, atom.cls))
        elif isinstance(atom, PropAtom):
            subject = _ground_term(atom.subject, env)
            obj = _ground_term(atom.obj, env)
            if not isinstance(subject, Ind):
                raise ValidationError(
                    f"rule {rule.id}: head subject must be an individual"
                )
            assertion = Assertion(subject.id, atom.relation, obj, provenance)
            if not kb.has_assertion(subject.id, atom.relation, obj):
                kb = assert_fact(kb, assertion)
                produced.append(assertion)
        else:
            raise ValidationError(f"rule {rule.id}: builtin atom in head")

    derivation = Derivation(
        rule=rule.id,
        binding=tuple(sorted(binding.items())),
        produced=tuple(produced),
        support=tuple(support),
        created=tuple(created),
    )
    if produced or created:
        kb = kb.with_derivation(derivation)
    return kb, derivation


def _ground_term(term: Term, env: Binding) -> Obj:
    if isinstance(term, Var):
        if term.name not in env:
            raise ValidationError(f"unbound head variable ?{term.name}")
        return env[term.name]
    if isinstance(term, Decimal):
        return quantize(term)
    return term


def _has_membership(kb: Ontology, ind_id: str, cls: str) -> bool:
    individual = kb.individuals.get(ind_id)
    return individual is not None and cls in individual.classes


# -- saturation ---------------------------------------------------------


def run_to_fixpoint(
    kb: Ontology,
    rules: list[Rule],
    now: date | None = None,
    max_firings: int = DEFAULT_FIRING_CAP,
    on_firing: Callable[[Derivation], None] | None = None,
    diagnostics: list[str] | None = None,
    date_relation: str = DATE_VALUE_RELATION,
) -> tuple[Ontology, list[Derivation]]:
    """Fire every rule until no unfired instantiation remains.

    Each (rule, binding) pair fires at most once; rounds continue while
    the previous round changed the kb, so instantiations enabled by new
    conclusions are picked up.  Raises :class:`FiringCapError` past
    ``max_firings``, naming the trailing firings.
    """
    seen_ids: set[str] = set()
    for rule in rules:
        if rule.id in seen_ids:
            raise ValidationError(f"duplicate rule id: {rule.id}")
        seen_ids.add(rule.id)
        problems = check_dl_safe(rule, kb)
        if problems:
            raise ValidationError(f"rule {rule.id} is not safe", problems)

    fired: set[tuple[str, tuple]] = set()
    derivations: list[Derivation] = []
    recent: list[str] = []
    total = 0
    progress = True
    while progress:
        progress = False
        for rule in sorted(rules, key=lambda r: r.id):
            for binding, support in match(
                rule, kb, now=now, diagnostics=diagnostics,
                date_relation=date_relation,
            ):
                key = (rule.id, binding_key(binding))
                if key in fired:
                    continue
                fired.add(key)
                total += 1
                recent.append(f"{rule.id} {format_binding(binding)}")
                if len(recent) > 10:
                    recent.pop(0)
                if total > max_firings:
                    raise FiringCapError(max_firings, recent)
                kb, derivation = fire(rule, binding, kb, support)
                derivations.append(derivation)
                if on_firing is not None:
                    on_firing(derivation)
                if derivation.produced or derivation.created:
                    progress = True
    return kb, derivations


# -- explanation --------------------------------------------------------


@dataclass(frozen=True)
class ExplainNode:
    """Tree node: a derived assertion with its supporting sub-trees, or a leaf."""

    assertion: Assertion
    derivation: Derivation | None = None
    children: tuple["ExplainNode", ...] = ()

    def leaves(self) -> list[Assertion]:
        if self.derivation is None:
            return [self.assertion]
        collected: list[Assertion] = []
        seen: set[tuple] = set()
        for child in self.children:
            for leaf in child.leaves():
                if leaf.key() not in seen:
                    seen.add(leaf.key())
                    collected.append(leaf)
        return collected

    def depth(self) -> int:
        if self.derivation is None:
            return 0
        return 1 + max((child.depth() for child in self.children), default=0)


def explain(kb: Ontology, assertion: Assertion) -> ExplainNode:
    """Derivation tree for an assertion; a non-derived assertion is a leaf."""
    if assertion.key() not in kb.assertions:
        raise UnknownEntityError(
            f"assertion not in kb: {assertion.subject} {assertion.relation}"
        )
    stored = kb.assertions[assertion.key()]
    return _explain_assertion(kb, stored, frozenset())


def _explain_assertion(
    kb: Ontology, assertion: Assertion, visiting: frozenset
) -> ExplainNode:
    if assertion.provenance.kind != "derived":
        return ExplainNode(assertion)
    if assertion.key() in visiting:  # defensive: cannot happen with monotonic growth
        return ExplainNode(assertion)
    derivation = _derivation_of(kb, assertion)
    if derivation is None:
        return ExplainNode(assertion)
    children = tuple(
        _explain_assertion(kb, kb.assertions.get(s.key(), s), visiting | {assertion.key()})
        for s in derivation.support
    )
    return ExplainNode(assertion, derivation, children)


def _derivation_of(kb: Ontology, assertion: Assertion) -> Derivation | None:
    for derivation in kb.derivations:
        for produced in derivation.produced:
            if produced.key() == assertion.key():
                return derivation
    return None


def explain_individual(kb: Ontology, ind_id: str) -> ExplainNode | None:
    """Tree rooted at the derivation that created ``ind_id``, if any.

    The root uses the first produced assertion of that derivation as its
    anchor; findings always carry at least one produced property.
    """
    for derivation in kb.derivations:
        if any(created_id == ind_id for created_id, _cls in derivation.created):
            anchor: Assertion | None = None
            for produced in derivation.produced:
                if produced.subject == ind_id:
                    anchor = produced
                    break
            if anchor is None and derivation.produced:
                anchor = derivation.produced[0]
            if anchor is None:
                return None
            children = tuple(
                _explain_assertion(kb, kb.assertions.get(s.key(), s), frozenset())
                for s in derivation.support
            )
            return ExplainNode(anchor, derivation, children)
    return None
