"""Business-rule templates and template-instance rules.

The textual form is a constrained, near-natural-language IF/THEN syntax.
A *template* (``.brt``) fixes which kinds of things a rule may mention and
how many; a *rule instance* (``.brl``) fills the template with concrete
classes, variables and constraints and compiles into an engine rule.

Template form::

    template GeneralFinding
    IF
      slot x : DomainSpecificElement | Finding min 1
    THEN
      slot y : Finding min 1

Rule form (indentation is cosmetic; AND separates siblings)::

    rule NewPhonePromotion uses GeneralFinding
    IF
      found_phone is NewPhone which {
        has characteristic brand which is PhoneBrand AND
        has date of appearance found_date which {
          is greater than now - 14 days
        }
      } AND
      new_customer is NewCustomer
    THEN
      promotion_discount is DiscountPrice which {
        is related to found_phone AND
        has value "10" AND
        has unit "%"
      }

Sharing a variable name (``brand`` above) across blocks expresses
coreference; the compiler unifies equal names into one rule variable.
Property phrases resolve against the schema: ``has characteristic`` →
``hasCharacteristic``, ``has date of appearance`` → ``dateOfAppearance``,
``is related to`` → ``relatedTo``.  A class annotation on a variable whose
property is literal-typed (such as a date) is kept for documentation but
compiles to nothing: calendar-typed values take part in date arithmetic
as plain dates.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import date
from decimal import Decimal, InvalidOperation
from typing import Optional, Union

from . import engine
from .errors import ParseError, UnknownEntityError, ValidationError
from .kb import Ontology, quantize

CONDITION_ROOTS = ("DomainSpecificElement", "Finding")
RESULT_ROOTS = ("Finding",)
RELATED_TO = "relatedTo"
VALUE_RELATION = "hasValue"
UNIT_RELATION = "hasUnit"

STOP_WORDS = {"which", "AND", "is", "min"}
RESERVED = {
    "IF", "THEN", "AND", "which", "is", "has", "uses", "rule", "template",
    "slot", "min", "now", "days", "equals", "related", "to",
}


# -- tokens ---------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
      (?P<WS>[ \t]+)
    | (?P<NL>\r?\n)
    | (?P<COMMENT>\#[^\n]*)
    | (?P<STRING>"(?:[^"\\]|\\.)*")
    | (?P<DATE>\d{4}-\d{2}-\d{2})
    | (?P<NUMBER>\d+(?:\.\d+)?)
    | (?P<WORD>[A-Za-z_][A-Za-z0-9_]*)
    | (?P<LBRACE>\{)
    | (?P<RBRACE>\})
    | (?P<LPAREN>\()
    | (?P<RPAREN>\))
    | (?P<PIPE>\|)
    | (?P<COLON>:)
    | (?P<MINUS>-)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    line = 1
    col = 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup or ""
        value = m.group()
        if kind == "NL":
            line += 1
            col = 1
        else:
            if kind not in ("WS", "COMMENT"):
                tokens.append(Token(kind, value, line, col))
            col += len(value)
        pos = m.end()
    tokens.append(Token("EOF", "", line, col))
    return tokens


class _Cursor:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.index = 0

    def peek(self, offset: int = 0) -> Token:
        return self.tokens[min(self.index + offset, len(self.tokens) - 1)]

    def next(self) -> Token:
        token = self.peek()
        if token.kind != "EOF":
            self.index += 1
        return token

    def at_word(self, text: str, offset: int = 0) -> bool:
        token = self.peek(offset)
        return token.kind == "WORD" and token.text == text

    def expect_word(self, text: str) -> Token:
        token = self.peek()
        if not (token.kind == "WORD" and token.text == text):
            raise ParseError(
                f"expected {text!r}, found {token.text or token.kind!r}",
                token.line,
                token.col,
            )
        return self.next()

    def expect_kind(self, kind: str) -> Token:
        token = self.peek()
        if token.kind != kind:
            raise ParseError(
                f"expected {kind}, found {token.text or token.kind!r}",
                token.line,
                token.col,
            )
        return self.next()

    def expect_name(self, role: str) -> Token:
        token = self.peek()
        if token.kind != "WORD" or token.text in RESERVED:
            raise ParseError(
                f"expected a {role} name, found {token.text or token.kind!r}",
                token.line,
                token.col,
            )
        return self.next()


# -- AST ------------------------------------------------------------------


@dataclass(frozen=True)
class VarRef:
    name: str


@dataclass(frozen=True)
class NowMinusDays:
    days: int


Rhs = Union[VarRef, NowMinusDays, Decimal, date, str]


@dataclass
class ComparisonConstraint:
    op: str  # engine.GREATER_THAN / LESS_THAN / EQUALS
    rhs: Rhs
    pos: tuple[int, int] = field(default=(0, 0), compare=False)


@dataclass
class ValueSetting:
    text: str
    pos: tuple[int, int] = field(default=(0, 0), compare=False)


@dataclass
class UnitSetting:
    text: str
    pos: tuple[int, int] = field(default=(0, 0), compare=False)


@dataclass
class PropertyConstraint:
    phrase: tuple[str, ...]  # ("related", "to"), ("characteristic",), ...
    var: str
    cls: Optional[str] = None
    annotation: Optional[str] = field(default=None, compare=False)
    nested: list["Constraint"] = field(default_factory=list)
    relation: Optional[str] = field(default=None, compare=False)  # set by validation
    pos: tuple[int, int] = field(default=(0, 0), compare=False)


Constraint = Union[PropertyConstraint, ComparisonConstraint, ValueSetting, UnitSetting]


@dataclass
class SlotBinding:
    var: str
    cls: str
    annotation: Optional[str] = field(default=None, compare=False)
    constraints: list[Constraint] = field(default_factory=list)
    pos: tuple[int, int] = field(default=(0, 0), compare=False)


@dataclass
class TemplateInstance:
    name: str
    template: str
    condition: list[SlotBinding]
    result: list[SlotBinding]


@dataclass(frozen=True)
class TemplateSlot:
    name: str
    roots: tuple[str, ...]
    min_count: int


@dataclass(frozen=True)
class Template:
    name: str
    condition: tuple[TemplateSlot, ...]
    result: tuple[TemplateSlot, ...]


# -- template parsing ------------------------------------------------------


def parse_template(text: str, kb: Ontology | None = None) -> Template:
    """Parse a ``.brt`` template; with a schema, validate its root classes."""
    cursor = _Cursor(_tokenize(text))
    cursor.expect_word("template")
    name = cursor.expect_kind("WORD").text
    cursor.expect_word("IF")
    condition = _parse_template_slots(cursor, stop="THEN")
    cursor.expect_word("THEN")
    result = _parse_template_slots(cursor, stop=None)
    token = cursor.peek()
    if token.kind != "EOF":
        raise ParseError(f"unexpected trailing input: {token.text!r}", token.line, token.col)
    if not condition:
        raise ValidationError(
            f"template {name}: empty condition block violates min cardinality 1"
        )
    if not result:
        raise ValidationError(
            f"template {name}: empty result block violates min cardinality 1"
        )
    template = Template(name, tuple(condition), tuple(result))
    if kb is not None:
        problems = validate_template(template, kb)
        if problems:
            raise ValidationError(f"template {name}", problems)
    return template


def _parse_template_slots(cursor: _Cursor, stop: str | None) -> list[TemplateSlot]:
    slots: list[TemplateSlot] = []
    while cursor.at_word("slot"):
        cursor.next()
        name = cursor.expect_name("slot").text
        cursor.expect_kind("COLON")
        roots = [cursor.expect_name("class").text]
        while cursor.peek().kind == "PIPE":
            cursor.next()
            roots.append(cursor.expect_name("class").text)
        cursor.expect_word("min")
        min_token = cursor.expect_kind("NUMBER")
        min_count = int(min_token.text)
        if min_count < 1:
            raise ValidationError(
                f"slot {name}: min cardinality 1 is the lower bound, got {min_count}"
            )
        slots.append(TemplateSlot(name, tuple(roots), min_count))
    return slots


def validate_template(template: Template, kb: Ontology) -> list[str]:
    problems: list[str] = []
    for group, slots, allowed_roots in (
        ("condition", template.condition, CONDITION_ROOTS),
        ("result", template.result, RESULT_ROOTS),
    ):
        for slot in slots:
            for root in slot.roots:
                if root not in kb.classes:
                    problems.append(
                        f"{group} slot {slot.name}: unknown class {root}"
                    )
                    continue
                if not any(
                    anchor in kb.classes and anchor in kb.ancestors(root)
                    for anchor in allowed_roots
                ):
                    problems.append(
                        f"{group} slot {slot.name}: class {root} is outside the"
                        f" {' / '.join(allowed_roots)} subtrees"
                    )
    return problems


def pretty_template(template: Template) -> str:
    lines = [f"template {template.name}", "IF"]
    for slot in template.condition:
        lines.append(f"  slot {slot.name} : {' | '.join(slot.roots)} min {slot.min_count}")
    lines.append("THEN")
    for slot in template.result:
        lines.append(f"  slot {slot.name} : {' | '.join(slot.roots)} min {slot.min_count}")
    return "\n".join(lines) + "\n"


# -- rule parsing ------------------------------------------------------------


def parse_rule_text(text: str) -> TemplateInstance:
    """Structural parse of a ``.brl`` rule; no schema checks yet."""
    cursor = _Cursor(_tokenize(text))
    cursor.expect_word("rule")
    name = cursor.expect_kind("WORD").text
    cursor.expect_word("uses")
    template_name = cursor.expect_kind("WORD").text
    cursor.expect_word("IF")
    condition = _parse_slot_blocks(cursor)
    cursor.expect_word("THEN")
    result = _parse_slot_blocks(cursor)
    token = cursor.peek()
    if token.kind != "EOF":
        raise ParseError(f"unexpected trailing input: {token.text!r}", token.line, token.col)
    if not condition:
        raise ValidationError(
            f"rule {name}: empty IF section violates min cardinality 1"
        )
    if not result:
        raise ValidationError(
            f"rule {name}: empty THEN section violates min cardinality 1"
        )
    return TemplateInstance(name, template_name, condition, result)


def _parse_slot_blocks(cursor: _Cursor) -> list[SlotBinding]:
    blocks: list[SlotBinding] = []
    while True:
        token = cursor.peek()
        if token.kind != "WORD" or token.text in ("THEN",) or token.kind == "EOF":
            break
        blocks.append(_parse_slot_block(cursor))
        if cursor.at_word("AND"):
            cursor.next()
            continue
        break
    return blocks


def _parse_slot_block(cursor: _Cursor) -> SlotBinding:
    var_token = cursor.expect_name("variable")
    cursor.expect_word("is")
    cls = cursor.expect_name("class").text
    annotation = _parse_annotation(cursor)
    constraints: list[Constraint] = []
    if cursor.at_word("which"):
        cursor.next()
        cursor.expect_kind("LBRACE")
        constraints = _parse_constraints(cursor)
        cursor.expect_kind("RBRACE")
    return SlotBinding(
        var=var_token.text,
        cls=cls,
        annotation=annotation,
        constraints=constraints,
        pos=(var_token.line, var_token.col),
    )


def _parse_annotation(cursor: _Cursor) -> Optional[str]:
    if cursor.peek().kind != "LPAREN":
        return None
    cursor.next()
    words: list[str] = []
    while cursor.peek().kind == "WORD":
        words.append(cursor.next().text)
    cursor.expect_kind("RPAREN")
    return " ".join(words)


def _parse_constraints(cursor: _Cursor) -> list[Constraint]:
    constraints: list[Constraint] = [_parse_constraint(cursor)]
    while cursor.at_word("AND"):
        cursor.next()
        constraints.append(_parse_constraint(cursor))
    return constraints


def _parse_constraint(cursor: _Cursor) -> Constraint:
    token = cursor.peek()
    if cursor.at_word("is"):
        cursor.next()
        if cursor.at_word("related"):
            cursor.next()
            cursor.expect_word("to")
            return _parse_property_tail(cursor, ("related", "to"), token)
        if cursor.at_word("greater"):
            cursor.next()
            cursor.expect_word("than")
            return ComparisonConstraint(
                engine.GREATER_THAN, _parse_rhs(cursor), (token.line, token.col)
            )
        if cursor.at_word("less"):
            cursor.next()
            cursor.expect_word("than")
            return ComparisonConstraint(
                engine.LESS_THAN, _parse_rhs(cursor), (token.line, token.col)
            )
        bad = cursor.peek()
        raise ParseError(
            f"expected 'related to', 'greater than' or 'less than' after 'is',"
            f" found {bad.text!r}",
            bad.line,
            bad.col,
        )
    if cursor.at_word("equals"):
        cursor.next()
        return ComparisonConstraint(
            engine.EQUALS, _parse_rhs(cursor), (token.line, token.col)
        )
    if cursor.at_word("has"):
        cursor.next()
        if cursor.at_word("value") and cursor.peek(1).kind == "STRING":
            cursor.next()
            raw = cursor.expect_kind("STRING").text
            return ValueSetting(_unquote(raw), (token.line, token.col))
        if cursor.at_word("unit") and cursor.peek(1).kind == "STRING":
            cursor.next()
            raw = cursor.expect_kind("STRING").text
            return UnitSetting(_unquote(raw), (token.line, token.col))
        words: list[str] = []
        while cursor.peek().kind == "WORD" and cursor.peek().text not in STOP_WORDS:
            words.append(cursor.next().text)
        if len(words) < 2:
            bad = cursor.peek()
            raise ParseError(
                "'has' requires a property phrase followed by a variable",
                bad.line,
                bad.col,
            )
        return _parse_property_tail_with_var(
            cursor, tuple(words[:-1]), words[-1], token
        )
    raise ParseError(
        f"expected a constraint, found {token.text or token.kind!r}",
        token.line,
        token.col,
    )


def _parse_property_tail(
    cursor: _Cursor, phrase: tuple[str, ...], start: Token
) -> PropertyConstraint:
    var = cursor.expect_name("variable").text
    return _parse_property_tail_with_var(cursor, phrase, var, start)


def _parse_property_tail_with_var(
    cursor: _Cursor, phrase: tuple[str, ...], var: str, start: Token
) -> PropertyConstraint:
    cls: Optional[str] = None
    annotation: Optional[str] = None
    nested: list[Constraint] = []
    if cursor.at_word("which"):
        cursor.next()
        if cursor.at_word("is") and cursor.peek(1).kind == "WORD" and not (
            cursor.at_word("related", 1) or cursor.at_word("greater", 1)
            or cursor.at_word("less", 1)
        ):
            cursor.next()
            cls = cursor.expect_name("class").text
            annotation = _parse_annotation(cursor)
            if cursor.at_word("which"):
                cursor.next()
                cursor.expect_kind("LBRACE")
                nested = _parse_constraints(cursor)
                cursor.expect_kind("RBRACE")
        elif cursor.peek().kind == "LBRACE":
            cursor.next()
            nested = _parse_constraints(cursor)
            cursor.expect_kind("RBRACE")
        else:
            bad = cursor.peek()
            raise ParseError(
                f"expected 'is <Class>' or a '{{' block after 'which',"
                f" found {bad.text!r}",
                bad.line,
                bad.col,
            )
    return PropertyConstraint(
        phrase=phrase,
        var=var,
        cls=cls,
        annotation=annotation,
        nested=nested,
        pos=(start.line, start.col),
    )


def _parse_rhs(cursor: _Cursor) -> Rhs:
    token = cursor.peek()
    if cursor.at_word("now"):
        cursor.next()
        cursor.expect_kind("MINUS")
        days = int(cursor.expect_kind("NUMBER").text)
        cursor.expect_word("days")
        return NowMinusDays(days)
    if token.kind == "DATE":
        cursor.next()
        return date.fromisoformat(token.text)
    if token.kind == "NUMBER":
        cursor.next()
        return quantize(Decimal(token.text))
    if token.kind == "STRING":
        cursor.next()
        return _unquote(token.text)
    if token.kind == "WORD":
        cursor.next()
        return VarRef(token.text)
    raise ParseError(
        f"expected a comparison value, found {token.text or token.kind!r}",
        token.line,
        token.col,
    )


def _unquote(raw: str) -> str:
    return raw[1:-1].replace('\\"', '"').replace("\\\\", "\\")


# -- validation ---------------------------------------------------------------


@dataclass
class _VarInfo:
    kind: str  # "ind" | "lit"
    classes: set[str] = field(default_factory=set)
    datatype: Optional[str] = None


def resolve_property(
    phrase: tuple[str, ...], kb: Ontology
) -> Optional[str]:
    """Map a property phrase to a declared relation name."""
    if phrase == ("related", "to"):
        return RELATED_TO if RELATED_TO in kb.relations else None
    camel = phrase[0] + "".join(w.capitalize() for w in phrase[1:])
    prefixed = "has" + camel[0].upper() + camel[1:]
    for candidate in (prefixed, camel):
        if candidate in kb.relations:
            return candidate
    return None


def phrase_for_relation(name: str) -> tuple[str, ...]:
    """Inverse of :func:`resolve_property` for the canonical printer and UI."""
    if name == RELATED_TO:
        return ("related", "to")
    base = name[3:] if name.startswith("has") and len(name) > 3 else name
    words = re.findall(r"[A-Z]?[a-z0-9]+", base)
    return tuple(w.lower() for w in words)


def validate_instance(
    instance: TemplateInstance, template: Template, kb: Ontology
) -> list[str]:
    """All semantic problems; empty list means the instance is compilable."""
    problems: list[str] = []
    if instance.template != template.name:
        problems.append(
            f"rule {instance.name} uses template {instance.template},"
            f" not {template.name}"
        )

    var_info: dict[str, _VarInfo] = {}

    def note_ind(var: str, cls: str | None, where: str) -> None:
        info = var_info.setdefault(var, _VarInfo("ind"))
        if info.kind != "ind":
            problems.append(
                f"{where}: variable {var} is used both as a value and as a thing"
            )
            return
        if cls:
            info.classes.add(cls)

    def note_lit(var: str, datatype: str, where: str) -> None:
        info = var_info.setdefault(var, _VarInfo("lit", datatype=datatype))
        if info.kind != "lit":
            problems.append(
                f"{where}: variable {var} is used both as a thing and as a value"
            )
            return
        if info.datatype is None:
            info.datatype = datatype
        elif info.datatype != datatype:
            problems.append(
                f"{where}: variable {var} mixes {info.datatype} and {datatype} values"
            )

    def check_class(cls: str, where: str) -> bool:
        if cls not in kb.classes:
            problems.append(f'{where}: unknown class "{cls}"')
            return False
        return True

    # first pass: collect variable typing from slots and property constraints
    def collect(slot_var: str, slot_cls: str, constraints: list[Constraint]) -> None:
        for constraint in constraints:
            if isinstance(constraint, PropertyConstraint):
                where = f'"has {" ".join(constraint.phrase)} {constraint.var}"'
                relation_name = resolve_property(constraint.phrase, kb)
                if relation_name is None:
                    problems.append(
                        f"{where}: unknown property"
                        f' "{" ".join(constraint.phrase)}"'
                    )
                    continue
                constraint.relation = relation_name
                relation = kb.relations[relation_name]
                if slot_cls in kb.classes and relation.domain in kb.classes:
                    if relation.domain not in kb.ancestors(slot_cls):
                        problems.append(
                            f"{where}: property {relation_name} does not apply to"
                            f" {slot_cls}"
                        )
                if relation.range_is_datatype:
                    note_lit(constraint.var, relation.range, where)
                    if constraint.cls is not None:
                        # calendar-style annotation on a literal value: allowed,
                        # must name a real class, compiles to nothing
                        check_class(constraint.cls, where)
                else:
                    cls = constraint.cls
                    if cls is not None and check_class(cls, where):
                        if relation.range in kb.classes and relation.range not in kb.ancestors(cls):
                            problems.append(
                                f"{where}: class {cls} is outside the range"
                                f" {relation.range} of {relation_name}"
                            )
                        note_ind(constraint.var, cls, where)
                    else:
                        note_ind(constraint.var, None, where)
                if constraint.nested:
                    # without an annotation the variable is only known to be
                    # in the relation's range
                    nested_cls = constraint.cls or (
                        relation.range if not relation.range_is_datatype else ""
                    )
                    if nested_cls:
                        collect(constraint.var, nested_cls, constraint.nested)
                    else:
                        collect(constraint.var, slot_cls, constraint.nested)

    for slot in instance.condition + instance.result:
        where = f'"{slot.var} is {slot.cls}"'
        if check_class(slot.cls, where):
            note_ind(slot.var, slot.cls, where)
        collect(slot.var, slot.cls, slot.constraints)

    # template slot satisfaction
    def slot_satisfied(binding_cls: str, slot: TemplateSlot) -> bool:
        if binding_cls not in kb.classes:
            return False
        ancestors = kb.ancestors(binding_cls)
        return any(root in ancestors for root in slot.roots)

    for group, bindings, slots in (
        ("condition", instance.condition, template.condition),
        ("result", instance.result, template.result),
    ):
        for binding in bindings:
            if binding.cls in kb.classes and not any(
                slot_satisfied(binding.cls, slot) for slot in slots
            ):
                allowed = sorted({root for slot in slots for root in slot.roots})
                problems.append(
                    f'"{binding.var} is {binding.cls}": class {binding.cls} does not'
                    f" satisfy any {group} slot (allowed: {', '.join(allowed)})"
                )
        for slot in slots:
            count = sum(1 for b in bindings if slot_satisfied(b.cls, slot))
            if count < slot.min_count:
                problems.append(
                    f"{group} slot {slot.name}: needs at least {slot.min_count}"
                    f" binding(s) of {' | '.join(slot.roots)}, found {count}"
                )

    # second pass: comparisons and head settings now that var types are known
    condition_vars = _collect_vars(instance.condition)

    def rhs_type(rhs: Rhs, where: str) -> Optional[str]:
        if isinstance(rhs, VarRef):
            info = var_info.get(rhs.name)
            if info is None:
                problems.append(f"{where}: unknown variable {rhs.name}")
                return None
            if info.kind == "ind":
                return "date"  # individuals compare through their calendar value
            return info.datatype
        if isinstance(rhs, NowMinusDays):
            return "date"
        if isinstance(rhs, Decimal):
            return "decimal"
        if isinstance(rhs, date):
            return "date"
        return "string"

    def check_constraints(owner: str, constraints: list[Constraint], in_head: bool) -> None:
        for constraint in constraints:
            if isinstance(constraint, ComparisonConstraint):
                where = f'comparison on {owner} at line {constraint.pos[0]}'
                info = var_info.get(owner)
                left = (
                    "date"
                    if info is None or info.kind == "ind"
                    else info.datatype
                )
                right = rhs_type(constraint.rhs, where)
                if left is not None and right is not None and left != right:
                    problems.append(
                        f"{where}: cannot compare {left} with {right}"
                    )
                elif left == "string" and constraint.op != engine.EQUALS:
                    problems.append(f"{where}: ordering not defined on strings")
                if in_head:
                    problems.append(f"{where}: comparisons are not allowed in THEN")
            elif isinstance(constraint, (ValueSetting, UnitSetting)):
                relation_name = (
                    VALUE_RELATION
                    if isinstance(constraint, ValueSetting)
                    else UNIT_RELATION
                )
                where = f'"{owner}" {relation_name} setting'
                if relation_name not in kb.relations:
                    problems.append(f"{where}: schema lacks {relation_name}")
                    continue
                relation = kb.relations[relation_name]
                if relation.range == "decimal":
                    try:
                        Decimal(constraint.text)
                    except InvalidOperation:
                        problems.append(
                            f'{where}: "{constraint.text}" is not a decimal'
                        )
                if not in_head:
                    pass  # value/unit tests in conditions are legal filters
            else:
                if in_head:
                    if constraint.relation is None:
                        continue  # already reported
                    if constraint.cls is None and constraint.var not in condition_vars:
                        problems.append(
                            f'"{constraint.var}": THEN references variable not bound'
                            f" in IF"
                        )
                check_constraints(constraint.var, constraint.nested, in_head)

    for slot in instance.condition:
        check_constraints(slot.var, slot.constraints, in_head=False)
    for slot in instance.result:
        if slot.var in condition_vars:
            problems.append(
                f'"{slot.var} is {slot.cls}": result variable already bound in IF'
            )
        check_constraints(slot.var, slot.constraints, in_head=True)

    return problems


def _collect_vars(bindings: list[SlotBinding]) -> set[str]:
    names: set[str] = set()

    def walk(constraints: list[Constraint]) -> None:
        for constraint in constraints:
            if isinstance(constraint, PropertyConstraint):
                names.add(constraint.var)
                walk(constraint.nested)

    for binding in bindings:
        names.add(binding.var)
        walk(binding.constraints)
    return names


def parse_rule(text: str, template: Template, kb: Ontology) -> TemplateInstance:
    """Parse and validate a rule instance against its template and schema."""
    instance = parse_rule_text(text)
    problems = validate_instance(instance, template, kb)
    if problems:
        raise ValidationError(f"rule {instance.name}", problems)
    return instance


# -- compilation -------------------------------------------------------------


def compile_instance(instance: TemplateInstance, kb: Ontology) -> engine.Rule:
    """Lower a validated instance to an engine rule.

    Constraint blocks become conjunctive body atoms, shared variable names
    become shared rule variables, ``now - N days`` becomes the date
    builtin chain, and each result slot becomes a fresh-individual head.
    """
    body: list[engine.Atom] = []
    head: list[engine.Atom] = []
    lit_vars = _literal_vars(instance, kb)

    def add(atoms: list[engine.Atom], atom: engine.Atom) -> None:
        if atom not in atoms:
            atoms.append(atom)

    def lower(
        owner: str, constraints: list[Constraint], target: list[engine.Atom]
    ) -> None:
        for constraint in constraints:
            if isinstance(constraint, PropertyConstraint):
                relation = constraint.relation or resolve_property(
                    constraint.phrase, kb
                )
                if relation is None:
                    raise ValidationError(
                        f"unresolved property: {' '.join(constraint.phrase)}"
                    )
                add(
                    target,
                    engine.PropAtom(
                        relation, engine.Var(owner), engine.Var(constraint.var)
                    ),
                )
                if constraint.cls and constraint.var not in lit_vars:
                    add(target, engine.ClassAtom(constraint.cls, engine.Var(constraint.var)))
                lower(constraint.var, constraint.nested, target)
            elif isinstance(constraint, ComparisonConstraint):
                add(
                    target,
                    engine.CmpAtom(
                        constraint.op,
                        engine.Var(owner),
                        _lower_rhs(constraint.rhs),
                    ),
                )
            elif isinstance(constraint, ValueSetting):
                relation = kb.relations[VALUE_RELATION]
                value = (
                    quantize(Decimal(constraint.text))
                    if relation.range == "decimal"
                    else constraint.text
                )
                add(target, engine.PropAtom(VALUE_RELATION, engine.Var(owner), value))
            elif isinstance(constraint, UnitSetting):
                add(target, engine.PropAtom(UNIT_RELATION, engine.Var(owner), constraint.text))

    for slot in instance.condition:
        add(body, engine.ClassAtom(slot.cls, engine.Var(slot.var)))
        lower(slot.var, slot.constraints, body)

    fresh: list[engine.FreshDecl] = []
    for slot in instance.result:
        fresh.append(
            engine.FreshDecl(slot.var, slot.cls, _camel(slot.var))
        )
        add(head, engine.ClassAtom(slot.cls, engine.Var(slot.var)))
        lower(slot.var, slot.constraints, head)

    return engine.Rule(
        id=instance.name,
        body=tuple(body),
        head=tuple(head),
        fresh=tuple(fresh),
    )


def _literal_vars(instance: TemplateInstance, kb: Ontology) -> set[str]:
    names: set[str] = set()

    def walk(constraints: list[Constraint]) -> None:
        for constraint in constraints:
            if isinstance(constraint, PropertyConstraint):
                relation_name = constraint.relation or resolve_property(
                    constraint.phrase, kb
                )
                if relation_name is not None:
                    if kb.relations[relation_name].range_is_datatype:
                        names.add(constraint.var)
                walk(constraint.nested)

    for binding in instance.condition + instance.result:
        walk(binding.constraints)
    return names


def _lower_rhs(rhs: Rhs) -> engine.Expr:
    if isinstance(rhs, VarRef):
        return engine.Var(rhs.name)
    if isinstance(rhs, NowMinusDays):
        return engine.DateMinusDays(engine.NowExpr(), rhs.days)
    if isinstance(rhs, Decimal):
        return quantize(rhs)
    return rhs


def _camel(snake: str) -> str:
    return "".join(part.capitalize() for part in snake.split("_") if part)


# -- canonical printer -------------------------------------------------------


def pretty(instance: TemplateInstance) -> str:
    """Canonical text; ``parse_rule_text(pretty(i)) == i`` structurally."""
    lines: list[str] = [f"rule {instance.name} uses {instance.template}", "IF"]
    lines.extend(_print_blocks(instance.condition))
    lines.append("THEN")
    lines.extend(_print_blocks(instance.result))
    return "\n".join(lines) + "\n"


def _print_blocks(blocks: list[SlotBinding]) -> list[str]:
    lines: list[str] = []
    for index, block in enumerate(blocks):
        tail = " AND" if index < len(blocks) - 1 else ""
        if block.constraints:
            lines.append(f"  {block.var} is {block.cls} which {{")
            lines.extend(_print_constraints(block.constraints, depth=2))
            lines.append(f"  }}{tail}")
        else:
            lines.append(f"  {block.var} is {block.cls}{tail}")
    return lines


def _print_constraints(constraints: list[Constraint], depth: int) -> list[str]:
    pad = "  " * depth
    lines: list[str] = []
    for index, constraint in enumerate(constraints):
        tail = " AND" if index < len(constraints) - 1 else ""
        if isinstance(constraint, PropertyConstraint):
            if constraint.phrase == ("related", "to"):
                lead = f"is related to {constraint.var}"
            else:
                lead = f"has {' '.join(constraint.phrase)} {constraint.var}"
            if constraint.cls:
                lead += f" which is {constraint.cls}"
            if constraint.nested:
                lines.append(f"{pad}{lead} which {{")
                lines.extend(_print_constraints(constraint.nested, depth + 1))
                lines.append(f"{pad}}}{tail}")
            else:
                lines.append(f"{pad}{lead}{tail}")
        elif isinstance(constraint, ComparisonConstraint):
            op_text = {
                engine.GREATER_THAN: "is greater than",
                engine.LESS_THAN: "is less than",
                engine.EQUALS: "equals",
            }[constraint.op]
            lines.append(f"{pad}{op_text} {_print_rhs(constraint.rhs)}{tail}")
        elif isinstance(constraint, ValueSetting):
            lines.append(f'{pad}has value "{constraint.text}"{tail}')
        else:
            lines.append(f'{pad}has unit "{constraint.text}"{tail}')
    return lines


def _print_rhs(rhs: Rhs) -> str:
    if isinstance(rhs, VarRef):
        return rhs.name
    if isinstance(rhs, NowMinusDays):
        return f"now - {rhs.days} days"
    if isinstance(rhs, Decimal):
        return format(rhs.normalize(), "f")
    if isinstance(rhs, date):
        return rhs.isoformat()
    return f'"{rhs}"'


# -- editor support -----------------------------------------------------------


@dataclass(frozen=True)
class OptionContext:
    """Cursor position inside the rule builder.

    kinds: ``condition-class`` / ``result-class`` (class pick for a slot,
    ``roots`` from the template), ``object-class`` (class pick after
    "which is" under ``relation``), ``property`` (property pick inside a
    block whose subject is ``owner_class``), ``operator`` (comparison pick
    for an ``operand`` datatype).
    """

    kind: str
    roots: tuple[str, ...] = ()
    relation: Optional[str] = None
    owner_class: Optional[str] = None
    operand: Optional[str] = None


def list_slot_options(kb: Ontology, context: OptionContext) -> list[str]:
    """Legal schema items at a cursor position, alphabetically sorted.

    Class options under a property list the strict descendants of the
    relation's range: range classes themselves act as abstract envelopes.
    """
    if context.kind in ("condition-class", "result-class"):
        options: set[str] = set()
        for root in context.roots:
            if root not in kb.classes:
                raise UnknownEntityError(f"unknown root class: {root}")
            options |= kb.descendants(root)
        return sorted(options)
    if context.kind == "object-class":
        if context.relation not in kb.relations:
            raise UnknownEntityError(f"unknown relation: {context.relation}")
        relation = kb.relations[context.relation]
        if relation.range_is_datatype:
            return []
        return sorted(kb.descendants(relation.range) - {relation.range})
    if context.kind == "property":
        if context.owner_class not in kb.classes:
            raise UnknownEntityError(f"unknown class: {context.owner_class}")
        ancestors = kb.ancestors(context.owner_class)
        return sorted(
            relation.name
            for relation in kb.relations.values()
            if relation.domain in ancestors
        )
    if context.kind == "operator":
        if context.operand in ("date", "decimal"):
            return ["equals", "greater than", "less than"]
        return ["equals"]
    raise UnknownEntityError(f"unknown option context: {context.kind}")
