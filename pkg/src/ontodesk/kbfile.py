"""Line-oriented text format for knowledge bases.

Directives::

    class <Name> [sub <Parent> ...] ns=<namespace>
    rel <Name> dom=<Class> rng=<Class|string|decimal|date|boolean>
    ind <Id> : <Class>[,<Class>...]
    fact <Subj> <Rel> <Obj|literal>

``#`` starts a comment.  Literals: double-quoted strings, ISO-8601 dates,
plain decimals, ``true``/``false``.
"""

from __future__ import annotations

import shlex

from .errors import ParseError, ValidationError
from .kb import (
    Assertion,
    ClassDef,
    Ind,
    Individual,
    LOADED,
    NAMESPACES,
    Ontology,
    RelationDef,
    assert_fact,
    format_literal,
    parse_literal,
    validate,
)


def load_ontology(text: str) -> Ontology:
    kb = Ontology()
    facts: list[tuple[int, list[str]]] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        try:
            tokens = shlex.split(line, posix=False)
        except ValueError as exc:
            raise ParseError(f"bad syntax: {exc}", line=line_no)
        directive = tokens[0]
        try:
            if directive == "class":
                kb = kb.with_class(_parse_class(tokens))
            elif directive == "rel":
                kb = kb.with_relation(_parse_relation(tokens))
            elif directive == "ind":
                kb = kb.with_individual(_parse_individual(tokens))
            elif directive == "fact":
                facts.append((line_no, tokens))
            else:
                raise ParseError(f"unknown directive: {directive}", line=line_no)
        except ParseError:
            raise
        except ValidationError as exc:
            raise ParseError(str(exc), line=line_no)

    schema_problems = validate(kb)
    if schema_problems:
        raise ValidationError("invalid ontology", schema_problems)

    for line_no, tokens in facts:
        if len(tokens) != 4:
            raise ParseError("fact requires: fact <subj> <rel> <obj>", line=line_no)
        _, subject, relation, obj_token = tokens
        literal = parse_literal(obj_token)
        obj = literal if literal is not None else Ind(obj_token)
        try:
            kb = assert_fact(kb, Assertion(subject, relation, obj, LOADED))
        except ValidationError as exc:
            raise ParseError(str(exc), line=line_no)
    return kb


def _strip_comment(raw: str) -> str:
    # cut at the first '#' that is outside a quoted literal
    in_quote = False
    for i, ch in enumerate(raw):
        if ch == '"':
            in_quote = not in_quote
        elif ch == "#" and not in_quote:
            return raw[:i]
    return raw


def _parse_class(tokens: list[str]) -> ClassDef:
    if len(tokens) < 2:
        raise ParseError("class requires a name")
    name = tokens[1]
    parents: list[str] = []
    namespace = None
    rest = tokens[2:]
    i = 0
    while i < len(rest):
        token = rest[i]
        if token == "sub":
            i += 1
            while i < len(rest) and not rest[i].startswith("ns="):
                parents.append(rest[i])
                i += 1
        elif token.startswith("ns="):
            namespace = token[3:]
            i += 1
        else:
            raise ParseError(f"unexpected token in class declaration: {token}")
    if namespace is None:
        raise ParseError(f"class {name}: missing ns=<namespace>")
    if namespace not in NAMESPACES:
        raise ParseError(
            f"class {name}: namespace must be one of {', '.join(NAMESPACES)}"
        )
    if not parents and "sub" in rest:
        raise ParseError(f"class {name}: sub requires at least one parent")
    return ClassDef(name, tuple(parents), namespace)


def _parse_relation(tokens: list[str]) -> RelationDef:
    if len(tokens) != 4:
        raise ParseError("rel requires: rel <Name> dom=<Class> rng=<Class|datatype>")
    name = tokens[1]
    domain = None
    rng = None
    for token in tokens[2:]:
        if token.startswith("dom="):
            domain = token[4:]
        elif token.startswith("rng="):
            rng = token[4:]
        else:
            raise ParseError(f"unexpected token in rel declaration: {token}")
    if not domain or not rng:
        raise ParseError(f"rel {name}: requires dom= and rng=")
    return RelationDef(name, domain, rng)


def _parse_individual(tokens: list[str]) -> Individual:
    if len(tokens) < 4 or tokens[2] != ":":
        raise ParseError("ind requires: ind <Id> : <Class>[,<Class>...]")
    ind_id = tokens[1]
    classes = [c for c in " ".join(tokens[3:]).split(",") if c.strip()]
    return Individual(ind_id, tuple(c.strip() for c in classes))


def dump_ontology(kb: Ontology) -> str:
    """Canonical text form: sorted declarations, provenance as comments."""
    lines: list[str] = []
    for cls in sorted(kb.classes.values(), key=lambda c: c.name):
        parts = ["class", cls.name]
        if cls.parents:
            parts.append("sub")
            parts.extend(sorted(cls.parents))
        parts.append(f"ns={cls.namespace}")
        lines.append(" ".join(parts))
    for rel in sorted(kb.relations.values(), key=lambda r: r.name):
        lines.append(f"rel {rel.name} dom={rel.domain} rng={rel.range}")
    for ind in sorted(kb.individuals.values(), key=lambda i: i.id):
        lines.append(f"ind {ind.id} : {','.join(ind.classes)}")
    for assertion in sorted(kb.assertions.values(), key=lambda a: a.key()):
        obj = assertion.obj
        obj_text = obj.id if isinstance(obj, Ind) else format_literal(obj)
        suffix = ""
        if assertion.provenance != LOADED:
            suffix = f"  # prov={assertion.provenance}"
        lines.append(
            f"fact {assertion.subject} {assertion.relation} {obj_text}{suffix}"
        )
    return "\n".join(lines) + "\n"
