"""Mini star-schema warehouse and period-over-period finding detection.

Dimensions are strict hierarchies (every member except the top level has
exactly one parent in the next-higher level); facts sit at the leaf level
of every dimension and measures are additive.  Analyses compare a period
member against the immediately preceding member at the same level, round
the percent change half-up to two places, and drill one level down when
the change exceeds the model's anomaly threshold.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from datetime import date
from decimal import Decimal, ROUND_HALF_UP

from .errors import OntodeskError, ParseError, UnknownEntityError, ValidationError
from .kb import (
    Assertion,
    Ind,
    Individual,
    Ontology,
    Provenance,
    assert_fact,
    quantize,
)

TWO_PLACES = Decimal("0.01")
STEADY_EPSILON = Decimal("0.005")
OLAP = Provenance("olap")

RISEN = "risen"
FALLEN = "fallen"
STEADY = "steady"


class UndefinedBaselineError(OntodeskError):
    """Previous-period aggregate is zero or missing; no ratio exists."""


@dataclass(frozen=True)
class Level:
    name: str
    kb_class: str | None = None


@dataclass(frozen=True)
class Member:
    id: str
    level: str
    parent: str | None = None
    start: date | None = None  # calendar anchor for time levels


@dataclass
class DimensionDef:
    name: str
    levels: list[Level] = field(default_factory=list)
    members: dict[str, Member] = field(default_factory=dict)
    order: dict[str, list[str]] = field(default_factory=dict)  # level -> member ids

    def level_index(self, level: str) -> int:
        for i, l in enumerate(self.levels):
            if l.name == level:
                return i
        raise UnknownEntityError(f"dimension {self.name}: unknown level {level}")

    def level_def(self, level: str) -> Level:
        return self.levels[self.level_index(level)]

    @property
    def leaf_level(self) -> str:
        return self.levels[-1].name

    def members_at(self, level: str) -> list[str]:
        self.level_index(level)
        return list(self.order.get(level, []))

    def children_of(self, member_id: str) -> list[str]:
        member = self.members[member_id]
        index = self.level_index(member.level)
        if index + 1 >= len(self.levels):
            return []
        child_level = self.levels[index + 1].name
        return [
            m for m in self.order.get(child_level, [])
            if self.members[m].parent == member_id
        ]

    def leaves_under(self, member_id: str) -> list[str]:
        member = self.members.get(member_id)
        if member is None:
            raise UnknownEntityError(
                f"dimension {self.name}: unknown member {member_id}"
            )
        if member.level == self.leaf_level:
            return [member_id]
        collected: list[str] = []
        for child in self.children_of(member_id):
            collected.extend(self.leaves_under(child))
        return collected

    def previous(self, member_id: str) -> str | None:
        member = self.members[member_id]
        siblings = self.order.get(member.level, [])
        index = siblings.index(member_id)
        return siblings[index - 1] if index > 0 else None


@dataclass(frozen=True)
class MeasureDef:
    name: str
    unit: str
    kb_id: str


@dataclass(frozen=True)
class FactRow:
    coords: tuple[tuple[str, str], ...]  # (dimension, leaf member)
    values: tuple[tuple[str, Decimal], ...]  # (measure, value)

    def coord(self, dimension: str) -> str:
        for dim, member in self.coords:
            if dim == dimension:
                return member
        raise UnknownEntityError(f"fact row lacks dimension {dimension}")

    def value(self, measure: str) -> Decimal:
        for name, value in self.values:
            if name == measure:
                return value
        raise UnknownEntityError(f"fact row lacks measure {measure}")


@dataclass
class StarSchema:
    name: str
    dimensions: dict[str, DimensionDef] = field(default_factory=dict)
    measures: dict[str, MeasureDef] = field(default_factory=dict)
    facts: list[FactRow] = field(default_factory=list)

    def validate(self) -> list[str]:
        problems: list[str] = []
        for dimension in self.dimensions.values():
            top = dimension.levels[0].name if dimension.levels else None
            for member in dimension.members.values():
                index = dimension.level_index(member.level)
                if member.level == top:
                    if member.parent is not None:
                        problems.append(
                            f"{dimension.name}/{member.id}: top-level member"
                            f" cannot have a parent"
                        )
                    continue
                parent_level = dimension.levels[index - 1].name
                parent = dimension.members.get(member.parent or "")
                if parent is None or parent.level != parent_level:
                    problems.append(
                        f"{dimension.name}/{member.id}: needs exactly one parent"
                        f" in level {parent_level}"
                    )
        for row_no, row in enumerate(self.facts, start=1):
            for dim_name, dimension in self.dimensions.items():
                try:
                    member = row.coord(dim_name)
                except UnknownEntityError:
                    problems.append(f"fact row {row_no}: missing {dim_name}")
                    continue
                found = dimension.members.get(member)
                if found is None or found.level != dimension.leaf_level:
                    problems.append(
                        f"fact row {row_no}: {member} is not a leaf member of"
                        f" {dim_name}"
                    )
        return problems


# -- loading ------------------------------------------------------------


def load_dimensions(text: str) -> StarSchema:
    """Parse the warehouse sidecar: schema name, measures, dimensions."""
    schema: StarSchema | None = None
    current: DimensionDef | None = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        head = tokens[0]
        try:
            if head == "schema":
                schema = StarSchema(tokens[1])
            elif head == "measure":
                if schema is None:
                    raise ParseError("measure before schema", line=line_no)
                name = tokens[1]
                attrs = _attrs(tokens[2:])
                schema.measures[name] = MeasureDef(
                    name, attrs.get("unit", ""), attrs.get("ind", name)
                )
            elif head == "dimension":
                if schema is None:
                    raise ParseError("dimension before schema", line=line_no)
                current = DimensionDef(tokens[1])
                schema.dimensions[tokens[1]] = current
            elif head == "level":
                if current is None:
                    raise ParseError("level outside a dimension", line=line_no)
                attrs = _attrs(tokens[2:])
                current.levels.append(Level(tokens[1], attrs.get("class")))
            elif head == "member":
                if current is None:
                    raise ParseError("member outside a dimension", line=line_no)
                level, member_id = tokens[1], tokens[2]
                attrs = _attrs(tokens[3:])
                start = (
                    date.fromisoformat(attrs["date"]) if "date" in attrs else None
                )
                member = Member(member_id, level, attrs.get("parent"), start)
                if member_id in current.members:
                    raise ParseError(
                        f"duplicate member {member_id}", line=line_no
                    )
                current.members[member_id] = member
                current.order.setdefault(level, []).append(member_id)
            else:
                raise ParseError(f"unknown directive: {head}", line=line_no)
        except IndexError:
            raise ParseError("truncated directive", line=line_no)
    if schema is None:
        raise ParseError("no schema declared")
    problems = schema.validate()
    if problems:
        raise ValidationError("invalid warehouse metadata", problems)
    return schema


def _attrs(tokens: list[str]) -> dict[str, str]:
    attrs: dict[str, str] = {}
    for token in tokens:
        if "=" not in token:
            raise ParseError(f"expected key=value, got {token}")
        key, value = token.split("=", 1)
        attrs[key] = value
    return attrs


def load_facts(text: str, schema: StarSchema) -> None:
    """Read the fact CSV into the schema (header names dims and measures)."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty facts file")
    dims: list[tuple[int, str, str]] = []  # column, dimension, leaf level
    measures: list[tuple[int, str]] = []
    for index, column in enumerate(header):
        column = column.strip()
        if column.startswith("dim:"):
            spec = column[4:]
            if "=" not in spec:
                raise ParseError(f"bad dimension column: {column}")
            dim, level = spec.split("=", 1)
            if dim not in schema.dimensions:
                raise ParseError(f"unknown dimension in header: {dim}")
            if schema.dimensions[dim].leaf_level != level:
                raise ParseError(
                    f"facts must reference the leaf level of {dim}"
                    f" ({schema.dimensions[dim].leaf_level}), got {level}"
                )
            dims.append((index, dim, level))
        elif column.startswith("measure:"):
            name = column[8:]
            if name not in schema.measures:
                raise ParseError(f"unknown measure in header: {name}")
            measures.append((index, name))
        else:
            raise ParseError(f"unknown column kind: {column}")
    if not dims or not measures:
        raise ParseError("facts need at least one dim: and one measure: column")
    for row_no, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        coords = tuple((dim, row[i].strip()) for i, dim, _ in dims)
        values = tuple(
            (name, quantize(Decimal(row[i].strip()))) for i, name in measures
        )
        schema.facts.append(FactRow(coords, values))
    problems = schema.validate()
    if problems:
        raise ValidationError("invalid facts", problems)


# -- aggregation ---------------------------------------------------------


@dataclass(frozen=True)
class Filter:
    dimension: str
    level: str
    member: str


@dataclass(frozen=True)
class AggregateCell:
    member: str
    value: Decimal
    empty: bool


def _check_filters(schema: StarSchema, filters: tuple[Filter, ...]) -> None:
    for f in filters:
        dimension = schema.dimensions.get(f.dimension)
        if dimension is None:
            raise UnknownEntityError(f"unknown dimension: {f.dimension}")
        member = dimension.members.get(f.member)
        if member is None or member.level != f.level:
            raise UnknownEntityError(
                f"unknown member {f.member} at {f.dimension}/{f.level}"
            )


def total(
    schema: StarSchema, measure: str, filters: tuple[Filter, ...]
) -> AggregateCell:
    """Sum of the measure over leaf rows inside the filter intersection."""
    if measure not in schema.measures:
        raise UnknownEntityError(f"unknown measure: {measure}")
    _check_filters(schema, filters)
    allowed: dict[str, set[str]] = {}
    for f in filters:
        leaves = set(schema.dimensions[f.dimension].leaves_under(f.member))
        if f.dimension in allowed:
            allowed[f.dimension] &= leaves
        else:
            allowed[f.dimension] = leaves
    value = Decimal(0)
    hit = False
    for row in schema.facts:
        if all(row.coord(dim) in leaves for dim, leaves in allowed.items()):
            value += row.value(measure)
            hit = True
    return AggregateCell("", quantize(value), not hit)


def aggregate(
    schema: StarSchema,
    measure: str,
    filters: tuple[Filter, ...],
    group_dimension: str,
    group_level: str,
) -> list[AggregateCell]:
    """One cell per member of the grouping level, in declared member order."""
    dimension = schema.dimensions.get(group_dimension)
    if dimension is None:
        raise UnknownEntityError(f"unknown dimension: {group_dimension}")
    cells: list[AggregateCell] = []
    for member in dimension.members_at(group_level):
        cell = total(
            schema,
            measure,
            filters + (Filter(group_dimension, group_level, member),),
        )
        cells.append(AggregateCell(member, cell.value, cell.empty))
    return cells


# -- findings ------------------------------------------------------------


@dataclass(frozen=True)
class AnalysisModel:
    id: str
    schema: str
    measure: str
    filters: tuple[Filter, ...]
    period_dimension: str
    grain: str  # level within the period dimension
    period: str  # current period member
    threshold: Decimal
    schedule: str = "on-demand"


def validate_model(model: AnalysisModel, schema: StarSchema) -> list[str]:
    problems: list[str] = []
    if model.measure not in schema.measures:
        problems.append(f"model {model.id}: unknown measure {model.measure}")
    try:
        _check_filters(schema, model.filters)
    except UnknownEntityError as exc:
        problems.append(f"model {model.id}: {exc}")
    dimension = schema.dimensions.get(model.period_dimension)
    if dimension is None:
        problems.append(
            f"model {model.id}: unknown period dimension {model.period_dimension}"
        )
    else:
        member = dimension.members.get(model.period)
        if member is None or member.level != model.grain:
            problems.append(
                f"model {model.id}: period {model.period} is not a member of"
                f" level {model.grain}"
            )
    if model.threshold <= 0:
        problems.append(f"model {model.id}: threshold must be positive")
    return problems


@dataclass(frozen=True)
class OlapFinding:
    id: str
    measure: str
    context: tuple[Filter, ...]  # includes the period filter
    direction: str
    percent_change: Decimal  # rounded, two places
    current: Decimal


def compute_finding(
    model: AnalysisModel,
    period: str,
    schema: StarSchema,
    extra_filters: tuple[Filter, ...] = (),
) -> OlapFinding:
    """Period-over-period comparison at the model's grain.

    Raises :class:`UndefinedBaselineError` when there is no previous
    period or its aggregate is zero; callers suppress the finding and log.
    """
    dimension = schema.dimensions[model.period_dimension]
    member = dimension.members.get(period)
    if member is None or member.level != model.grain:
        raise UnknownEntityError(
            f"{period} is not a {model.grain} member of {model.period_dimension}"
        )
    previous = dimension.previous(period)
    if previous is None:
        raise UndefinedBaselineError(f"{period} has no preceding {model.grain}")
    filters = model.filters + extra_filters
    current_cell = total(
        schema, model.measure,
        filters + (Filter(model.period_dimension, model.grain, period),),
    )
    previous_cell = total(
        schema, model.measure,
        filters + (Filter(model.period_dimension, model.grain, previous),),
    )
    if previous_cell.value == 0:
        raise UndefinedBaselineError(
            f"{model.id}: zero baseline in {previous}; finding suppressed"
        )
    change = (
        (current_cell.value - previous_cell.value) / previous_cell.value * 100
    ).quantize(TWO_PLACES, rounding=ROUND_HALF_UP)
    if abs(change) < STEADY_EPSILON:
        direction = STEADY
    elif change > 0:
        direction = RISEN
    else:
        direction = FALLEN
    context = filters + (Filter(model.period_dimension, model.grain, period),)
    suffix = "_".join(
        [model.id.replace("-", "_"), period]
        + [f.member for f in extra_filters]
    )
    return OlapFinding(
        id=f"Finding_{suffix}",
        measure=model.measure,
        context=context,
        direction=direction,
        percent_change=change,
        current=current_cell.value,
    )


def drill(
    model: AnalysisModel,
    finding: OlapFinding,
    schema: StarSchema,
    diagnostics: list[str] | None = None,
) -> list[OlapFinding]:
    """Localise an anomaly: re-run one hierarchy level lower, recursively.

    Returns the flattened child findings; empty when the finding is below
    the model threshold or already at leaf level.
    """
    if abs(finding.percent_change) < model.threshold:
        return []
    children: list[OlapFinding] = []
    for ctx in finding.context:
        if ctx.dimension == model.period_dimension:
            continue
        dimension = schema.dimensions[ctx.dimension]
        for child in dimension.children_of(ctx.member):
            child_level = dimension.members[child].level
            extra = tuple(
                f for f in finding.context
                if f.dimension not in (ctx.dimension, model.period_dimension)
                and f not in model.filters
            )
            narrowed = AnalysisModel(
                id=model.id,
                schema=model.schema,
                measure=model.measure,
                filters=tuple(
                    f for f in model.filters if f.dimension != ctx.dimension
                ),
                period_dimension=model.period_dimension,
                grain=model.grain,
                period=model.period,
                threshold=model.threshold,
                schedule=model.schedule,
            )
            try:
                child_finding = compute_finding(
                    narrowed,
                    _period_of(finding, model),
                    schema,
                    extra_filters=extra + (Filter(ctx.dimension, child_level, child),),
                )
            except UndefinedBaselineError as exc:
                if diagnostics is not None:
                    diagnostics.append(str(exc))
                continue
            children.append(child_finding)
            children.extend(drill(model, child_finding, schema, diagnostics))
    return children


def _period_of(finding: OlapFinding, model: AnalysisModel) -> str:
    for ctx in finding.context:
        if ctx.dimension == model.period_dimension and ctx.level == model.grain:
            return ctx.member
    raise UnknownEntityError(f"finding {finding.id} lacks a period context")


# -- kb projection -------------------------------------------------------


def assert_findings(
    kb: Ontology,
    findings: list[OlapFinding],
    schema: StarSchema,
    diagnostics: list[str] | None = None,
) -> Ontology:
    """Project findings into the kb as Increase/Decrease individuals.

    Each finding links to its measure individual and to one individual per
    context member (periods get their calendar date attached), which is
    the shape rule bodies match on.  Steady findings carry no direction
    class and are skipped with a diagnostic.  Idempotent per finding id.
    """
    for required in ("Increase", "Decrease"):
        if required not in kb.classes:
            raise ValidationError(f"kb schema lacks class {required}")
    for finding in findings:
        if finding.direction == STEADY:
            if diagnostics is not None:
                diagnostics.append(
                    f"{finding.id}: steady ({finding.percent_change}%), not asserted"
                )
            continue
        cls = "Increase" if finding.direction == RISEN else "Decrease"
        if finding.id not in kb.individuals:
            kb = kb.with_individual(Individual(finding.id, (cls,)))
        measure = schema.measures[finding.measure]
        kb = _ensure_individual(kb, measure.kb_id, "Measure")
        kb = assert_fact(
            kb, Assertion(finding.id, "hasValue", quantize(finding.percent_change), OLAP)
        )
        kb = assert_fact(kb, Assertion(finding.id, "hasUnit", "%", OLAP))
        kb = assert_fact(
            kb, Assertion(finding.id, "relatedTo", Ind(measure.kb_id), OLAP)
        )
        for ctx in finding.context:
            dimension = schema.dimensions[ctx.dimension]
            level = dimension.level_def(ctx.level)
            if level.kb_class is None:
                continue
            kb = _ensure_individual(kb, ctx.member, level.kb_class)
            kb = assert_fact(
                kb, Assertion(finding.id, "relatedTo", Ind(ctx.member), OLAP)
            )
            member = dimension.members[ctx.member]
            if member.start is not None:
                kb = assert_fact(
                    kb, Assertion(ctx.member, "hasDate", member.start, OLAP)
                )
    return kb


def _ensure_individual(kb: Ontology, ind_id: str, cls: str) -> Ontology:
    if cls not in kb.classes:
        raise ValidationError(f"kb schema lacks class {cls}")
    if ind_id not in kb.individuals:
        return kb.with_individual(Individual(ind_id, (cls,)))
    if cls not in kb.individuals[ind_id].classes and not any(
        cls in kb.ancestors(c) for c in kb.individuals[ind_id].classes
    ):
        return kb.with_membership(ind_id, cls)
    return kb
