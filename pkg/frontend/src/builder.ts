/** Schema-constrained rule builder.
 *
 * Every committed choice (slot class, property, object class, comparison
 * operator) must come from the option lists embedded in the server's
 * schema payload; illegal picks throw before touching builder state.
 * The builder renders the canonical rule text live, so users learn the
 * textual form alongside the form-based one.
 */

import type { RelationInfo, SchemaPayload, TemplateInfo } from "./types.js";

export type Operator = "equals" | "greater than" | "less than";

export interface ComparisonDraft {
  kind: "comparison";
  op: Operator;
  rhs: string; // already-textual: "now - 14 days", a variable, a literal
}

export interface PropertyDraft {
  kind: "property";
  relation: string;
  phrase: string;
  varName: string;
  cls?: string;
  nested: ConstraintDraft[];
}

export interface ValueDraft {
  kind: "value";
  text: string;
}

export interface UnitDraft {
  kind: "unit";
  text: string;
}

export type ConstraintDraft =
  | PropertyDraft
  | ComparisonDraft
  | ValueDraft
  | UnitDraft;

export interface BlockDraft {
  varName: string;
  cls: string;
  constraints: ConstraintDraft[];
}

function optionError(choice: string, options: string[], position: string): Error {
  return new Error(
    `"${choice}" is not a legal option at ${position};` +
      ` legal: ${options.join(", ") || "(none)"}`,
  );
}

/** Handle over one property constraint: nested constraints hang off it. */
export class PropertyHandle {
  constructor(
    private readonly builder: RuleBuilder,
    private readonly draft: PropertyDraft,
  ) {}

  get varName(): string {
    return this.draft.varName;
  }

  /** Comparison on this property's value (operator comes from options). */
  addComparison(op: string, rhs: string): this {
    const relation = this.builder.relationInfo(this.draft.relation);
    const operand = ["decimal", "date", "string", "boolean"].includes(
      relation.range,
    )
      ? relation.range
      : "date"; // individuals compare through their calendar value
    const options = this.builder.operatorOptions(operand);
    if (!options.includes(op)) {
      throw optionError(op, options, `comparison on ${this.draft.varName}`);
    }
    this.draft.nested.push({ kind: "comparison", op: op as Operator, rhs });
    return this;
  }

  /** Nested property on this constraint's object (class-typed only). */
  addProperty(relation: string, varName: string, cls?: string): PropertyHandle {
    if (this.draft.cls === undefined) {
      throw new Error(
        `property ${this.draft.relation} has a literal value; it cannot nest`,
      );
    }
    return this.builder.attachProperty(
      this.draft.nested,
      this.draft.cls,
      relation,
      varName,
      cls,
    );
  }
}

export class BlockHandle {
  constructor(
    private readonly builder: RuleBuilder,
    private readonly draft: BlockDraft,
  ) {}

  get varName(): string {
    return this.draft.varName;
  }

  get cls(): string {
    return this.draft.cls;
  }

  addProperty(relation: string, varName: string, cls?: string): PropertyHandle {
    return this.builder.attachProperty(
      this.draft.constraints,
      this.draft.cls,
      relation,
      varName,
      cls,
    );
  }

  /** Head shorthand: link to a variable already bound in the IF section. */
  addRelated(varName: string): this {
    this.builder.requireBodyVariable(varName);
    this.draft.constraints.push({
      kind: "property",
      relation: "relatedTo",
      phrase: "related to",
      varName,
      nested: [],
    });
    return this;
  }

  setValue(text: string): this {
    this.draft.constraints.push({ kind: "value", text });
    return this;
  }

  setUnit(text: string): this {
    this.draft.constraints.push({ kind: "unit", text });
    return this;
  }
}

export class RuleBuilder {
  readonly template: TemplateInfo;
  private readonly relations: Map<string, RelationInfo>;
  readonly condition: BlockDraft[] = [];
  readonly result: BlockDraft[] = [];

  constructor(
    readonly schema: SchemaPayload,
    templateName: string,
    readonly ruleName: string,
  ) {
    const template = schema.templates.find((t) => t.name === templateName);
    if (!template) {
      throw new Error(`unknown template: ${templateName}`);
    }
    this.template = template;
    this.relations = new Map(schema.relations.map((r) => [r.name, r]));
  }

  // -- options at cursor positions ------------------------------------

  conditionClassOptions(): string[] {
    return unique(this.template.condition.flatMap((slot) => slot.options));
  }

  resultClassOptions(): string[] {
    return unique(this.template.result.flatMap((slot) => slot.options));
  }

  propertyOptions(cls: string): string[] {
    return this.schema.options.properties_by_class[cls] ?? [];
  }

  objectClassOptions(relation: string): string[] {
    return this.schema.options.object_options[relation] ?? [];
  }

  operatorOptions(operand: string): string[] {
    return this.schema.options.operators[operand] ?? ["equals"];
  }

  relationInfo(name: string): RelationInfo {
    const info = this.relations.get(name);
    if (!info) {
      throw new Error(`unknown relation: ${name}`);
    }
    return info;
  }

  // -- committing choices ----------------------------------------------

  addConditionBlock(varName: string, cls: string): BlockHandle {
    const options = this.conditionClassOptions();
    if (!options.includes(cls)) {
      throw optionError(cls, options, "condition slot class");
    }
    const draft: BlockDraft = { varName, cls, constraints: [] };
    this.condition.push(draft);
    return new BlockHandle(this, draft);
  }

  addResultBlock(varName: string, cls: string): BlockHandle {
    const options = this.resultClassOptions();
    if (!options.includes(cls)) {
      throw optionError(cls, options, "result slot class");
    }
    const draft: BlockDraft = { varName, cls, constraints: [] };
    this.result.push(draft);
    return new BlockHandle(this, draft);
  }

  /** Shared by block and property handles; enforces option membership. */
  attachProperty(
    target: ConstraintDraft[],
    ownerClass: string,
    relation: string,
    varName: string,
    cls?: string,
  ): PropertyHandle {
    const properties = this.propertyOptions(ownerClass);
    if (!properties.includes(relation)) {
      throw optionError(relation, properties, `property of ${ownerClass}`);
    }
    const info = this.relationInfo(relation);
    const literal = ["string", "decimal", "date", "boolean"].includes(info.range);
    if (cls !== undefined) {
      if (literal) {
        throw new Error(
          `${relation} holds a ${info.range} value; no object class applies`,
        );
      }
      const options = this.objectClassOptions(relation);
      if (!options.includes(cls)) {
        throw optionError(cls, options, `object class of ${relation}`);
      }
    } else if (!literal) {
      throw new Error(`${relation} links things; pick an object class`);
    }
    const phrase = this.schema.options.phrases[relation] ?? relation;
    const draft: PropertyDraft = {
      kind: "property",
      relation,
      phrase,
      varName,
      cls,
      nested: [],
    };
    target.push(draft);
    return new PropertyHandle(this, draft);
  }

  requireBodyVariable(varName: string): void {
    const names = new Set<string>();
    const walk = (constraints: ConstraintDraft[]) => {
      for (const constraint of constraints) {
        if (constraint.kind === "property") {
          names.add(constraint.varName);
          walk(constraint.nested);
        }
      }
    };
    for (const block of this.condition) {
      names.add(block.varName);
      walk(block.constraints);
    }
    if (!names.has(varName)) {
      throw new Error(`"${varName}" is not bound in the IF section`);
    }
  }

  // -- local validation and text emission --------------------------------

  /** Client-side checks mirroring template cardinalities. */
  validate(): string[] {
    const problems: string[] = [];
    if (this.condition.length === 0) {
      problems.push("IF section is empty (min cardinality 1)");
    }
    if (this.result.length === 0) {
      problems.push("THEN section is empty (min cardinality 1)");
    }
    for (const slot of this.template.condition) {
      const count = this.condition.filter((b) =>
        slot.options.includes(b.cls),
      ).length;
      if (count < slot.min) {
        problems.push(
          `condition slot ${slot.slot} needs at least ${slot.min} binding(s)`,
        );
      }
    }
    for (const slot of this.template.result) {
      const count = this.result.filter((b) => slot.options.includes(b.cls)).length;
      if (count < slot.min) {
        problems.push(
          `result slot ${slot.slot} needs at least ${slot.min} binding(s)`,
        );
      }
    }
    return problems;
  }

  /** Canonical rule text, as the server-side pretty printer writes it. */
  text(): string {
    const lines: string[] = [
      `rule ${this.ruleName} uses ${this.template.name}`,
      "IF",
    ];
    lines.push(...renderBlocks(this.condition));
    lines.push("THEN");
    lines.push(...renderBlocks(this.result));
    return lines.join("\n") + "\n";
  }
}

function renderBlocks(blocks: BlockDraft[]): string[] {
  const lines: string[] = [];
  blocks.forEach((block, index) => {
    const tail = index < blocks.length - 1 ? " AND" : "";
    if (block.constraints.length > 0) {
      lines.push(`  ${block.varName} is ${block.cls} which {`);
      lines.push(...renderConstraints(block.constraints, 2));
      lines.push(`  }${tail}`);
    } else {
      lines.push(`  ${block.varName} is ${block.cls}${tail}`);
    }
  });
  return lines;
}

function renderConstraints(constraints: ConstraintDraft[], depth: number): string[] {
  const pad = "  ".repeat(depth);
  const lines: string[] = [];
  constraints.forEach((constraint, index) => {
    const tail = index < constraints.length - 1 ? " AND" : "";
    switch (constraint.kind) {
      case "property": {
        const lead =
          constraint.relation === "relatedTo"
            ? `is related to ${constraint.varName}`
            : `has ${constraint.phrase} ${constraint.varName}`;
        const withClass = constraint.cls ? `${lead} which is ${constraint.cls}` : lead;
        if (constraint.nested.length > 0) {
          lines.push(`${pad}${withClass} which {`);
          lines.push(...renderConstraints(constraint.nested, depth + 1));
          lines.push(`${pad}}${tail}`);
        } else {
          lines.push(`${pad}${withClass}${tail}`);
        }
        break;
      }
      case "comparison": {
        const lead =
          constraint.op === "equals"
            ? `equals ${constraint.rhs}`
            : `is ${constraint.op} ${constraint.rhs}`;
        lines.push(`${pad}${lead}${tail}`);
        break;
      }
      case "value":
        lines.push(`${pad}has value "${constraint.text}"${tail}`);
        break;
      case "unit":
        lines.push(`${pad}has unit "${constraint.text}"${tail}`);
        break;
    }
  });
  return lines;
}

function unique(values: string[]): string[] {
  return [...new Set(values)].sort();
}
