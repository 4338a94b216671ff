/** Payload shapes of the ontodesk HTTP API. */

export interface ClassInfo {
  name: string;
  parents: string[];
  namespace: string;
}

export interface RelationInfo {
  name: string;
  domain: string;
  range: string;
}

export interface TemplateSlotInfo {
  slot: string;
  roots: string[];
  min: number;
  options: string[];
}

export interface TemplateInfo {
  name: string;
  condition: TemplateSlotInfo[];
  result: TemplateSlotInfo[];
}

export interface SchemaOptions {
  properties_by_class: Record<string, string[]>;
  object_options: Record<string, string[]>;
  phrases: Record<string, string>;
  operators: Record<string, string[]>;
}

export interface SchemaPayload {
  classes: ClassInfo[];
  relations: RelationInfo[];
  templates: TemplateInfo[];
  options: SchemaOptions;
  severities: string[];
  revision: number;
}

export interface FindingAssertion {
  relation: string;
  object: string;
  provenance: string;
}

export interface ExplanationNode {
  subject: string;
  relation: string;
  object: string;
  provenance: string;
  rule?: string;
  children?: ExplanationNode[];
}

export interface Finding {
  id: string;
  classes: string[];
  assertions: FindingAssertion[];
  derived: boolean;
  explanation?: ExplanationNode;
}

export interface NotificationRecord {
  message_id: string;
  user: string;
  channel: string;
  timestamp: string;
  tick: number;
  rendering: "full" | "truncated";
  body: string;
  status: string;
  severity: string;
  finding_id: string;
}

export interface EventRecord {
  tick: number;
  type: string;
  [key: string]: unknown;
}

export interface StepResponse {
  revision: number;
  quiescent: boolean;
  events: EventRecord[];
}

export interface RulePostResponse {
  revision: number;
  derived: Finding[];
  events: EventRecord[];
}

export interface RuleEntry {
  id: string;
  text: string;
}
