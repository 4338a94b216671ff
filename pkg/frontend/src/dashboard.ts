/** Dashboard view models: notification grouping, stepping, explanations.
 *
 * Reads never mutate server state; the only mutating calls are the
 * explicit step() and rule submission paths.
 */

import type { ApiClient } from "./api.js";
import type {
  EventRecord,
  ExplanationNode,
  Finding,
  NotificationRecord,
} from "./types.js";

const SEVERITY_ORDER = ["CriticalAlert", "Warning", "Notification"];

export function severityRank(severity: string): number {
  const index = SEVERITY_ORDER.indexOf(severity);
  return index === -1 ? SEVERITY_ORDER.length : index;
}

export interface SeverityGroup {
  severity: string;
  items: NotificationRecord[];
}

export interface UserGroup {
  user: string;
  groups: SeverityGroup[];
}

/** Group outbox records by user, severities ordered most severe first. */
export function groupNotifications(records: NotificationRecord[]): UserGroup[] {
  const byUser = new Map<string, Map<string, NotificationRecord[]>>();
  for (const record of records) {
    const severities = byUser.get(record.user) ?? new Map();
    byUser.set(record.user, severities);
    const items = severities.get(record.severity) ?? [];
    items.push(record);
    severities.set(record.severity, items);
  }
  return [...byUser.keys()].sort().map((user) => ({
    user,
    groups: [...byUser.get(user)!.entries()]
      .sort((a, b) => severityRank(a[0]) - severityRank(b[0]))
      .map(([severity, items]) => ({
        severity,
        items: items.slice().sort((a, b) => a.tick - b.tick),
      })),
  }));
}

/** Truncated messages expose explanation-on-request. */
export function needsExplanationLink(record: NotificationRecord): boolean {
  return record.rendering === "truncated";
}

export function leavesOf(node: ExplanationNode): ExplanationNode[] {
  if (!node.children || node.children.length === 0) {
    return [node];
  }
  const collected: ExplanationNode[] = [];
  const seen = new Set<string>();
  for (const child of node.children) {
    for (const leaf of leavesOf(child)) {
      const key = `${leaf.subject}|${leaf.relation}|${leaf.object}`;
      if (!seen.has(key)) {
        seen.add(key);
        collected.push(leaf);
      }
    }
  }
  return collected;
}

export interface StepOutcome {
  quiescent: boolean;
  changed: boolean;
  revision: number;
  events: EventRecord[];
}

export interface DashboardState {
  revision: number;
  findings: Finding[];
  notifications: NotificationRecord[];
  offline: boolean;
}

export class Dashboard {
  state: DashboardState = {
    revision: 0,
    findings: [],
    notifications: [],
    offline: false,
  };

  constructor(private readonly api: ApiClient) {}

  /** Read-only refresh; flips to offline on API failure, never writes. */
  async refresh(): Promise<DashboardState> {
    try {
      const schema = await this.api.getSchema();
      const findings = await this.api.getFindings();
      const notifications = await this.api.getNotifications();
      this.state = {
        revision: schema.revision,
        findings,
        notifications,
        offline: false,
      };
    } catch {
      this.state = { ...this.state, offline: true };
    }
    return this.state;
  }

  /** Single explicit mutation: advance one tick. */
  async step(): Promise<StepOutcome> {
    const response = await this.api.step(this.state.revision);
    const changed = response.events.some((e) => e.type !== "quiescent");
    await this.refresh();
    return {
      quiescent: response.quiescent,
      changed,
      revision: response.revision,
      events: response.events,
    };
  }

  requestExplanation(findingId: string): Promise<ExplanationNode> {
    return this.api.getExplanation(findingId);
  }
}
