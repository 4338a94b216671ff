/** Typed fetch client for the ontodesk API. */

import type {
  ExplanationNode,
  Finding,
  NotificationRecord,
  RuleEntry,
  RulePostResponse,
  SchemaPayload,
  StepResponse,
} from "./types.js";

export interface RuleDiagnostics {
  error: string;
  diagnostics: string[];
  line?: number | null;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: unknown,
  ) {
    super(`api error ${status}`);
  }

  /** Structured diagnostics from a 400 rule rejection, if present. */
  ruleDiagnostics(): RuleDiagnostics | null {
    const detail = this.detail as RuleDiagnostics | undefined;
    if (detail && Array.isArray(detail.diagnostics)) {
      return detail;
    }
    return null;
  }
}

export class ApiClient {
  constructor(readonly baseUrl: string) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.baseUrl + path, init);
    const body = await response.json().catch(() => null);
    if (!response.ok) {
      throw new ApiError(response.status, (body as { detail?: unknown })?.detail);
    }
    return body as T;
  }

  getSchema(): Promise<SchemaPayload> {
    return this.request("/schema");
  }

  async getRules(): Promise<RuleEntry[]> {
    const body = await this.request<{ rules: RuleEntry[] }>("/rules");
    return body.rules;
  }

  postRule(text: string, revision: number): Promise<RulePostResponse> {
    return this.request("/rules", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ text, revision }),
    });
  }

  async getFindings(): Promise<Finding[]> {
    const body = await this.request<{ findings: Finding[] }>("/findings");
    return body.findings;
  }

  async getExplanation(findingId: string): Promise<ExplanationNode> {
    const body = await this.request<{ explanation: ExplanationNode }>(
      `/explanations/${encodeURIComponent(findingId)}`,
    );
    return body.explanation;
  }

  async getNotifications(user?: string): Promise<NotificationRecord[]> {
    const query = user ? `?user=${encodeURIComponent(user)}` : "";
    const body = await this.request<{ notifications: NotificationRecord[] }>(
      `/notifications${query}`,
    );
    return body.notifications;
  }

  step(revision: number): Promise<StepResponse> {
    return this.request("/step", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ revision }),
    });
  }
}
