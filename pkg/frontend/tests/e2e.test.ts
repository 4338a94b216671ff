/** End-to-end against the real Python API server.
 *
 * Builds the promotion rule exclusively through builder option picks,
 * submits it, and follows the CEO's truncated notification to the
 * explanation, exactly as the browser page would.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { createServer } from "node:net";
import { fileURLToPath } from "node:url";
import path from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { RuleBuilder } from "../src/builder.js";
import { Dashboard, groupNotifications, leavesOf } from "../src/dashboard.js";

const repoRoot = path.resolve(
  path.dirname(fileURLToPath(import.meta.url)),
  "..",
  "..",
);
const scenario = path.join(
  repoRoot,
  "scenarios",
  "case-study",
  "scenario-norules.yaml",
);

let server: ChildProcess;
let api: ApiClient;

async function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const probe = createServer();
    probe.once("error", reject);
    probe.listen(0, "127.0.0.1", () => {
      const address = probe.address();
      if (address && typeof address === "object") {
        const port = address.port;
        probe.close(() => resolve(port));
      } else {
        reject(new Error("no port"));
      }
    });
  });
}

async function waitForServer(base: string, timeoutMs = 30000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  let lastError: unknown;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${base}/schema`);
      if (response.ok) return;
    } catch (error) {
      lastError = error;
    }
    await new Promise((r) => setTimeout(r, 200));
  }
  throw new Error(`API server did not come up: ${lastError}`);
}

beforeAll(async () => {
  const port = await freePort();
  server = spawn(
    "python3",
    ["-m", "ontodesk.api", "--scenario", scenario, "--port", String(port)],
    { cwd: repoRoot, stdio: ["ignore", "pipe", "pipe"] },
  );
  server.stderr?.on("data", () => {});
  api = new ApiClient(`http://127.0.0.1:${port}`);
  await waitForServer(`http://127.0.0.1:${port}`);
}, 40000);

afterAll(() => {
  server?.kill();
});

describe("building the promotion rule through the UI", () => {
  it("steps to quiescence, submits the built rule, surfaces the derived finding", async () => {
    const dashboard = new Dashboard(api);
    await dashboard.refresh();

    // drive the scenario: warehouse findings appear, nothing derived yet
    for (let i = 0; i < 20; i += 1) {
      const outcome = await dashboard.step();
      if (outcome.quiescent) break;
    }
    expect(dashboard.state.findings.length).toBeGreaterThan(0);
    expect(dashboard.state.findings.every((f) => !f.derived)).toBe(true);
    expect(dashboard.state.notifications).toHaveLength(0);

    // assemble the rule purely from schema options
    const schema = await api.getSchema();
    const b = new RuleBuilder(schema, "GeneralFinding", "NewPhonePromotion");

    const ff = b.addConditionBlock("first_finding", "Increase");
    ff.addProperty("relatedTo", "first_amount_sold", "Measure");
    ff.addProperty("relatedTo", "first_date", "Dimension");
    ff.addProperty("relatedTo", "brand", "PhoneBrand");

    const sf = b.addConditionBlock("second_finding", "Increase");
    sf.addProperty("relatedTo", "second_amount_sold", "Measure");
    sf.addProperty("relatedTo", "second_date", "Dimension")
      .addComparison("greater than", "first_date");
    sf.addProperty("relatedTo", "brand", "PhoneBrand");

    const fp = b.addConditionBlock("found_phone", "NewPhone");
    fp.addProperty("hasCharacteristic", "brand", "PhoneBrand");
    fp.addProperty("dateOfAppearance", "found_date")
      .addComparison("greater than", "now - 14 days");

    b.addConditionBlock("new_customer", "NewCustomer");

    const pd = b.addResultBlock("promotion_discount", "DiscountPrice");
    pd.addRelated("new_customer");
    pd.addRelated("found_phone");
    pd.setValue("10");
    pd.setUnit("%");

    expect(b.validate()).toEqual([]);

    const response = await api.postRule(b.text(), dashboard.state.revision);
    const derived = response.derived.filter((f) =>
      f.id.startsWith("PromotionDiscount_"),
    );
    expect(derived).toHaveLength(1);
    const finding = derived[0]!;
    expect(finding.derived).toBe(true);
    expect(finding.classes).toContain("DiscountPrice");
    const values = new Map(finding.assertions.map((a) => [a.relation, a.object]));
    expect(values.get("hasValue")).toBe("10");
    expect(values.get("hasUnit")).toBe("%");

    // the findings panel surfaces it immediately
    await dashboard.refresh();
    const shown = dashboard.state.findings.find((f) => f.id === finding.id);
    expect(shown?.derived).toBe(true);
  }, 40000);

  it("ceo's truncated notification exposes a working explanation-on-request", async () => {
    const dashboard = new Dashboard(api);
    await dashboard.refresh();
    const groups = groupNotifications(dashboard.state.notifications);
    expect(groups.map((g) => g.user)).toEqual(["cao", "ceo", "cmo"]);

    const ceo = groups.find((g) => g.user === "ceo")!;
    const record = ceo.groups[0]!.items[0]!;
    expect(record.rendering).toBe("truncated");
    expect(record.channel).toBe("mobile-agent");
    expect(record.body).toContain("Nokia E72");
    expect(record.body).toContain("10%");
    expect(record.body).toContain("explanation available on request");

    const tree = await dashboard.requestExplanation(record.finding_id);
    expect(tree.rule).toBe("NewPhonePromotion");
    const leaves = leavesOf(tree);
    const subjects = new Set(leaves.map((l) => l.subject));
    expect(subjects.has("Finding_nokia_quarter_Q1_2010")).toBe(true);
    expect(subjects.has("Finding_nokia_month_M2010_03")).toBe(true);
    expect(subjects.has("Nokia_E72")).toBe(true);
  }, 20000);

  it("rejects a rule with schema problems via structured diagnostics", async () => {
    const schema = await api.getSchema();
    const revision = schema.revision;
    try {
      await api.postRule(
        'rule Bad uses GeneralFinding\nIF\n  x is Widget\nTHEN\n  y is Finding which { has value "1" }\n',
        revision,
      );
      expect.unreachable("server accepted an invalid rule");
    } catch (error) {
      expect(error).toBeInstanceOf(ApiError);
      const diagnostics = (error as ApiError).ruleDiagnostics();
      expect(diagnostics?.diagnostics.some((d) => d.includes("Widget"))).toBe(true);
    }
  });

  it("stale revisions are rejected before mutating", async () => {
    try {
      await api.step(99999);
      expect.unreachable("stale step accepted");
    } catch (error) {
      expect((error as ApiError).status).toBe(409);
    }
  });
});
