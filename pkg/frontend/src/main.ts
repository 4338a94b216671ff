/** Browser wiring: builder form on the left, dashboard on the right.
 *
 * Mutations wait for the server's revision confirmation before the UI
 * re-renders (no optimistic updates).
 */

import { ApiClient, ApiError } from "./api.js";
import { BlockHandle, RuleBuilder } from "./builder.js";
import { Dashboard, groupNotifications } from "./dashboard.js";
import {
  escapeHtml,
  renderExplanation,
  renderFindings,
  renderNotificationsPanel,
  renderRulePreview,
} from "./render.js";
import type { SchemaPayload } from "./types.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function option(value: string): string {
  return `<option value="${escapeHtml(value)}">${escapeHtml(value)}</option>`;
}

async function boot(): Promise<void> {
  const base =
    new URLSearchParams(location.search).get("api") ?? "http://127.0.0.1:8000";
  const api = new ApiClient(base);
  const dashboard = new Dashboard(api);

  let schema: SchemaPayload;
  try {
    schema = await api.getSchema();
  } catch {
    el("offline").hidden = false;
    return;
  }

  let builder = new RuleBuilder(schema, schema.templates[0]!.name, "MyRule");
  let currentBlock: BlockHandle | null = null;
  let varCounter = 0;

  const conditionSelect = el<HTMLSelectElement>("condition-class");
  const resultSelect = el<HTMLSelectElement>("result-class");
  const propertySelect = el<HTMLSelectElement>("property");
  const objectSelect = el<HTMLSelectElement>("object-class");

  const refreshOptions = () => {
    conditionSelect.innerHTML = builder.conditionClassOptions().map(option).join("");
    resultSelect.innerHTML = builder.resultClassOptions().map(option).join("");
    const cls = currentBlock?.cls;
    propertySelect.innerHTML = cls
      ? builder.propertyOptions(cls).map(option).join("")
      : "";
    const relation = propertySelect.value;
    objectSelect.innerHTML = relation
      ? builder.objectClassOptions(relation).map(option).join("")
      : "";
    el("preview").innerHTML = renderRulePreview(builder);
  };

  propertySelect.addEventListener("change", refreshOptions);

  el("add-condition").addEventListener("click", () => {
    varCounter += 1;
    currentBlock = builder.addConditionBlock(
      `v${varCounter}`,
      conditionSelect.value,
    );
    refreshOptions();
  });

  el("add-property").addEventListener("click", () => {
    if (!currentBlock) return;
    varCounter += 1;
    const relation = propertySelect.value;
    const info = builder.relationInfo(relation);
    const literal = ["string", "decimal", "date", "boolean"].includes(info.range);
    try {
      currentBlock.addProperty(
        relation,
        `v${varCounter}`,
        literal ? undefined : objectSelect.value,
      );
    } catch (error) {
      el("preview").innerHTML = `<p class="error">${escapeHtml(String(error))}</p>`;
      return;
    }
    refreshOptions();
  });

  el("add-result").addEventListener("click", () => {
    varCounter += 1;
    const block = builder.addResultBlock(`v${varCounter}`, resultSelect.value);
    const value = el<HTMLInputElement>("result-value").value;
    const unit = el<HTMLInputElement>("result-unit").value;
    if (value) block.setValue(value);
    if (unit) block.setUnit(unit);
    refreshOptions();
  });

  el("submit-rule").addEventListener("click", async () => {
    if (builder.validate().length > 0) {
      refreshOptions(); // issues shown inline; submission blocked locally
      return;
    }
    try {
      const response = await api.postRule(builder.text(), dashboard.state.revision);
      el("submit-status").textContent =
        `accepted; ${response.derived.length} derived finding(s)`;
      builder = new RuleBuilder(schema, schema.templates[0]!.name, "MyRule");
      currentBlock = null;
      await render();
    } catch (error) {
      if (error instanceof ApiError) {
        const diagnostics = error.ruleDiagnostics();
        el("submit-status").textContent = diagnostics
          ? diagnostics.diagnostics.join("; ")
          : `rejected (${error.status})`;
      } else {
        el("submit-status").textContent = String(error);
      }
    }
  });

  el("step").addEventListener("click", async () => {
    const outcome = await dashboard.step();
    el("step-status").textContent = outcome.changed
      ? `tick advanced (${outcome.events.length} events)`
      : "no changes";
    await render();
  });

  el("notifications").addEventListener("click", async (event) => {
    const target = event.target as HTMLElement;
    if (target.classList.contains("explain")) {
      const findingId = target.dataset.finding!;
      const tree = await dashboard.requestExplanation(findingId);
      el("explanation").innerHTML = renderExplanation(tree);
    }
  });

  const render = async () => {
    const state = await dashboard.refresh();
    el("offline").hidden = !state.offline;
    el("findings").innerHTML = renderFindings(state.findings);
    el("notifications").innerHTML = renderNotificationsPanel(
      groupNotifications(state.notifications),
    );
    refreshOptions();
  };

  await render();
}

boot();
