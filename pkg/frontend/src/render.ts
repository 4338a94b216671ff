/** HTML-string renderers for the panels (framework-free). */

import type { RuleBuilder } from "./builder.js";
import type { UserGroup } from "./dashboard.js";
import { leavesOf, needsExplanationLink } from "./dashboard.js";
import type { ExplanationNode, Finding } from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

export function renderNotificationsPanel(groups: UserGroup[]): string {
  if (groups.length === 0) {
    return '<p class="empty">No notifications yet. Run or step the scenario.</p>';
  }
  const sections = groups.map((group) => {
    const severityBlocks = group.groups.map((sev) => {
      const items = sev.items.map((record) => {
        const explanation = needsExplanationLink(record)
          ? `<button class="explain" data-finding="${escapeHtml(record.finding_id)}">request explanation</button>`
          : "";
        return `<li class="note ${record.rendering}">
          <span class="channel">${escapeHtml(record.channel)}</span>
          <pre>${escapeHtml(record.body)}</pre>
          ${explanation}
        </li>`;
      });
      return `<div class="severity ${sev.severity}">
        <h4>${escapeHtml(sev.severity)}</h4>
        <ul>${items.join("")}</ul>
      </div>`;
    });
    return `<section class="user">
      <h3>${escapeHtml(group.user)}</h3>
      ${severityBlocks.join("")}
    </section>`;
  });
  return sections.join("");
}

export function renderFindings(findings: Finding[]): string {
  if (findings.length === 0) {
    return '<p class="empty">No findings yet.</p>';
  }
  const rows = findings.map((finding) => {
    const assertions = finding.assertions
      .map(
        (a) =>
          `<li>${escapeHtml(a.relation)} ${escapeHtml(a.object)}` +
          ` <span class="prov">${escapeHtml(a.provenance)}</span></li>`,
      )
      .join("");
    const badge = finding.derived ? '<span class="badge">derived</span>' : "";
    return `<article class="finding" data-id="${escapeHtml(finding.id)}">
      <h4>${escapeHtml(finding.id)} ${badge}</h4>
      <p class="classes">${finding.classes.map(escapeHtml).join(", ")}</p>
      <ul>${assertions}</ul>
    </article>`;
  });
  return rows.join("");
}

export function renderExplanation(tree: ExplanationNode): string {
  const leaves = leavesOf(tree)
    .map(
      (leaf) =>
        `<li>${escapeHtml(leaf.subject)} ${escapeHtml(leaf.relation)} ${escapeHtml(leaf.object)}</li>`,
    )
    .join("");
  const rule = tree.rule ? `<p>via rule <b>${escapeHtml(tree.rule)}</b></p>` : "";
  return `<div class="explanation">
    ${rule}
    <h4>FACTS</h4>
    <ul>${leaves}</ul>
    <h4>CONCLUSION</h4>
    <p>${escapeHtml(tree.subject)} ${escapeHtml(tree.relation)} ${escapeHtml(tree.object)}</p>
  </div>`;
}

/** Live canonical text beside the form, so users learn the textual form. */
export function renderRulePreview(builder: RuleBuilder): string {
  const problems = builder.validate();
  const issues = problems.length
    ? `<ul class="issues">${problems.map((p) => `<li>${escapeHtml(p)}</li>`).join("")}</ul>`
    : "";
  return `${issues}<pre class="rule-text">${escapeHtml(builder.text())}</pre>`;
}
