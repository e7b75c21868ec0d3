// HTML-string renderers. Pure and DOM-free so the contract tests can assert
// on rendered markup directly; main.ts injects the strings into the page.

import type { MemoRecordView, TraceView } from "./api.js";
import type { ChatMessage, ErrorBanner } from "./state.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

// Transcript bubbles; bubble k is conversation line k+1, so memo spans can
// scroll to their first line by element id.
export function renderMessages(messages: ChatMessage[]): string {
  return messages
    .map(
      (message, k) =>
        `<div class="msg ${message.role}" id="line-${k + 1}">${escapeHtml(message.text)}</div>`,
    )
    .join("");
}

export function renderMemoPanel(memo: MemoRecordView[]): string {
  if (memo.length === 0) {
    return '<p class="placeholder">No memo yet</p>';
  }
  const rows = memo
    .map((record) => {
      const span = `${record.start}-${record.end}`;
      const lineCount = record.end - record.start + 1;
      const summary = record.summary === undefined ? "" : escapeHtml(record.summary);
      return (
        `<tr class="memo-record" data-start="${record.start}">` +
        `<td class="topic">${escapeHtml(record.topic)}</td>` +
        `<td class="summary">${summary}</td>` +
        `<td class="span">${span}</td>` +
        `<td class="lines">${lineCount}</td></tr>`
      );
    })
    .join("");
  return (
    "<table><thead><tr><th>topic</th><th>summary</th><th>span</th><th>lines</th></tr></thead>" +
    `<tbody>${rows}</tbody></table>`
  );
}

export function renderTracePanel(trace: TraceView | null): string {
  if (trace === null) {
    return '<p class="placeholder">No turns yet</p>';
  }
  const selected = new Set(trace.selected);
  const options = trace.retrieval_options
    .map((option) => {
      const classes = ["option"];
      if (selected.has(option.ordinal)) {
        classes.push("selected");
      }
      if (option.is_noto) {
        classes.push("noto");
      }
      const badge = option.is_noto ? ' <span class="badge">NOTO</span>' : "";
      const summary = option.summary ? `: ${escapeHtml(option.summary)}` : "";
      return (
        `<li class="${classes.join(" ")}" data-ordinal="${option.ordinal}">` +
        `(${option.ordinal}) ${escapeHtml(option.topic)}${badge}${summary}</li>`
      );
    })
    .join("");
  const evidence = trace.evidence
    .map((item) => {
      const lines = item.dialog_lines
        .map(
          (line) =>
            `<div class="evidence-line">(line ${line.index}) ${escapeHtml(line.speaker)}: ${escapeHtml(line.text)}</div>`,
        )
        .join("");
      return (
        `<details class="evidence"><summary>${escapeHtml(item.topic)}</summary>` +
        `${lines}</details>`
      );
    })
    .join("");
  const prompts = Object.entries(trace.prompts)
    .map(
      ([stage, prompt]) =>
        `<details class="prompt"><summary>${escapeHtml(stage)}</summary>` +
        `<pre>${escapeHtml(prompt)}</pre></details>`,
    )
    .join("");
  return (
    `<p class="memo-flag">memo written this turn: <b>${trace.memo_written ? "yes" : "no"}</b></p>` +
    `<ul class="options">${options}</ul>` +
    `<div class="evidence-list">${evidence}</div>` +
    `<div class="prompts">${prompts}</div>`
  );
}

export function renderError(error: ErrorBanner | null): string {
  if (error === null) {
    return "";
  }
  const stage = error.stage ? ` during <b>${escapeHtml(error.stage)}</b>` : "";
  return `<div class="error-banner">backend failed${stage}: ${escapeHtml(error.message)}</div>`;
}
