/**
 * Pure HTML renderers for the grounding inspector. Every displayed number is
 * the server's value verbatim (String(x)); bar geometry and heat intensity
 * are presentation only and labeled as such. No model math happens here.
 */

import type { TraceRecord, TranscriptEntry } from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

/** Horizontal bar for a gate value in [0, 1]; the label shows it verbatim. */
export function renderGateBar(name: string, value: number): string {
  const pct = Math.max(0, Math.min(100, value * 100));
  return `
    <div class="gate-row" data-gate="${escapeHtml(name)}">
      <span class="gate-name">${escapeHtml(name)}</span>
      <div class="gate-track"><div class="gate-fill" style="width:${pct}%"></div></div>
      <span class="gate-value mono">${escapeHtml(String(value))}</span>
    </div>
  `;
}

export function renderSourceBadge(source: string): string {
  return `<span class="badge badge-${escapeHtml(source)}">${escapeHtml(source)}</span>`;
}

export function integrityWarning(what: string, expected: number,
                                 got: number): string {
  return `<div class="integrity-warning">data integrity: ${escapeHtml(what)} has ${got} weights for ${expected} tokens</div>`;
}

/**
 * Attention heat over the source text. Intensity is normalized per row by
 * the maximum weight — display only, flagged in the row label. A length
 * mismatch between weights and tokens renders a warning instead.
 */
export function renderHeatmap(label: string, tokens: string[],
                              weights: number[]): string {
  if (tokens.length !== weights.length) {
    return integrityWarning(label, tokens.length, weights.length);
  }
  if (tokens.length === 0) {
    return `<div class="heatmap-empty">${escapeHtml(label)}: no tokens</div>`;
  }
  const peak = Math.max(...weights, 0);
  const chips = tokens.map((tok, i) => {
    const intensity = peak > 0 ? weights[i] / peak : 0;
    return `<span class="heat-token" style="--heat:${intensity.toFixed(4)}" title="${escapeHtml(String(weights[i]))}">${escapeHtml(tok)}</span>`;
  });
  return `
    <div class="heatmap" data-heatmap="${escapeHtml(label)}">
      <div class="heatmap-label">${escapeHtml(label)} <em>(visually normalized)</em></div>
      <div class="heatmap-row">${chips.join("")}</div>
    </div>
  `;
}

/** Triples sorted by weight, heaviest first; weights shown verbatim. */
export function renderTripleList(
  triples: [string, string, string, number][],
): string {
  if (triples.length === 0) {
    return `<div class="triples-empty">no triples attended</div>`;
  }
  const rows = [...triples]
    .sort((a, b) => b[3] - a[3])
    .map(
      ([head, rel, tail, weight], rank) => `
      <li class="triple-row${rank === 0 ? " triple-top" : ""}">
        <span class="mono">(${escapeHtml(head)}, ${escapeHtml(rel)}, ${escapeHtml(tail)})</span>
        <span class="triple-weight mono">${escapeHtml(String(weight))}</span>
      </li>`,
    );
  return `<ol class="triple-list">${rows.join("")}</ol>`;
}

/** Full inspection panel for one generated token. */
export function renderInspector(record: TraceRecord,
                                dialogueTokens: string[],
                                knowledgeTokens: string[]): string {
  return `
    <div class="inspector-token">token <span class="mono">${escapeHtml(record.token)}</span> ${renderSourceBadge(record.source)}</div>
    <div class="gates">
      ${renderGateBar("g1", record.g1)}
      ${renderGateBar("g2", record.g2)}
      ${renderGateBar("g3", record.g3)}
    </div>
    ${renderHeatmap("dialogue", dialogueTokens, record.alpha_d)}
    ${renderHeatmap("knowledge", knowledgeTokens, record.alpha_kb)}
    <div class="triples-label">top triples</div>
    ${renderTripleList(record.alpha_t)}
  `;
}

/** Transcript list; model tokens become clickable chips indexed for
 * inspection. */
export function renderTranscript(entries: TranscriptEntry[]): string {
  return entries
    .map((entry, i) => {
      if (entry.speaker === "you") {
        return `<div class="msg msg-you">${escapeHtml(entry.text)}</div>`;
      }
      const chips = (entry.trace?.trace ?? [])
        .map(
          (rec, j) =>
            `<button class="token-chip" data-entry="${i}" data-token="${j}">${escapeHtml(rec.token)}</button>`,
        )
        .join(" ");
      return `<div class="msg msg-model">${chips || escapeHtml(entry.text)}</div>`;
    })
    .join("");
}

export function renderErrorBanner(message: string): string {
  return `<div class="error-banner">${escapeHtml(message)}</div>`;
}
