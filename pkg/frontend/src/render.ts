/**
 * Pure HTML renderers for the view state.
 *
 * Each function maps a state slice to a markup string; main.ts swaps
 * them into the page. Keeping them side-effect free lets the tests
 * assert on output without a DOM.
 */

import { HypothesisInfo, TreeNodeView } from "./api.js";
import { CandidateRow, ViewState } from "./state.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderHypotheses(items: HypothesisInfo[]): string {
  const rows = items.map(
    (h) =>
      `<li><button class="hypothesis" data-hypothesis="${escapeHtml(h.fact_id)}">` +
      `${escapeHtml(h.text)}</button></li>`
  );
  return `<ul class="hypotheses">${rows.join("")}</ul>`;
}

function renderNode(node: TreeNodeView, selectedId: string | null): string {
  const selected = node.fact_id === selectedId ? " selected" : "";
  const children =
    node.children.length > 0
      ? `<ul>${node.children.map((c) => renderNode(c, selectedId)).join("")}</ul>`
      : "";
  return (
    `<li><span class="node${selected}" data-node-id="${escapeHtml(node.fact_id)}">` +
    `<span class="role">${escapeHtml(node.role)}</span> ` +
    `${escapeHtml(node.text)}</span>${children}</li>`
  );
}

/** Nested outline of the session tree, exactly as the server reports it. */
export function renderTree(root: TreeNodeView | null, selectedId: string | null): string {
  if (root === null) {
    return `<p class="empty">no session</p>`;
  }
  return `<ul class="tree">${renderNode(root, selectedId)}</ul>`;
}

function renderCandidate(row: CandidateRow): string {
  const verdict =
    row.verdict === null
      ? ""
      : `<span class="verdict ${row.verdict}">${row.verdict === "pos" ? "relevant" : "irrelevant"}</span>`;
  return (
    `<li data-fact-id="${escapeHtml(row.factId)}">` +
    `<span class="score">${row.score.toFixed(3)}</span>` +
    `<span class="badge" title="token overlap with the query">J ${row.overlap.toFixed(2)}</span>` +
    `${escapeHtml(row.text)} ${verdict}` +
    `<button data-act="relevant" data-fact-id="${escapeHtml(row.factId)}">relevant</button>` +
    `<button data-act="irrelevant" data-fact-id="${escapeHtml(row.factId)}">irrelevant</button>` +
    `</li>`
  );
}

/** Ranked candidate list in server order; never re-sorted client side. */
export function renderCandidates(state: ViewState): string {
  if (state.queryNodeId === null) {
    return `<p class="empty">select a tree node and query</p>`;
  }
  const rows = state.candidates.map(renderCandidate);
  return (
    `<p class="query-target">candidates for <code>${escapeHtml(state.queryNodeId)}</code></p>` +
    `<ol class="candidates">${rows.join("")}</ol>`
  );
}

export function renderPools(state: ViewState): string {
  if (state.pools === null) {
    return `<p class="empty">no pools yet</p>`;
  }
  const p = state.pools;
  return (
    `<span class="pools">positives: ${p.positives.length}, ` +
    `negatives: ${p.negatives.length}, round ${p.round}</span>`
  );
}

export function renderTraining(state: ViewState): string {
  const t = state.training;
  if (t === null) {
    return `<span class="training idle">idle (index generation ${state.indexGeneration})</span>`;
  }
  if (t.state === "running") {
    return `<span class="training running">training ${escapeHtml(t.run_id)}, epoch ${t.epoch_losses.length}</span>`;
  }
  if (t.state === "failed") {
    return `<span class="training failed">training failed: ${escapeHtml(t.detail ?? "")}</span>`;
  }
  return (
    `<span class="training done">done in ${t.wall_seconds.toFixed(1)}s, ` +
    `index generation ${state.indexGeneration}</span>`
  );
}

export function renderError(state: ViewState): string {
  if (state.error === null) {
    return "";
  }
  return `<div class="error">${escapeHtml(state.error)}</div>`;
}
