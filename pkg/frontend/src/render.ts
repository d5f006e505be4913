/**
 * HTML/SVG builders for the review page.
 *
 * Pure string functions so rendering stays testable without a browser;
 * main.ts owns the actual DOM. Interactive elements carry data-action
 * attributes and are wired up by event delegation. Graph layout is
 * computed here and purely cosmetic: nothing about positions is ever
 * stored or sent back to the server.
 */

import { GraphNodeDoc, MarkerDoc } from "./api.js";
import {
  Card,
  GraphOverlay,
  hitCount,
  highlightedEdges,
  highlightedNodes,
  TraceView,
} from "./state.js";

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;")
    .replaceAll("'", "&#39;");
}

function markerPicker(card: Card, pos: number, markers: MarkerDoc[]): string {
  const buttons = markers.map((marker) => {
    const on = card.markerIds.includes(marker.id);
    return (
      `<button type="button" class="marker${on ? " on" : ""}"` +
      ` data-action="toggle-marker" data-card="${pos}"` +
      ` data-marker="${escapeHtml(marker.id)}"` +
      ` title="${escapeHtml(marker.definition)}">${escapeHtml(marker.id)}</button>`
    );
  });
  return `<div class="markers">${buttons.join("")}</div>`;
}

export function renderCard(
  view: TraceView,
  pos: number,
  markers: MarkerDoc[],
): string {
  const card = view.cards[pos];
  if (card === undefined) return "";
  const classes = ["card", `role-${card.role}`];
  classes.push(card.annotatable ? "annotatable" : "read-only");
  if (pos === view.cursor) classes.push("cursor");
  const parts: string[] = [];
  const flags: string[] = [];
  if (card.isTaskDescription) flags.push("task description");
  if (!card.annotatable) flags.push("read-only");
  const flagHtml = flags.map((f) => ` <span class="flag">${f}</span>`).join("");
  parts.push(`<header>#${card.index} ${escapeHtml(card.role)}${flagHtml}</header>`);
  for (const call of card.toolCalls) {
    parts.push(
      `<div class="tool-call">${escapeHtml(call.name)}(${escapeHtml(
        JSON.stringify(call.arguments),
      )})</div>`,
    );
  }
  parts.push(`<pre class="content">${escapeHtml(card.content)}</pre>`);
  if (card.annotatable) {
    parts.push(markerPicker(card, pos, markers));
    parts.push(
      `<input class="note" data-action="note" data-card="${pos}"` +
        ` placeholder="note for this message"` +
        ` value="${escapeHtml(card.note)}">`,
    );
  }
  if (pos === view.cursor && view.notice !== "") {
    parts.push(`<div class="inline-notice">${escapeHtml(view.notice)}</div>`);
  }
  return `<article class="${classes.join(" ")}" data-card="${pos}">${parts.join("")}</article>`;
}

function controls(view: TraceView): string {
  const state = view.submitted
    ? `submitted (revision ${view.revision})`
    : view.revision > 0
      ? `draft (revision ${view.revision})`
      : "not stored yet";
  return (
    `<div class="controls">` +
    `<button type="button" data-action="advance">next card</button>` +
    `<button type="button" data-action="save">save draft</button>` +
    `<button type="button" data-action="submit">submit</button>` +
    `<button type="button" data-action="reload">reload from store</button>` +
    `<span class="store-state">${escapeHtml(state)}</span>` +
    (view.notice !== "" ? `<span class="status">${escapeHtml(view.notice)}</span>` : "") +
    `</div>`
  );
}

export function renderTraceView(view: TraceView, markers: MarkerDoc[]): string {
  const meta = view.trace;
  const header =
    `<header class="trace-meta"><h1>${escapeHtml(meta.trace_id)}</h1>` +
    `<p>${escapeHtml(meta.model)} on ${escapeHtml(meta.environment)}` +
    ` / ${escapeHtml(meta.task_id)} (trial ${meta.trial})` +
    ` as ${escapeHtml(view.annotatorId)}</p></header>`;
  const cards = view.cards.map((_, pos) => renderCard(view, pos, markers)).join("");
  const note =
    `<label class="trace-note">notes on the whole trace` +
    `<textarea data-action="trace-note">${escapeHtml(view.traceNote)}</textarea></label>`;
  return `<section class="trace">${header}${cards}${note}${controls(view)}</section>`;
}

// Lane per node type keeps the drawing readable; unknown types share
// the bottom lane. Order matches the taxonomy's usual presentation.
const TYPE_LANES = ["H", "T", "E", "J", "C", "F", "N"];
const LANE_HEIGHT = 64;
const TIME_STEP = 96;
const MARGIN = 48;

function nodePosition(
  node: GraphNodeDoc,
  collisions: Map<string, number>,
): { x: number; y: number } {
  const lane = TYPE_LANES.indexOf(node.type);
  const key = `${node.time}:${node.type}`;
  const bump = collisions.get(key) ?? 0;
  collisions.set(key, bump + 1);
  return {
    x: MARGIN + node.time * TIME_STEP + bump * 18,
    y: MARGIN + (lane >= 0 ? lane : TYPE_LANES.length) * LANE_HEIGHT + bump * 10,
  };
}

export function renderLegend(overlay: GraphOverlay, legendMotifs?: string[]): string {
  const names =
    legendMotifs ?? [...new Set(overlay.hits.map((hit) => hit.motif))].sort();
  if (names.length === 0) return `<div class="legend">no motif hits</div>`;
  const items = names.map((name) => {
    const on = overlay.active.has(name);
    return (
      `<button type="button" class="motif-toggle${on ? " on" : ""}"` +
      ` data-action="toggle-motif" data-motif="${escapeHtml(name)}">` +
      `${escapeHtml(name)} <span class="badge">${hitCount(overlay, name)}</span></button>`
    );
  });
  return `<div class="legend">${items.join("")}</div>`;
}

export function renderOverlay(overlay: GraphOverlay, legendMotifs?: string[]): string {
  const hlNodes = highlightedNodes(overlay);
  const hlEdges = highlightedEdges(overlay);
  const collisions = new Map<string, number>();
  const positions = new Map<string, { x: number; y: number }>();
  let maxTime = 0;
  for (const node of overlay.graph.nodes) {
    positions.set(node.node_id, nodePosition(node, collisions));
    if (node.time > maxTime) maxTime = node.time;
  }
  const width = MARGIN * 2 + (maxTime + 1) * TIME_STEP;
  const height = MARGIN * 2 + (TYPE_LANES.length + 1) * LANE_HEIGHT;
  const parts: string[] = [];
  for (const edge of overlay.graph.edges) {
    const a = positions.get(edge.src);
    const b = positions.get(edge.dst);
    if (a === undefined || b === undefined) continue;
    const id = `${edge.src}->${edge.dst}:${edge.relation}`;
    const cls = hlEdges.has(id) ? "edge hl" : "edge";
    parts.push(
      `<line class="${cls}" x1="${a.x}" y1="${a.y}" x2="${b.x}" y2="${b.y}"></line>` +
        `<text class="edge-label" x="${(a.x + b.x) / 2}" y="${(a.y + b.y) / 2 - 4}">` +
        `${escapeHtml(edge.relation)}</text>`,
    );
  }
  for (const node of overlay.graph.nodes) {
    const at = positions.get(node.node_id);
    if (at === undefined) continue;
    const cls = hlNodes.has(node.node_id) ? "node hl" : "node";
    parts.push(
      `<g class="${cls}" data-node="${escapeHtml(node.node_id)}">` +
        `<circle cx="${at.x}" cy="${at.y}" r="16"></circle>` +
        `<text class="node-type" x="${at.x}" y="${at.y + 4}">${escapeHtml(node.type)}</text>` +
        `<text class="node-id" x="${at.x}" y="${at.y + 32}">${escapeHtml(node.node_id)}</text>` +
        `<title>${escapeHtml(node.text)}</title></g>`,
    );
  }
  return (
    `<section class="graph">${renderLegend(overlay, legendMotifs)}` +
    `<svg viewBox="0 0 ${width} ${height}" width="${width}" height="${height}">` +
    `${parts.join("")}</svg></section>`
  );
}

export function renderApp(
  view: TraceView,
  overlay: GraphOverlay | null,
  markers: MarkerDoc[],
): string {
  const graphPane =
    overlay === null
      ? `<section class="graph"><p>no graph stored for this trace</p></section>`
      : renderOverlay(overlay);
  return `<main class="panes">${renderTraceView(view, markers)}${graphPane}</main>`;
}
