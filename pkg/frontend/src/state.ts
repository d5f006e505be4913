/**
 * View-model for the annotation review page.
 *
 * Everything here is derived from documents served by the HTTP API and
 * mutates only in memory; persistence happens exclusively through
 * ApiClient calls in the save/submit flows. The client-side gates use
 * the same predicates the server enforces, so anything blocked locally
 * would also be rejected remotely, never the other way around.
 */

import {
  AnnotationDoc,
  ApiClient,
  ApiError,
  GraphDoc,
  MessageDoc,
  MotifHitDoc,
  MotifsDoc,
  NetworkError,
  NodeMarksDoc,
  TraceDoc,
} from "./api.js";

/** One message rendered as a card. Non-annotatable cards are read-only. */
export interface Card {
  index: number;
  role: string;
  content: string;
  toolCalls: { name: string; arguments: Record<string, unknown> }[];
  isTaskDescription: boolean;
  annotatable: boolean;
  markerIds: string[];
  note: string;
}

export interface TraceView {
  trace: TraceDoc;
  annotatorId: string;
  cards: Card[];
  /** Position in cards; equals cards.length once the reviewer walked past the end. */
  cursor: number;
  /** Last revision seen from the store; 0 means nothing stored yet. */
  revision: number;
  submitted: boolean;
  traceNote: string;
  /** Inline message shown next to the controls (gate blocks, save results). */
  notice: string;
}

/**
 * Mirrors the server's marker-eligibility rule: system messages,
 * iteration-limit errors, observations and the task description are
 * read-only context. Keeping this predicate identical to the server's
 * is what makes the local completeness gate a subset of the remote one.
 */
export function isAnnotatable(msg: MessageDoc): boolean {
  if (msg.role === "system" || msg.is_iteration_limit_error) return false;
  return msg.role !== "observation" && !msg.is_task_description;
}

export function buildTraceView(
  trace: TraceDoc,
  annotatorId: string,
  stored: AnnotationDoc | null,
): TraceView {
  const cards: Card[] = trace.messages.map((msg) => {
    const marks = stored?.nodes[String(msg.index)];
    return {
      index: msg.index,
      role: msg.role,
      content: msg.content,
      toolCalls: (msg.tool_calls ?? []).map((tc) => ({
        name: tc.name,
        arguments: tc.arguments,
      })),
      isTaskDescription: msg.is_task_description,
      annotatable: isAnnotatable(msg),
      markerIds: [...(marks?.marker_ids ?? [])],
      note: marks?.note ?? "",
    };
  });
  return {
    trace,
    annotatorId,
    cards,
    cursor: 0,
    revision: stored?.revision ?? 0,
    submitted: stored?.submitted ?? false,
    traceNote: stored?.trace_note ?? "",
    notice: "",
  };
}

export interface AdvanceResult {
  ok: boolean;
  message?: string;
}

/**
 * Move the review cursor one card forward. An annotatable card holds
 * the cursor until it carries at least one marker; read-only cards
 * (observations, the task description) never block. Earlier cards stay
 * editable regardless of the cursor.
 */
export function advanceCursor(view: TraceView): AdvanceResult {
  if (view.cursor >= view.cards.length) return { ok: true };
  const card = view.cards[view.cursor];
  if (card !== undefined && card.annotatable && card.markerIds.length === 0) {
    view.notice = `message ${card.index} needs at least one marker before moving on`;
    return { ok: false, message: view.notice };
  }
  view.notice = "";
  view.cursor += 1;
  return { ok: true };
}

export function toggleMarker(view: TraceView, cardPos: number, markerId: string): void {
  const card = view.cards[cardPos];
  if (card === undefined || !card.annotatable) return;
  const at = card.markerIds.indexOf(markerId);
  if (at >= 0) card.markerIds.splice(at, 1);
  else card.markerIds.push(markerId);
  view.notice = "";
}

export function setNote(view: TraceView, cardPos: number, note: string): void {
  const card = view.cards[cardPos];
  if (card === undefined || !card.annotatable) return;
  card.note = note;
}

/** Message indices whose cards still need a marker before submission. */
export function completenessGaps(view: TraceView): number[] {
  return view.cards
    .filter((card) => card.annotatable && card.markerIds.length === 0)
    .map((card) => card.index);
}

/** Wire document for the current state; nodes are keyed by message index. */
export function annotationDoc(view: TraceView, submitted: boolean): AnnotationDoc {
  const nodes: Record<string, NodeMarksDoc> = {};
  for (const card of view.cards) {
    if (card.markerIds.length === 0 && card.note.trim() === "") continue;
    const entry: NodeMarksDoc = { marker_ids: [...card.markerIds] };
    if (card.note.trim() !== "") entry.note = card.note;
    nodes[String(card.index)] = entry;
  }
  const doc: AnnotationDoc = {
    trace_id: view.trace.trace_id,
    annotator_id: view.annotatorId,
    submitted,
    nodes,
  };
  if (view.traceNote.trim() !== "") doc.trace_note = view.traceNote;
  return doc;
}

export type SaveOutcome =
  | { status: "saved"; revision: number }
  | { status: "submitted"; revision: number }
  /** Local gate: nothing was sent to the server. */
  | { status: "blocked"; gaps: number[] }
  /** Server-side completeness gate (only reachable by bypassing the client). */
  | { status: "incomplete"; gaps: number[]; message: string }
  /** Someone else stored a revision; reload before writing again. */
  | { status: "conflict"; message: string }
  /** Other server validation failure; message is the server's verbatim text. */
  | { status: "rejected"; message: string }
  /** Transport failure; safe to retry. */
  | { status: "network"; message: string };

function mapFailure(view: TraceView, err: unknown): SaveOutcome {
  if (err instanceof NetworkError) {
    view.notice = "request did not reach the server; retry when the connection is back";
    return { status: "network", message: err.message };
  }
  if (err instanceof ApiError) {
    if (err.status === 409) {
      view.notice = `stored annotation moved on (${err.message}); reload before saving again`;
      return { status: "conflict", message: err.message };
    }
    if (err.status === 422) {
      const gaps = completenessGaps(view);
      view.notice = `server rejected the submission: ${err.message}`;
      return { status: "incomplete", gaps, message: err.message };
    }
    view.notice = err.message;
    return { status: "rejected", message: err.message };
  }
  throw err;
}

/** Store the current state as a draft revision. */
export async function saveDraft(view: TraceView, client: ApiClient): Promise<SaveOutcome> {
  try {
    const revision = await client.putAnnotation(annotationDoc(view, false), view.revision);
    view.revision = revision;
    view.submitted = false;
    view.notice = `saved draft revision ${revision}`;
    return { status: "saved", revision };
  } catch (err) {
    return mapFailure(view, err);
  }
}

/**
 * Submit flow: local completeness gate, then PUT the draft, then POST
 * submit. The local gate lists the unmarked message indices and sends
 * nothing; if it is bypassed the server's own check rejects with 422.
 */
export async function submitAnnotation(view: TraceView, client: ApiClient): Promise<SaveOutcome> {
  const gaps = completenessGaps(view);
  if (gaps.length > 0) {
    view.notice = `cannot submit: unmarked messages ${gaps.join(", ")}`;
    return { status: "blocked", gaps };
  }
  try {
    view.revision = await client.putAnnotation(annotationDoc(view, false), view.revision);
    const revision = await client.submitAnnotation(view.trace.trace_id, view.annotatorId);
    view.revision = revision;
    view.submitted = true;
    view.notice = `submitted as revision ${revision}`;
    return { status: "submitted", revision };
  } catch (err) {
    return mapFailure(view, err);
  }
}

/** Graph plus motif hits, with a toggleable highlight per motif. */
export interface GraphOverlay {
  graph: GraphDoc;
  hits: MotifHitDoc[];
  active: Set<string>;
}

export function buildOverlay(graph: GraphDoc, motifs: MotifsDoc): GraphOverlay {
  return { graph, hits: motifs.hits, active: new Set() };
}

export function hitCount(overlay: GraphOverlay, motif: string): number {
  return overlay.hits.filter((hit) => hit.motif === motif).length;
}

/**
 * Toggle the highlight for one motif. Toggling twice restores the
 * previous state; a motif with zero hits is a no-op (its badge already
 * reads 0, there is nothing to emphasize).
 */
export function toggleMotifHighlight(overlay: GraphOverlay, motif: string): void {
  if (overlay.active.has(motif)) overlay.active.delete(motif);
  else if (hitCount(overlay, motif) > 0) overlay.active.add(motif);
}

/**
 * Node ids emphasized by the active motifs. Bindings are intersected
 * with the served graph so every rendered id resolves to a real node.
 */
export function highlightedNodes(overlay: GraphOverlay): Set<string> {
  const known = new Set(overlay.graph.nodes.map((node) => node.node_id));
  const out = new Set<string>();
  for (const hit of overlay.hits) {
    if (!overlay.active.has(hit.motif)) continue;
    for (const nodeId of Object.values(hit.bindings)) {
      if (known.has(nodeId)) out.add(nodeId);
    }
  }
  return out;
}

/** Edges joining two nodes bound by the same active hit, as "src->dst:relation". */
export function highlightedEdges(overlay: GraphOverlay): Set<string> {
  const out = new Set<string>();
  for (const hit of overlay.hits) {
    if (!overlay.active.has(hit.motif)) continue;
    const bound = new Set(Object.values(hit.bindings));
    for (const edge of overlay.graph.edges) {
      if (bound.has(edge.src) && bound.has(edge.dst)) {
        out.add(`${edge.src}->${edge.dst}:${edge.relation}`);
      }
    }
  }
  return out;
}
